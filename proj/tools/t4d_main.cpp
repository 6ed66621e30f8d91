#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "t4d/common.hpp"
#include "t4d/io.hpp"
#include "t4d/models.hpp"
#include "t4d/pipeline.hpp"
#include "t4d/saliency.hpp"
#include "t4d/train.hpp"

using namespace t4d;
namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> parse_size_list(const std::string& s, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": '" + tok + "' is not a count");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
    return out;
}

std::array<std::size_t, 4> parse_dims4(const std::string& s, const char* what) {
    const auto v = parse_size_list(s, what);
    if (v.size() != 4) throw ConfigError(std::string(what) + ": expected 4 comma-separated values");
    return {v[0], v[1], v[2], v[3]};
}

std::pair<double, double> parse_band(const std::string& s) {
    std::stringstream ss(s);
    std::string lo, hi;
    if (!std::getline(ss, lo, ',') || !std::getline(ss, hi, ','))
        throw ConfigError("--band: expected LOW,HIGH in Hz");
    try {
        return {std::stod(lo), std::stod(hi)};
    } catch (const std::exception&) {
        throw ConfigError("--band: '" + s + "' is not a frequency pair");
    }
}

// Run manifests sit next to file outputs as <file>.run.json, or inside
// directory outputs as run.json.
void write_manifest_for(const std::string& out_path, bool is_dir, const std::string& command, const json& args) {
    if (is_dir) {
        write_run_manifest(out_path, command, args);
    } else {
        json manifest{{"command", command}, {"args", args}};
        write_text_file(out_path + ".run.json", manifest.dump(2) + "\n");
    }
}

// ---- gen ----

struct GenArgs {
    std::string out;
    std::string geometry = "32,16,16,16";
    std::size_t per_class = 20;
    std::size_t classes = 3;
    std::size_t sessions = 1;
    double noise = 0.1;
    double tr = 3.0;
    std::uint64_t seed = 0;
};

int run_gen(const GenArgs& a) {
    SyntheticConfig cfg;
    cfg.geometry = parse_dims4(a.geometry, "--geometry");
    cfg.num_classes = a.classes;
    cfg.samples_per_class = a.per_class;
    cfg.noise_sigma = a.noise;
    cfg.tr_seconds = a.tr;
    cfg.sessions_per_subject = a.sessions;
    const Dataset ds = generate_synthetic(cfg, a.seed);

    const json op{{"op", "generate_synthetic"},
                  {"geometry", {cfg.geometry[0], cfg.geometry[1], cfg.geometry[2], cfg.geometry[3]}},
                  {"classes", cfg.num_classes},
                  {"samples_per_class", cfg.samples_per_class},
                  {"noise_sigma", cfg.noise_sigma},
                  {"tr_seconds", cfg.tr_seconds},
                  {"sessions_per_subject", cfg.sessions_per_subject},
                  {"seed", a.seed}};
    write_dataset(a.out, ds, json::array({op}));
    write_manifest_for(a.out, true, "gen", op);
    std::cout << "wrote " << ds.samples.size() << " samples to " << a.out << "\n";
    return 0;
}

// ---- preprocess ----

struct PreprocessArgs {
    std::string in, out;
    std::size_t discard = 20;
    std::string band = "0.01,0.1";
    double tr = 3.0;
    double zscore_eps = 1e-8;
};

int run_preprocess(const PreprocessArgs& a) {
    Dataset ds = read_dataset(a.in);
    PreprocessConfig cfg;
    cfg.discard_frames = a.discard;
    const auto band = parse_band(a.band);
    cfg.band_low_hz = band.first;
    cfg.band_high_hz = band.second;
    cfg.tr_seconds = a.tr;
    cfg.zscore_eps = a.zscore_eps;
    cfg.validate();

    for (auto& s : ds.samples) s.volume = preprocess_volume(s.volume, cfg);
    ds.geometry[0] -= cfg.discard_frames;

    json prov = read_dataset_provenance(a.in);
    const json op{{"op", "preprocess"},          {"discard_frames", cfg.discard_frames},
                  {"band_low_hz", cfg.band_low_hz}, {"band_high_hz", cfg.band_high_hz},
                  {"tr_seconds", cfg.tr_seconds},   {"zscore_eps", cfg.zscore_eps}};
    prov.push_back(op);
    write_dataset(a.out, ds, prov);
    write_manifest_for(a.out, true, "preprocess", op);
    std::cout << "preprocessed " << ds.samples.size() << " samples into " << a.out << "\n";
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string data, out;
    std::string model = "4d";
    std::size_t classes = 3;
    std::size_t epochs = 30;
    std::size_t batch = 2;
    double lr = 1e-3;
    double lr_min = 0.0;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    std::size_t folds = 1;
    std::size_t test_per_class = 0;  // 0 = a fifth of the smallest class
    std::string stage_channels = "16,32,64,128";
    std::string stage_depths = "1,1,3,1";
    std::size_t temporal_kernel = 3;
    std::size_t spatial_kernel = 3;
    std::size_t lstm_hidden = 64;
    std::size_t down_kernel = 3;
    bool no_aug = false;
    bool uniform_weights = false;
    std::string log_csv;
};

json epoch_log_to_json(const std::vector<EpochLog>& log) {
    json out = json::array();
    for (const auto& e : log)
        out.push_back(json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"lr", e.lr},
                           {"val_accuracy", e.val_accuracy}});
    return out;
}

int run_train(const TrainArgs& a) {
    const Dataset ds = read_dataset(a.data);
    if (ds.num_classes != a.classes)
        throw ConfigError("dataset declares " + std::to_string(ds.num_classes) + " classes but --classes is " +
                          std::to_string(a.classes));

    ModelConfig mc;
    mc.stage_channels = parse_size_list(a.stage_channels, "--stage-channels");
    mc.stage_depths = parse_size_list(a.stage_depths, "--stage-depths");
    if (mc.stage_channels.size() != 4) throw ConfigError("--stage-channels: expected 4 values");
    mc.stem_channels = mc.stage_channels.front();
    mc.final_channels = mc.stage_channels.back();
    mc.num_classes = a.classes;
    mc.spatial_kernel = a.spatial_kernel;
    mc.temporal_kernel = a.temporal_kernel;
    mc.lstm_hidden = a.lstm_hidden;
    mc.down_kernel = a.down_kernel;
    mc.input_geometry = ds.geometry;
    mc.validate();
    const ModelKind kind = parse_model_kind(a.model);

    std::vector<std::size_t> class_counts(a.classes, 0);
    for (const auto& s : ds.samples) class_counts[static_cast<std::size_t>(s.label)]++;
    std::size_t min_count = ds.samples.size();
    for (std::size_t c : class_counts) min_count = std::min(min_count, c);
    const std::size_t tpc = a.test_per_class ? a.test_per_class : std::max<std::size_t>(1, min_count / 5);
    const SplitPlan plan = make_splits(ds.samples, a.classes, tpc, std::max<std::size_t>(1, a.folds), a.seed);

    // Inverse-frequency weights over the training split: w_c = total / count_c.
    LossSpec loss = LossSpec::uniform(a.classes);
    if (!a.uniform_weights) {
        std::vector<std::size_t> train_counts(a.classes, 0);
        for (std::size_t i : plan.train_indices) train_counts[static_cast<std::size_t>(ds.samples[i].label)]++;
        for (std::size_t c = 0; c < a.classes; ++c) {
            if (train_counts[c] == 0)
                throw SplitError("train: class " + std::to_string(c) + " has no training samples");
            loss.class_weights[c] =
                static_cast<double>(plan.train_indices.size()) / static_cast<double>(train_counts[c]);
        }
    }

    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.opt.weight_decay = a.weight_decay;
    tc.schedule.lr_max = a.lr;
    tc.schedule.lr_min = a.lr_min;
    tc.loss = loss;
    tc.augment = !a.no_aug;
    tc.seed = a.seed;

    std::unique_ptr<Model<float>> model;
    json log_json;
    std::size_t chosen_epoch = a.epochs;
    if (plan.folds <= 1) {
        model = make_model<float>(kind, mc, a.seed);
        const auto res = train_loop(*model, ds.samples, plan, plan.folds, tc);
        restore_parameters(*model, res.best_params);
        log_json = epoch_log_to_json(res.log);
        for (const auto& e : res.log)
            std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " lr " << e.lr << "\n";
    } else {
        // Fold-averaged validation accuracy picks the epoch; fold 0 is then
        // retrained for exactly that many epochs under the full-length
        // schedule, reproducing its first-pass trajectory.
        std::vector<std::vector<double>> val_acc(plan.folds);
        std::vector<TrainResult<float>> results;
        for (std::size_t f = 0; f < plan.folds; ++f) {
            auto fold_model = make_model<float>(kind, mc, a.seed);
            auto res = train_loop(*fold_model, ds.samples, plan, f, tc);
            for (const auto& e : res.log) val_acc[f].push_back(e.val_accuracy);
            std::cout << "fold " << f << " best val accuracy " << res.best_val_accuracy << " at epoch "
                      << res.best_epoch << "\n";
            results.push_back(std::move(res));
        }
        double best_mean = -1;
        for (std::size_t e = 0; e < a.epochs; ++e) {
            double mean = 0;
            for (std::size_t f = 0; f < plan.folds; ++f) mean += val_acc[f][e];
            mean /= static_cast<double>(plan.folds);
            if (mean > best_mean) {
                best_mean = mean;
                chosen_epoch = e + 1;
            }
        }
        std::cout << "fold-averaged best epoch " << chosen_epoch << " (val accuracy " << best_mean << ")\n";

        std::size_t fold0_train = 0;
        for (std::size_t j = 0; j < plan.train_indices.size(); ++j)
            if (static_cast<std::size_t>(plan.fold_of[j]) != 0) ++fold0_train;
        const std::size_t steps_per_epoch = (fold0_train + tc.batch_size - 1) / tc.batch_size;
        TrainConfig rerun = tc;
        rerun.epochs = chosen_epoch;
        rerun.schedule.total_steps = a.epochs * steps_per_epoch;
        model = make_model<float>(kind, mc, a.seed);
        train_loop(*model, ds.samples, plan, 0, rerun);

        log_json = json::array();
        for (std::size_t e = 0; e < a.epochs; ++e) {
            double mean = 0;
            for (std::size_t f = 0; f < plan.folds; ++f) mean += val_acc[f][e];
            log_json.push_back(json{{"epoch", e + 1},
                                    {"train_loss", results[0].log[e].train_loss},
                                    {"lr", results[0].log[e].lr},
                                    {"val_accuracy", mean / static_cast<double>(plan.folds)}});
        }
    }

    const EvalReport report = evaluate(*model, ds.samples, plan.test_indices, tc.batch_size);
    std::cout << report_to_table(report);

    json args{{"data", a.data},
              {"model", a.model},
              {"classes", a.classes},
              {"epochs", a.epochs},
              {"batch", a.batch},
              {"lr", a.lr},
              {"lr_min", a.lr_min},
              {"weight_decay", a.weight_decay},
              {"seed", a.seed},
              {"folds", plan.folds},
              {"test_per_class", tpc},
              {"augment", tc.augment},
              {"class_weights", loss.class_weights}};
    json extra{{"epoch_log", log_json},
               {"split", split_to_json(plan)},
               {"chosen_epoch", chosen_epoch},
               {"train_args", args},
               {"test_report", report_to_json(report)}};
    save_checkpoint(a.out, *model, extra);
    write_manifest_for(a.out, false, "train", args);

    if (!a.log_csv.empty()) {
        std::vector<std::vector<double>> rows;
        for (const auto& e : log_json)
            rows.push_back({e.at("epoch").get<double>(), e.at("train_loss").get<double>(), e.at("lr").get<double>(),
                            e.at("val_accuracy").get<double>()});
        write_series_csv(a.log_csv, {"epoch", "train_loss", "lr", "val_accuracy"}, rows);
    }
    std::cout << "saved checkpoint " << a.out << "\n";
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string ckpt, data, split = "test", out;
    std::size_t batch = 2;
};

int run_eval(const EvalArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    const Dataset ds = read_dataset(a.data);
    if (ck.config.num_classes != ds.num_classes)
        throw ConfigError("checkpoint expects " + std::to_string(ck.config.num_classes) +
                          " classes, dataset declares " + std::to_string(ds.num_classes));
    if (ck.config.input_geometry != ds.geometry)
        throw ConfigError("checkpoint geometry does not match dataset geometry");

    std::vector<std::size_t> ids;
    if (a.split == "all") {
        for (std::size_t i = 0; i < ds.samples.size(); ++i) ids.push_back(i);
    } else if (a.split == "test" || a.split == "train") {
        if (!ck.header.contains("split"))
            throw ConfigError("checkpoint carries no split; use --split all");
        const SplitPlan plan = split_from_json(ck.header.at("split"));
        ids = (a.split == "test") ? plan.test_indices : plan.train_indices;
        for (std::size_t i : ids)
            if (i >= ds.samples.size())
                throw ConfigError("checkpoint split index " + std::to_string(i) + " outside dataset");
    } else {
        throw ConfigError("--split must be test, train, or all");
    }

    const EvalReport report = evaluate(*ck.model, ds.samples, ids, a.batch);
    std::cout << report_to_table(report);
    if (!a.out.empty()) {
        write_text_file(a.out, json{{"split", a.split}, {"report", report_to_json(report)}}.dump(2) + "\n");
        write_manifest_for(a.out, false, "eval",
                           json{{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split}, {"batch", a.batch}});
    }
    return 0;
}

// ---- saliency ----

struct SaliencyArgs {
    std::string ckpt, sample, data, roi, out;
    std::int64_t index = -1;
    std::int64_t target = -1;  // -1 = predicted class
    std::string layer;
    std::string method = "gradcampp";
};

int run_saliency(const SaliencyArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Tensor<float> vol;
    if (!a.sample.empty()) {
        vol = read_t4d(a.sample);
        if (vol.shape.rank() == 4)
            vol = reshape(vol, Shape{1, vol.shape[0], vol.shape[1], vol.shape[2], vol.shape[3]});
        if (vol.shape.rank() != 5) throw ConfigError("--sample: expected a (1,T,X,Y,Z) or (T,X,Y,Z) volume");
    } else if (!a.data.empty()) {
        if (a.index < 0) throw ConfigError("--data requires --index");
        const Dataset ds = read_dataset(a.data);
        if (static_cast<std::size_t>(a.index) >= ds.samples.size())
            throw ConfigError("--index outside dataset of " + std::to_string(ds.samples.size()) + " samples");
        vol = ds.samples[static_cast<std::size_t>(a.index)].volume;
    } else {
        throw ConfigError("saliency needs --sample FILE or --data DIR --index I");
    }

    const auto& g = ck.config.input_geometry;
    if (vol.shape != Shape({1, g[0], g[1], g[2], g[3]}))
        throw ConfigError("sample volume " + vol.shape.str() + " does not match checkpoint geometry");
    const Tensor<float> x = reshape(vol, Shape{1, 1, g[0], g[1], g[2], g[3]});

    std::size_t target;
    if (a.target >= 0) {
        target = static_cast<std::size_t>(a.target);
    } else {
        const auto logits = ck.model->forward(x, false);
        target = 0;
        for (std::size_t j = 1; j < ck.config.num_classes; ++j)
            if (logits.ptr()[j] > logits.ptr()[target]) target = j;
    }
    const std::string layer = a.layer.empty() ? default_saliency_layer(ck.config) : a.layer;
    CamMethod method;
    if (a.method == "gradcampp")
        method = CamMethod::gradcampp;
    else if (a.method == "gradcam")
        method = CamMethod::gradcam;
    else
        throw ConfigError("--method must be gradcampp or gradcam");

    const auto res = gradcampp_4d(*ck.model, x, target, layer, method);
    fs::create_directories(a.out);
    write_t4d((fs::path(a.out) / "map4d.t4d").string(), res.map4d);
    write_t4d((fs::path(a.out) / "upsampled.t4d").string(), res.upsampled);
    std::vector<std::vector<double>> rows;
    for (std::size_t t = 0; t < res.temporal_signal.shape[0]; ++t)
        rows.push_back({static_cast<double>(t), res.temporal_signal.ptr()[t]});
    write_series_csv((fs::path(a.out) / "temporal_signal.csv").string(), {"t", "saliency"}, rows);

    if (!a.roi.empty()) {
        const auto mask = read_t4d(a.roi);
        const auto sig = temporal_saliency_with_roi(res, mask, x);
        std::vector<std::vector<double>> roi_rows;
        for (std::size_t t = 0; t < sig.roi_bold.shape[0]; ++t)
            roi_rows.push_back({static_cast<double>(t), sig.roi_bold.ptr()[t], sig.roi_saliency.ptr()[t]});
        write_series_csv((fs::path(a.out) / "roi_signals.csv").string(), {"t", "roi_bold", "roi_saliency"},
                         roi_rows);
    }
    write_manifest_for(a.out, true, "saliency",
                       json{{"ckpt", a.ckpt},
                            {"sample", a.sample},
                            {"data", a.data},
                            {"index", a.index},
                            {"target_class", target},
                            {"layer", layer},
                            {"method", a.method},
                            {"roi", a.roi}});
    std::cout << "saliency for class " << target << " at layer " << layer << " written to " << a.out << "\n";
    return 0;
}

// ---- kernels ----

struct KernelsArgs {
    std::string ckpt, out, channels;
    std::size_t offsets = 3;
    std::uint64_t seed = 0;
};

int run_kernels(const KernelsArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    const auto& w = ck.model->conv_layers().front()->params.weight;
    std::vector<std::size_t> channels;
    if (a.channels.empty()) {
        for (std::size_t c = 0; c < std::min<std::size_t>(8, w.shape[0]); ++c) channels.push_back(c);
    } else {
        channels = parse_size_list(a.channels, "--channels");
    }
    const auto views = extract_first_layer_kernels(*ck.model, channels, a.offsets, a.seed);

    std::ostringstream csv;
    csv << "channel,dx,dy,dz,tag";
    for (std::size_t dt = 0; dt < w.shape[2]; ++dt) csv << ",w" << dt;
    csv << "\n";
    csv.precision(10);
    std::size_t tags[3] = {0, 0, 0};
    for (const auto& v : views) {
        csv << v.channel << "," << v.offset[0] << "," << v.offset[1] << "," << v.offset[2] << ","
            << kernel_tag_name(v.tag);
        for (std::size_t dt = 0; dt < v.profile.shape[0]; ++dt) csv << "," << v.profile.ptr()[dt];
        csv << "\n";
        tags[static_cast<std::size_t>(v.tag)]++;
    }
    fs::create_directories(a.out);
    write_text_file((fs::path(a.out) / "kernels.csv").string(), csv.str());
    write_manifest_for(a.out, true, "kernels",
                       json{{"ckpt", a.ckpt}, {"channels", channels}, {"offsets", a.offsets}, {"seed", a.seed}});
    std::cout << views.size() << " profiles: " << tags[0] << " derivative, " << tags[1] << " averaging, " << tags[2]
              << " other; written to " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"4D spatiotemporal CNN toolkit for fMRI-style volumes"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic labeled dataset");
    gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();
    gen_cmd->add_option("--geometry", gen.geometry, "T,X,Y,Z extents");
    gen_cmd->add_option("--per-class", gen.per_class, "Samples per class");
    gen_cmd->add_option("--classes", gen.classes, "Number of classes (1-3)");
    gen_cmd->add_option("--sessions-per-subject", gen.sessions, "Sessions grouped under one subject");
    gen_cmd->add_option("--noise", gen.noise, "Gaussian noise sigma");
    gen_cmd->add_option("--tr", gen.tr, "Repetition time in seconds");
    gen_cmd->add_option("--seed", gen.seed, "RNG seed");

    PreprocessArgs pre;
    auto* pre_cmd = app.add_subcommand("preprocess", "Discard, bandpass, and z-score a dataset");
    pre_cmd->add_option("--in", pre.in, "Input dataset directory")->required();
    pre_cmd->add_option("--out", pre.out, "Output dataset directory")->required();
    pre_cmd->add_option("--discard", pre.discard, "Leading frames to drop");
    pre_cmd->add_option("--band", pre.band, "LOW,HIGH passband in Hz");
    pre_cmd->add_option("--tr", pre.tr, "Repetition time in seconds");
    pre_cmd->add_option("--zscore-eps", pre.zscore_eps, "Epsilon added to sigma");

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "Train a model and save a checkpoint");
    tr_cmd->add_option("--data", tr.data, "Dataset directory")->required();
    tr_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
    tr_cmd->add_option("--model", tr.model, "4d | 3d-lstm | 3d-chan");
    tr_cmd->add_option("--classes", tr.classes, "Number of classes");
    tr_cmd->add_option("--epochs", tr.epochs, "Training epochs");
    tr_cmd->add_option("--batch", tr.batch, "Batch size");
    tr_cmd->add_option("--lr", tr.lr, "Peak learning rate");
    tr_cmd->add_option("--lr-min", tr.lr_min, "Final learning rate");
    tr_cmd->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay");
    tr_cmd->add_option("--seed", tr.seed, "RNG seed");
    tr_cmd->add_option("--folds", tr.folds, "Cross-validation folds over the train split");
    tr_cmd->add_option("--test-per-class", tr.test_per_class, "Held-out test samples per class (0 = auto)");
    tr_cmd->add_option("--stage-channels", tr.stage_channels, "4 stage widths");
    tr_cmd->add_option("--stage-depths", tr.stage_depths, "4 stage depths");
    tr_cmd->add_option("--temporal-kernel", tr.temporal_kernel, "Temporal kernel extent (Model A)");
    tr_cmd->add_option("--spatial-kernel", tr.spatial_kernel, "Spatial kernel extent");
    tr_cmd->add_option("--lstm-hidden", tr.lstm_hidden, "LSTM hidden size (Model B)");
    tr_cmd->add_option("--down-kernel", tr.down_kernel, "Stem/transition kernel (2 or 3)");
    tr_cmd->add_flag("--no-aug", tr.no_aug, "Disable circular time-shift augmentation");
    tr_cmd->add_flag("--uniform-weights", tr.uniform_weights, "Uniform instead of inverse-frequency loss weights");
    tr_cmd->add_option("--log", tr.log_csv, "Also write the epoch log as CSV");

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    ev_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
    ev_cmd->add_option("--data", ev.data, "Dataset directory")->required();
    ev_cmd->add_option("--split", ev.split, "test | train | all");
    ev_cmd->add_option("--batch", ev.batch, "Batch size");
    ev_cmd->add_option("--out", ev.out, "Write the report as JSON");

    SaliencyArgs sal;
    auto* sal_cmd = app.add_subcommand("saliency", "Grad-CAM++ maps and temporal signals");
    sal_cmd->add_option("--ckpt", sal.ckpt, "Checkpoint path")->required();
    sal_cmd->add_option("--sample", sal.sample, "Single volume file (t4d)");
    sal_cmd->add_option("--data", sal.data, "Dataset directory (with --index)");
    sal_cmd->add_option("--index", sal.index, "Sample index within --data");
    sal_cmd->add_option("--class", sal.target, "Target class (-1 = predicted)");
    sal_cmd->add_option("--layer", sal.layer, "Conv layer name (default: last stage-3 conv)");
    sal_cmd->add_option("--method", sal.method, "gradcampp | gradcam");
    sal_cmd->add_option("--roi", sal.roi, "Binary (X,Y,Z) mask volume (t4d)");
    sal_cmd->add_option("--out", sal.out, "Output directory")->required();

    KernelsArgs ker;
    auto* ker_cmd = app.add_subcommand("kernels", "Extract first-layer temporal kernel profiles");
    ker_cmd->add_option("--ckpt", ker.ckpt, "Checkpoint path")->required();
    ker_cmd->add_option("--channels", ker.channels, "Channel list (default: first 8)");
    ker_cmd->add_option("--offsets", ker.offsets, "Random spatial offsets per channel");
    ker_cmd->add_option("--seed", ker.seed, "Offset selection seed");
    ker_cmd->add_option("--out", ker.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen);
        if (pre_cmd->parsed()) return run_preprocess(pre);
        if (tr_cmd->parsed()) return run_train(tr);
        if (ev_cmd->parsed()) return run_eval(ev);
        if (sal_cmd->parsed()) return run_saliency(sal);
        if (ker_cmd->parsed()) return run_kernels(ker);
        std::cerr << app.help();
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
