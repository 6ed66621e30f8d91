#include "t4d/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace t4d {

namespace fs = std::filesystem;

namespace {

constexpr char kTensorMagic[4] = {'T', '4', 'D', '1'};
constexpr char kCheckpointMagic[4] = {'T', '4', 'D', 'C'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// Decodes one tensor blob at data[0..size); tolerates trailing bytes and
// reports how many bytes the blob consumed. `base` offsets error positions
// for blobs embedded inside container files.
Tensor<float> decode_t4d_prefix(const std::uint8_t* data, std::size_t size, std::size_t base,
                                std::size_t* consumed) {
    if (size < 8) throw ParseError("t4d: file too short for header", base);
    if (std::memcmp(data, kTensorMagic, 4) != 0) throw ParseError("t4d: bad magic", base);
    const std::uint16_t version = get_u16(data + 4);
    if (version != kVersion)
        throw ParseError("t4d: unsupported version " + std::to_string(version), base + 4);
    if (data[6] != 0) throw ParseError("t4d: unsupported dtype code " + std::to_string(data[6]), base + 6);
    const std::size_t ndim = data[7];
    if (ndim > 6) throw ParseError("t4d: rank " + std::to_string(ndim) + " exceeds limit 6", base + 7);
    if (size < 8 + 4 * ndim) throw ParseError("t4d: truncated dimension list", base + 8);

    std::vector<std::size_t> dims(ndim);
    std::size_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = get_u32(data + 8 + 4 * i);
        if (d == 0) throw ParseError("t4d: zero extent in dimension " + std::to_string(i), base + 8 + 4 * i);
        if (count > (std::size_t{1} << 40) / d)
            throw ParseError("t4d: element count overflows sanity bound", base + 8 + 4 * i);
        count *= d;
        dims[i] = d;
    }
    const std::size_t header = 8 + 4 * ndim;
    const std::size_t payload = 4 * count;
    if (size - header < payload)
        throw ParseError("t4d: truncated payload: expects " + std::to_string(payload) + " bytes, found " +
                             std::to_string(size - header),
                         base + header);

    Tensor<float> t{Shape(dims)};
    std::memcpy(t.ptr(), data + header, payload);
    if (consumed) *consumed = header + payload;
    return t;
}

std::string sample_file_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu.t4d", index);
    return std::string("samples/") + buf;
}

json meta_to_json(const SyntheticMeta& m) {
    return json{{"label", m.label},
                {"center", {m.center[0], m.center[1], m.center[2]}},
                {"drift", {m.drift[0], m.drift[1], m.drift[2]}},
                {"freq_hz", m.freq_hz},
                {"phase", m.phase},
                {"amplitude", m.amplitude}};
}

SyntheticMeta meta_from_json(const json& j) {
    SyntheticMeta m;
    m.label = j.at("label").get<int>();
    for (int a = 0; a < 3; ++a) {
        m.center[static_cast<std::size_t>(a)] = j.at("center").at(a).get<double>();
        m.drift[static_cast<std::size_t>(a)] = j.at("drift").at(a).get<double>();
    }
    m.freq_hz = j.at("freq_hz").get<double>();
    m.phase = j.at("phase").get<double>();
    m.amplitude = j.at("amplitude").get<double>();
    return m;
}

json parse_json_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw IoError(path + ": invalid JSON: " + e.what());
    }
}

}  // namespace

std::vector<std::uint8_t> encode_t4d(const Tensor<float>& t) {
    t.shape.validate();
    std::vector<std::uint8_t> out;
    const std::size_t count = t.shape.count();
    out.reserve(8 + 4 * t.shape.rank() + 4 * count);
    out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
    put_u16(out, kVersion);
    out.push_back(0);  // dtype float32
    out.push_back(static_cast<std::uint8_t>(t.shape.rank()));
    for (std::size_t i = 0; i < t.shape.rank(); ++i) {
        if (t.shape[i] > 0xffffffffull) throw IoError("t4d: dimension exceeds u32 range");
        put_u32(out, static_cast<std::uint32_t>(t.shape[i]));
    }
    const std::size_t header = out.size();
    out.resize(header + 4 * count);
    std::memcpy(out.data() + header, t.ptr(), 4 * count);
    return out;
}

Tensor<float> decode_t4d(const std::uint8_t* data, std::size_t size) {
    std::size_t consumed = 0;
    Tensor<float> t = decode_t4d_prefix(data, size, 0, &consumed);
    if (consumed != size)
        throw ParseError("t4d: " + std::to_string(size - consumed) + " trailing bytes after payload", consumed);
    return t;
}

void write_t4d(const std::string& path, const Tensor<float>& t) {
    const auto bytes = encode_t4d(t);
    write_file_bytes(path, bytes.data(), bytes.size());
}

Tensor<float> read_t4d(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_t4d(bytes.data(), bytes.size());
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.byte_offset);
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
    if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!in) throw IoError("short read: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::uint8_t* data, std::size_t size) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write: " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
    write_file_bytes(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

void write_series_csv(const std::string& path, const std::vector<std::string>& columns,
                      const std::vector<std::vector<double>>& rows) {
    std::ostringstream out;
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << "\n";
    out.precision(10);
    for (const auto& row : rows) {
        if (row.size() != columns.size()) throw ShapeError("csv: row width does not match header");
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
        out << "\n";
    }
    write_text_file(path, out.str());
}

void write_dataset(const std::string& dir, const Dataset& ds, const json& provenance) {
    fs::create_directories(fs::path(dir) / "samples");
    json manifest;
    manifest["geometry"] = {ds.geometry[0], ds.geometry[1], ds.geometry[2], ds.geometry[3]};
    manifest["num_classes"] = ds.num_classes;
    manifest["provenance"] = provenance.is_null() ? json::array() : provenance;
    json entries = json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        const Shape want{1, ds.geometry[0], ds.geometry[1], ds.geometry[2], ds.geometry[3]};
        if (s.volume.shape != want)
            throw ShapeError("dataset: sample " + std::to_string(i) + " volume " + s.volume.shape.str() +
                             " does not match geometry " + want.str());
        const std::string file = sample_file_name(i);
        write_t4d((fs::path(dir) / file).string(), s.volume);
        entries.push_back(json{{"file", file},
                               {"label", s.label},
                               {"subject_id", s.subject_id},
                               {"session_id", s.session_id}});
    }
    manifest["samples"] = std::move(entries);
    if (!ds.meta.empty()) {
        json metas = json::array();
        for (const auto& m : ds.meta) metas.push_back(meta_to_json(m));
        manifest["synthetic_meta"] = std::move(metas);
    }
    write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

Dataset read_dataset(const std::string& dir) {
    const json manifest = parse_json_file((fs::path(dir) / "manifest.json").string());
    Dataset ds;
    try {
        for (int a = 0; a < 4; ++a)
            ds.geometry[static_cast<std::size_t>(a)] = manifest.at("geometry").at(a).get<std::size_t>();
        ds.num_classes = manifest.at("num_classes").get<std::size_t>();
        const Shape want{1, ds.geometry[0], ds.geometry[1], ds.geometry[2], ds.geometry[3]};
        for (const auto& e : manifest.at("samples")) {
            Sample s;
            s.label = e.at("label").get<int>();
            s.subject_id = e.at("subject_id").get<std::string>();
            s.session_id = e.at("session_id").get<std::string>();
            if (s.label < 0 || static_cast<std::size_t>(s.label) >= ds.num_classes)
                throw IoError(dir + ": label " + std::to_string(s.label) + " outside declared " +
                              std::to_string(ds.num_classes) + " classes");
            s.volume = read_t4d((fs::path(dir) / e.at("file").get<std::string>()).string());
            if (s.volume.shape != want)
                throw IoError(dir + ": sample volume " + s.volume.shape.str() + " does not match geometry " +
                              want.str());
            ds.samples.push_back(std::move(s));
        }
        if (manifest.contains("synthetic_meta"))
            for (const auto& m : manifest.at("synthetic_meta")) ds.meta.push_back(meta_from_json(m));
    } catch (const json::exception& e) {
        throw IoError(dir + ": malformed manifest: " + e.what());
    }
    if (!ds.meta.empty() && ds.meta.size() != ds.samples.size())
        throw IoError(dir + ": synthetic_meta count does not match sample count");
    return ds;
}

json read_dataset_provenance(const std::string& dir) {
    const json manifest = parse_json_file((fs::path(dir) / "manifest.json").string());
    return manifest.value("provenance", json::array());
}

json config_to_json(const ModelConfig& cfg) {
    return json{{"stage_depths", cfg.stage_depths},
                {"stem_channels", cfg.stem_channels},
                {"stage_channels", cfg.stage_channels},
                {"final_channels", cfg.final_channels},
                {"num_classes", cfg.num_classes},
                {"spatial_kernel", cfg.spatial_kernel},
                {"temporal_kernel", cfg.temporal_kernel},
                {"lstm_hidden", cfg.lstm_hidden},
                {"input_geometry", cfg.input_geometry},
                {"down_kernel", cfg.down_kernel}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    try {
        cfg.stage_depths = j.at("stage_depths").get<std::vector<std::size_t>>();
        cfg.stem_channels = j.at("stem_channels").get<std::size_t>();
        cfg.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
        cfg.final_channels = j.at("final_channels").get<std::size_t>();
        cfg.num_classes = j.at("num_classes").get<std::size_t>();
        cfg.spatial_kernel = j.at("spatial_kernel").get<std::size_t>();
        cfg.temporal_kernel = j.at("temporal_kernel").get<std::size_t>();
        cfg.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
        const auto geom = j.at("input_geometry").get<std::vector<std::size_t>>();
        if (geom.size() != 4) throw IoError("config: input_geometry must have 4 entries");
        for (int a = 0; a < 4; ++a) cfg.input_geometry[static_cast<std::size_t>(a)] = geom[static_cast<std::size_t>(a)];
        cfg.down_kernel = j.at("down_kernel").get<std::size_t>();
    } catch (const json::exception& e) {
        throw IoError(std::string("config: malformed JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

json split_to_json(const SplitPlan& plan) {
    return json{{"folds", plan.folds},
                {"train_indices", plan.train_indices},
                {"test_indices", plan.test_indices},
                {"fold_of", plan.fold_of}};
}

SplitPlan split_from_json(const json& j) {
    SplitPlan plan;
    try {
        plan.folds = j.at("folds").get<std::size_t>();
        plan.train_indices = j.at("train_indices").get<std::vector<std::size_t>>();
        plan.test_indices = j.at("test_indices").get<std::vector<std::size_t>>();
        plan.fold_of = j.at("fold_of").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw IoError(std::string("split: malformed JSON: ") + e.what());
    }
    if (plan.fold_of.size() != plan.train_indices.size()) throw IoError("split: fold assignment size mismatch");
    return plan;
}

json report_to_json(const EvalReport& r) {
    json confusion = json::array();
    for (std::size_t i = 0; i < r.num_classes; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < r.num_classes; ++j) row.push_back(r.at(i, j));
        confusion.push_back(std::move(row));
    }
    return json{{"num_classes", r.num_classes},
                {"total", r.total},
                {"confusion", std::move(confusion)},
                {"accuracy", r.accuracy},
                {"sensitivity", r.sensitivity},
                {"specificity", r.specificity},
                {"per_class_sensitivity", r.per_class_sensitivity},
                {"per_class_specificity", r.per_class_specificity}};
}

std::string report_to_table(const EvalReport& r) {
    std::ostringstream out;
    out.precision(4);
    out << "samples:     " << r.total << "\n";
    out << "accuracy:    " << r.accuracy << "\n";
    out << "sensitivity: " << r.sensitivity << "\n";
    out << "specificity: " << r.specificity << "\n";
    out << "confusion (rows = true class, cols = predicted):\n";
    for (std::size_t i = 0; i < r.num_classes; ++i) {
        out << " ";
        for (std::size_t j = 0; j < r.num_classes; ++j) out << "\t" << r.at(i, j);
        out << "\n";
    }
    out << "per-class sensitivity:";
    for (double v : r.per_class_sensitivity) out << " " << v;
    out << "\nper-class specificity:";
    for (double v : r.per_class_specificity) out << " " << v;
    out << "\n";
    return out.str();
}

void save_checkpoint(const std::string& path, Model<float>& model, const json& extra) {
    json header = extra.is_null() ? json::object() : extra;
    header["kind"] = model_kind_name(model.kind());
    header["config"] = config_to_json(model.config());
    const auto params = model.parameters();
    header["param_count"] = params.size();

    const std::string htext = header.dump();
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(htext.size()));
    out.insert(out.end(), htext.begin(), htext.end());
    for (const Tensor<float>* p : params) {
        const auto blob = encode_t4d(*p);
        out.insert(out.end(), blob.begin(), blob.end());
    }
    write_file_bytes(path, out.data(), out.size());
}

Checkpoint load_checkpoint(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8) throw ParseError(path + ": checkpoint too short", 0);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw ParseError(path + ": bad checkpoint magic", 0);
    const std::size_t hlen = get_u32(bytes.data() + 4);
    if (bytes.size() < 8 + hlen) throw ParseError(path + ": truncated checkpoint header", 8);

    Checkpoint ck;
    try {
        ck.header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::exception& e) {
        throw ParseError(path + ": invalid checkpoint header JSON: " + e.what(), 8);
    }
    try {
        ck.kind = parse_model_kind(ck.header.at("kind").get<std::string>());
        ck.config = config_from_json(ck.header.at("config"));
    } catch (const json::exception& e) {
        throw IoError(path + ": malformed checkpoint header: " + e.what());
    }
    ck.model = make_model<float>(ck.kind, ck.config, 0);

    const auto params = ck.model->parameters();
    const std::size_t declared = ck.header.value("param_count", params.size());
    if (declared != params.size())
        throw IoError(path + ": checkpoint declares " + std::to_string(declared) + " parameters, model has " +
                      std::to_string(params.size()));
    std::size_t off = 8 + hlen;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::size_t consumed = 0;
        Tensor<float> t = decode_t4d_prefix(bytes.data() + off, bytes.size() - off, off, &consumed);
        if (t.shape != params[i]->shape)
            throw IoError(path + ": parameter " + std::to_string(i) + " shape " + t.shape.str() +
                          " does not match model shape " + params[i]->shape.str());
        *params[i] = std::move(t);
        off += consumed;
    }
    if (off != bytes.size())
        throw ParseError(path + ": trailing bytes after last parameter", off);
    return ck;
}

void write_run_manifest(const std::string& dir, const std::string& command, const json& args) {
    fs::create_directories(dir);
    json manifest{{"command", command}, {"args", args}};
    write_text_file((fs::path(dir) / "run.json").string(), manifest.dump(2) + "\n");
}

}  // namespace t4d
