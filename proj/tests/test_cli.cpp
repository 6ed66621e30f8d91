// End-to-end tests for the t4d command line tool. Each case shells out to the
// built binary (path injected by CMake as T4D_CLI) inside a scratch directory.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "t4d/io.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("t4d_cli_" + std::to_string(rd()) + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const char* leaf) const { return (path / leaf).string(); }
};

int run(const std::string& args) {
    const std::string cmd = std::string(T4D_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::vector<unsigned char> slurp(const std::string& path) { return t4d::read_file_bytes(path); }

const std::string kTinyModel =
    " --classes 3 --epochs 2 --batch 4 --stage-channels 4,8,8,16 --stage-depths 1,1,1,1 --lstm-hidden 8 --seed 1";

}  // namespace

TEST_CASE("cli: gen, preprocess, train, eval round trip") {
    TempDir d;
    REQUIRE(run("gen --out " + (d / "raw") + " --geometry 28,8,8,8 --per-class 12 --noise 0.05 --seed 3") == 0);
    REQUIRE(fs::exists(d.path / "raw" / "manifest.json"));
    REQUIRE(fs::exists(d.path / "raw" / "run.json"));

    REQUIRE(run("preprocess --in " + (d / "raw") + " --out " + (d / "prep") + " --discard 4 --band 0.01,0.1 --tr 3") ==
            0);
    const t4d::Dataset prep = t4d::read_dataset(d / "prep");
    CHECK(prep.geometry[0] == 24);
    CHECK(prep.samples.size() == 36);
    const t4d::json prov = t4d::read_dataset_provenance(d / "prep");
    REQUIRE(prov.size() == 2);
    CHECK(prov[1].at("op") == "preprocess");

    REQUIRE(run("train --data " + (d / "prep") + " --out " + (d / "model.t4dc") + " --model 4d" + kTinyModel +
                " --log " + (d / "log.csv")) == 0);
    REQUIRE(fs::exists(d.path / "model.t4dc"));
    REQUIRE(fs::exists(d.path / "model.t4dc.run.json"));

    // The epoch log CSV has the promised single header line.
    std::ifstream log(d / "log.csv");
    std::string header;
    REQUIRE(std::getline(log, header));
    CHECK(header == "epoch,train_loss,lr,val_accuracy");
    std::size_t rows = 0;
    for (std::string line; std::getline(log, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 2);

    const t4d::Checkpoint ck = t4d::load_checkpoint(d / "model.t4dc");
    CHECK(ck.header.at("epoch_log").size() == 2);
    CHECK(ck.header.contains("split"));
    CHECK(ck.header.at("test_report").at("accuracy").is_number());

    REQUIRE(run("eval --ckpt " + (d / "model.t4dc") + " --data " + (d / "prep") + " --split test --out " +
                (d / "report.json")) == 0);
    std::ifstream rf(d / "report.json");
    t4d::json report = t4d::json::parse(rf);
    CHECK(report.at("split") == "test");
    CHECK(report.at("report").at("confusion").size() == 3);
    REQUIRE(run("eval --ckpt " + (d / "model.t4dc") + " --data " + (d / "prep") + " --split all") == 0);
}

TEST_CASE("cli: same seed twice gives a bitwise identical checkpoint") {
    TempDir d;
    REQUIRE(run("gen --out " + (d / "raw") + " --geometry 20,8,8,8 --per-class 8 --noise 0.05 --seed 5") == 0);
    REQUIRE(run("train --data " + (d / "raw") + " --out " + (d / "a.t4dc") + " --model 3d-chan" + kTinyModel) == 0);
    REQUIRE(run("train --data " + (d / "raw") + " --out " + (d / "b.t4dc") + " --model 3d-chan" + kTinyModel) == 0);
    CHECK(slurp(d / "a.t4dc") == slurp(d / "b.t4dc"));
}

TEST_CASE("cli: usage errors exit 1") {
    CHECK(run("") == 1);
    CHECK(run("bogus") == 1);
    CHECK(run("train --data x") == 1);        // missing required --out
    CHECK(run("gen --out /tmp/x --zap 3") == 1);  // unknown flag
    CHECK(run("--help") == 0);
}

TEST_CASE("cli: data and config errors exit 2") {
    TempDir d;
    REQUIRE(run("gen --out " + (d / "three") + " --geometry 20,8,8,8 --per-class 8 --classes 3 --seed 2") == 0);
    REQUIRE(run("gen --out " + (d / "two") + " --geometry 20,8,8,8 --per-class 8 --classes 2 --seed 2") == 0);
    REQUIRE(run("train --data " + (d / "three") + " --out " + (d / "m.t4dc") + " --model 4d" + kTinyModel) == 0);

    // Class count mismatch is reported explicitly, not as a shape accident.
    CHECK(run("eval --ckpt " + (d / "m.t4dc") + " --data " + (d / "two") + " --split all") == 2);
    CHECK(run("eval --ckpt " + (d / "m.t4dc") + " --data " + (d / "missing")) == 2);
    CHECK(run("eval --ckpt " + (d / "nope.t4dc") + " --data " + (d / "three")) == 2);
    CHECK(run("train --data " + (d / "three") + " --out " + (d / "x.t4dc") + " --classes 2 --epochs 1") == 2);
    CHECK(run("preprocess --in " + (d / "three") + " --out " + (d / "p") + " --band 0.2,0.1") == 2);
    CHECK(run("gen --out " + (d / "g") + " --geometry 8,8,8") == 2);
}

TEST_CASE("cli: saliency and kernels write their artifacts") {
    TempDir d;
    REQUIRE(run("gen --out " + (d / "raw") + " --geometry 20,8,8,8 --per-class 8 --noise 0.05 --seed 7") == 0);
    REQUIRE(run("train --data " + (d / "raw") + " --out " + (d / "m.t4dc") + " --model 4d" + kTinyModel) == 0);

    REQUIRE(run("saliency --ckpt " + (d / "m.t4dc") + " --data " + (d / "raw") + " --index 0 --out " + (d / "sal")) ==
            0);
    const auto up = t4d::read_t4d(d.path / "sal" / "upsampled.t4d");
    REQUIRE(up.shape.rank() == 4);
    CHECK(up.shape[0] == 20);
    CHECK(up.shape[1] == 8);
    const auto map = t4d::read_t4d(d.path / "sal" / "map4d.t4d");
    CHECK(map.shape.rank() == 4);
    std::ifstream sig(d.path / "sal" / "temporal_signal.csv");
    std::string header;
    REQUIRE(std::getline(sig, header));
    CHECK(header == "t,saliency");

    // A full-volume ROI adds the roi_signals series.
    auto mask = t4d::full<float>(t4d::Shape{8, 8, 8}, 1.0f);
    t4d::write_t4d(d / "mask.t4d", mask);
    REQUIRE(run("saliency --ckpt " + (d / "m.t4dc") + " --data " + (d / "raw") + " --index 1 --class 2 --roi " +
                (d / "mask.t4d") + " --out " + (d / "sal2")) == 0);
    CHECK(fs::exists(d.path / "sal2" / "roi_signals.csv"));

    CHECK(run("saliency --ckpt " + (d / "m.t4dc") + " --data " + (d / "raw") + " --index 999 --out " + (d / "x")) ==
          2);
    CHECK(run("saliency --ckpt " + (d / "m.t4dc") + " --out " + (d / "x")) == 2);

    REQUIRE(run("kernels --ckpt " + (d / "m.t4dc") + " --channels 0,1 --offsets 2 --seed 4 --out " + (d / "kern")) ==
            0);
    std::ifstream csv(d.path / "kern" / "kernels.csv");
    REQUIRE(std::getline(csv, header));
    CHECK(header == "channel,dx,dy,dz,tag,w0,w1,w2");
    std::size_t rows = 0;
    for (std::string line; std::getline(csv, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 4);  // 2 channels x 2 offsets
}

TEST_CASE("cli: k-fold training stores the fold-averaged epoch choice") {
    TempDir d;
    REQUIRE(run("gen --out " + (d / "raw") + " --geometry 20,8,8,8 --per-class 10 --noise 0.05 --seed 11") == 0);
    REQUIRE(run("train --data " + (d / "raw") + " --out " + (d / "m.t4dc") + " --model 4d --folds 2" + kTinyModel) ==
            0);
    const t4d::Checkpoint ck = t4d::load_checkpoint(d / "m.t4dc");
    const std::size_t chosen = ck.header.at("chosen_epoch").get<std::size_t>();
    CHECK(chosen >= 1);
    CHECK(chosen <= 2);
    CHECK(ck.header.at("train_args").at("folds").get<std::size_t>() == 2);
}
