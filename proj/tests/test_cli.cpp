#include "kpe_forge/error.hpp"
#include "kpe_forge/run_config.hpp"

#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace kpeforge;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code{0};
    std::string output;
};

// Runs the CLI with stderr folded into the captured output.
RunResult runCli(const std::string& args) {
    const std::string cmd = std::string(KPE_FORGE_CLI) + " " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string readFile(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small enough that the whole pipeline runs in a few seconds.
constexpr const char* kTinyConfig = R"([dataset]
count = 16
[tokenizers]
codebook_size = 16
code_dim = 8
kmeans_iterations = 5
vq_epochs = 1
[model]
d = 16
heads = 2
depth = 1
[train]
epochs = 2
batch_size = 4
lr = 0.001
[sample]
pool_size = 2
[eval]
max_inputs = 2
[bench]
runs = 1
inputs = 1
warmup = 0
)";

} // namespace

TEST_CASE("run config: defaults, overrides, unknown keys and stable hash") {
    RunConfig rc;
    CHECK(rc.getInt("train.epochs") == 30);
    CHECK(rc.getDouble("train.lr") == 1e-4);
    CHECK(rc.get("model.mode") == "kpe");
    CHECK_THROWS_AS(rc.set("model.nonsense", "1"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[model]\nfoo = 1\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[nowhere]\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("d = 3\n"), ConfigError);

    const RunConfig a = RunConfig::parse("[model]\nd = 32\nheads = 4\n[train]\nepochs = 5\n");
    const RunConfig b = RunConfig::parse("[train]\nepochs = 5\n[model]\nheads = 4\nd = 32\n");
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != rc.hash());
    CHECK(a.hash().size() == 16);
    CHECK(a.hash({"dataset"}) == rc.hash({"dataset"}));
    CHECK(RunConfig::parse(a.dump()).hash() == a.hash());
    RunConfig bad;
    bad.set("train.epochs", "many");
    CHECK_THROWS_AS(bad.getInt("train.epochs"), ConfigError);
    CHECK_THROWS_AS(RunConfig::load("/nonexistent/run.ini"), MissingArtifact);
}

TEST_CASE("cli: full-scale accounting table") {
    const RunResult r = runCli("bench --paper-scale-accounting");
    CHECK(r.code == 0);
    CHECK(r.output.find("256") != std::string::npos);
    CHECK(r.output.find("pose tokens") != std::string::npos);
    CHECK(r.output.find("10.24") != std::string::npos);
}

TEST_CASE("cli: usage errors and missing artifacts") {
    CHECK(runCli("").code == 2);
    CHECK(runCli("train --mode sideways").code == 2);
    const fs::path dir = fs::temp_directory_path() / "kpe_forge_cli_missing";
    fs::remove_all(dir);
    const RunResult r = runCli("eval --out-dir " + dir.string());
    CHECK(r.code == 1);
    CHECK(r.output.find("missing_artifact") != std::string::npos);
    CHECK(r.output.find("dataset") != std::string::npos);
}

TEST_CASE("cli: full pipeline on a tiny config") {
    const fs::path dir = fs::temp_directory_path() / "kpe_forge_cli_pipeline";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg = dir / "tiny.ini";
    std::ofstream(cfg) << kTinyConfig;
    const std::string common = " --config " + cfg.string() + " --out-dir " + (dir / "run").string() + " --seed 7";

    REQUIRE(runCli("dataset" + common).code == 0);
    const std::string manifest = readFile(dir / "run" / "dataset" / "manifest.jsonl");
    REQUIRE(runCli("dataset" + common).code == 0);
    CHECK(readFile(dir / "run" / "dataset" / "manifest.jsonl") == manifest);

    const RunResult early = runCli("train" + common);
    CHECK(early.code == 1);
    CHECK(early.output.find("train-bpe") != std::string::npos);

    REQUIRE(runCli("train-bpe" + common).code == 0);
    REQUIRE(runCli("train-codebook" + common).code == 0);
    REQUIRE(runCli("train --mode kpe" + common).code == 0);
    CHECK(fs::exists(dir / "run" / "models" / "kpe" / "model.ckpt"));
    const std::string lossLog = readFile(dir / "run" / "models" / "kpe" / "loss.csv");
    CHECK(std::count(lossLog.begin(), lossLog.end(), '\n') == 3);

    const RunResult gen = runCli("generate --mode kpe --inputs 2 --samples-per-input 2" + common);
    CHECK(gen.code == 0);
    CHECK(fs::exists(dir / "run" / "generate" / "kpe" / "contact_sheet.png"));

    const RunResult ev = runCli("eval --mode kpe" + common);
    CHECK(ev.code == 0);
    CHECK(ev.output.find("PCE rate") != std::string::npos);
    CHECK(fs::exists(dir / "run" / "eval" / "kpe" / "summary.json"));

    // A checkpoint trained under another model config is refused unless forced.
    std::ofstream(cfg, std::ios::app) << "[model]\nd = 32\n";
    const RunResult refused = runCli("eval --mode kpe" + common);
    CHECK(refused.code == 1);
    CHECK(refused.output.find("config_error") != std::string::npos);
    CHECK(runCli("eval --mode kpe --force" + common).code == 0);

    CHECK(runCli("eval --mode skeleton" + common).code == 1);
    fs::remove_all(dir);
}
