#include "kpe_forge/bench.hpp"
#include "kpe_forge/error.hpp"
#include "kpe_forge/kpe.hpp"
#include "kpe_forge/pipeline.hpp"
#include "kpe_forge/pose_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace kpeforge;

namespace {

struct Options {
    std::string config;
    std::uint64_t seed{0};
    std::string outDir{"runs/default"};
    std::string mode;
    std::optional<int> samplesPerInput;
    std::optional<int> poolSize;
    std::string kpeLossAlign;
    bool force{false};
    bool keepEpochs{false};
    bool paperScale{false};
    std::string split;
    int inputs{8};
    std::string poseFile;
    std::string caption;
    std::string dumpKpe;
};

constexpr int kUsageExit = 2;
// Threshold failures in eval exit with this code.
constexpr int kThresholdExit = 3;

RunConfig loadConfig(const Options& o) {
    RunConfig rc = o.config.empty() ? RunConfig() : RunConfig::load(o.config);
    if (!o.mode.empty()) rc.set("model.mode", o.mode);
    if (o.samplesPerInput) rc.set("sample.samples_per_input", std::to_string(*o.samplesPerInput));
    if (o.poolSize) rc.set("sample.pool_size", std::to_string(*o.poolSize));
    if (!o.kpeLossAlign.empty()) rc.set("model.kpe_loss_align", o.kpeLossAlign);
    if (!o.split.empty()) rc.set("eval.split", o.split);
    return rc;
}

struct Paths {
    fs::path root;
    fs::path dataset() const { return root / "dataset"; }
    fs::path bpe() const { return root / "tokenizers" / "bpe.txt"; }
    fs::path codebook() const { return root / "tokenizers" / "codebook.ckpt"; }
    fs::path modelDir(ConditioningMode m) const { return root / "models" / std::string(modeName(m)); }
    fs::path model(ConditioningMode m) const { return modelDir(m) / "model.ckpt"; }
};

void writeText(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

void require(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path)) throw MissingArtifact(path.string() + " is missing; run `kpe-forge " + producer + "` first");
}

Dataset loadDataset(const Paths& p, const RunConfig& rc, bool force) {
    require(p.dataset() / "manifest.jsonl", "dataset");
    return readDataset(p.dataset(), rc.getInt("model.max_people"), force ? std::string() : rc.hash({"dataset"}));
}

BpeVocab loadBpeChecked(const Paths& p) {
    require(p.bpe(), "train-bpe");
    return loadBpe(p.bpe());
}

VqModel<float> loadCodebook(const Paths& p) {
    require(p.codebook(), "train-codebook");
    return codebookFromCheckpoint(loadCheckpoint(p.codebook()));
}

Transformer<float> loadModel(const Paths& p, const RunConfig& rc, ConditioningMode mode, const BpeVocab& bpe,
                             const VqModel<float>& vq, bool force) {
    require(p.model(mode), "train --mode " + std::string(modeName(mode)));
    const ModelConfig expected = modelConfig(rc, mode, bpe.size(), vq.codebookSize());
    const Checkpoint ck = loadCheckpoint(p.model(mode), force ? std::nullopt : std::optional(expected.hash()));
    return modelFromCheckpoint(ck);
}

int cmdDataset(const Options& o) {
    const RunConfig rc = loadConfig(o);
    const Paths p{o.outDir};
    const Dataset ds = generateDataset(datasetConfig(rc), o.seed);
    writeDataset(p.dataset(), ds, rc.hash({"dataset"}));
    writeText(p.root / "config.txt", rc.dump());
    std::printf("dataset: %zu samples (%zu train, %zu test) -> %s\n", ds.samples.size(), ds.train.size(),
                ds.test.size(), p.dataset().string().c_str());
    return 0;
}

int cmdTrainBpe(const Options& o) {
    const RunConfig rc = loadConfig(o);
    const Paths p{o.outDir};
    const Dataset ds = loadDataset(p, rc, o.force);
    const BpeVocab vocab = bpeTrain(captions(ds, ds.train), rc.getInt("tokenizers.bpe_symbols"),
                                    rc.getInt("tokenizers.text_length"));
    fs::create_directories(p.bpe().parent_path());
    saveBpe(p.bpe(), vocab);
    std::printf("bpe: %d ids (%zu merges) -> %s\n", vocab.size(), vocab.merges().size(), p.bpe().string().c_str());
    return 0;
}

int cmdTrainCodebook(const Options& o) {
    const RunConfig rc = loadConfig(o);
    const Paths p{o.outDir};
    const Dataset ds = loadDataset(p, rc, o.force);
    const VqTrainResult res = trainCodebook(images(ds, ds.train), vqConfig(rc), o.seed);
    saveCheckpoint(p.codebook(), makeCodebookCheckpoint(res.model));
    std::ostringstream csv;
    csv << "epoch,loss\n";
    for (std::size_t e = 0; e < res.epochLoss.size(); ++e) csv << e << ',' << res.epochLoss[e] << '\n';
    writeText(p.root / "tokenizers" / "codebook_loss.csv", csv.str());
    std::printf("codebook: %d codes, reconstruction mse %.5f -> %s\n", res.model.codebookSize(),
                reconstructionMse(images(ds, ds.test.empty() ? ds.train : ds.test), res.model),
                p.codebook().string().c_str());
    return 0;
}

int cmdTrain(const Options& o) {
    const RunConfig rc = loadConfig(o);
    const Paths p{o.outDir};
    const ConditioningMode mode = parseMode(rc.get("model.mode"));
    const Dataset ds = loadDataset(p, rc, o.force);
    const BpeVocab bpe = loadBpeChecked(p);
    const VqModel<float> vq = loadCodebook(p);
    const ModelConfig mc = modelConfig(rc, mode, bpe.size(), vq.codebookSize());
    const auto examples = buildExamples(ds, ds.train, bpe, vq, mc);
    const fs::path dir = p.modelDir(mode);
    fs::create_directories(dir);
    std::ofstream log(dir / "loss.csv", std::ios::trunc);
    log << "epoch,lr,L_T,L_I,L_K,total\n";
    const TrainResult res = trainTransformer(examples, mc, trainConfig(rc), o.seed, [&](const TrainResult& r) {
        std::vector<EpochRecord> last{r.log.back()};
        std::ostringstream line;
        writeLossCsv(line, last);
        const std::string text = line.str();
        log << text.substr(text.find('\n') + 1) << std::flush;
        const Checkpoint ck = makeCheckpoint(r.model, &r.adam, r.state);
        saveCheckpoint(dir / "last.ckpt", ck);
        if (o.keepEpochs) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%03d.ckpt", r.log.back().epoch);
            saveCheckpoint(dir / name, ck);
        }
        const auto& e = r.log.back();
        std::printf("epoch %3d  lr %.2e  L_T %.4f  L_I %.4f  L_K %.5f  total %.4f\n", e.epoch, e.lr, e.loss.text,
                    e.loss.image, e.loss.cond, e.loss.total);
        std::fflush(stdout);
    });
    saveCheckpoint(p.model(mode), makeCheckpoint(res.model, &res.adam, res.state));
    std::printf("model -> %s\n", p.model(mode).string().c_str());
    return 0;
}

// Contact-sheet row: pose illustration followed by the generated samples.
Image contactSheet(const std::vector<MultiPersonPose>& poses, const std::vector<GeneratedImage>& generated,
                   std::size_t perInput, int width, int height) {
    std::vector<Image> tiles;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        tiles.push_back(renderSkeletonImage(poses[i], width, height));
        for (std::size_t k = 0; k < perInput; ++k) tiles.push_back(generated[i * perInput + k].image);
    }
    return tileImages(tiles, static_cast<int>(perInput + 1));
}

int cmdGenerate(const Options& o) {
    const RunConfig rc = loadConfig(o);
    const Paths p{o.outDir};
    const ConditioningMode mode = parseMode(rc.get("model.mode"));
    const BpeVocab bpe = loadBpeChecked(p);
    const VqModel<float> vq = loadCodebook(p);
    const Transformer<float> model = loadModel(p, rc, mode, bpe, vq, o.force);
    const SamplerConfig sc = samplerConfig(rc, o.seed);

    std::vector<std::pair<std::string, std::string>> inputs;  // (id, caption)
    std::vector<MultiPersonPose> poses;
    if (!o.poseFile.empty()) {
        if (o.caption.empty()) throw ConfigError("--pose needs --caption");
        poses.push_back(canonicalPersonOrder(readPoseFile(o.poseFile, model.config().maxPeople).pose));
        inputs.emplace_back("custom", o.caption);
    } else {
        const Dataset ds = loadDataset(p, rc, o.force);
        const auto& split = rc.get("eval.split") == "train" ? ds.train : ds.test;
        for (std::size_t k = 0; k < split.size() && static_cast<int>(k) < o.inputs; ++k) {
            const Sample& s = ds.samples[split[k]];
            inputs.emplace_back(s.id, s.caption);
            poses.push_back(s.pose);
        }
    }
    const fs::path dir = p.root / "generate" / std::string(modeName(mode));
    fs::create_directories(dir);
    std::ofstream kpeCsv;
    if (!o.dumpKpe.empty()) kpeCsv.open(o.dumpKpe, std::ios::trunc);
    const std::size_t per = static_cast<std::size_t>(sc.samplesPerInput);
    std::vector<GeneratedImage> all;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::vector<int> text = encodeText(inputs[i].second, bpe);
        const Conditioning cond = conditioningFor(model.config(), poses[i], vq);
        if (kpeCsv.is_open()) {
            kpeCsv << "# " << inputs[i].first << '\n';
            writeTokenCsv(kpeCsv, tokenize(poses[i], model.config().maxPeople));
        }
        auto gens = generateImages(model, vq, text, cond, sc, i * per);
        for (std::size_t k = 0; k < gens.size(); ++k) {
            const std::string stem = inputs[i].first + "_" + std::to_string(k);
            writePng(dir / (stem + ".png"), gens[k].image);
            nlohmann::ordered_json j;
            j["id"] = inputs[i].first;
            j["caption"] = inputs[i].second;
            j["mode"] = modeName(mode);
            j["seed"] = gens[k].seed;
            j["pool_size"] = sc.poolSize;
            j["grid_hw"] = {gens[k].grid.height, gens[k].grid.width};
            j["tokens"] = gens[k].grid.ids;
            j["pose"] = nlohmann::json::parse(poseToJson({poses[i], vq.geometry().width, vq.geometry().height}));
            j["config_hash"] = rc.hash();
            writeText(dir / (stem + ".json"), j.dump(2) + "\n");
            all.push_back(std::move(gens[k]));
        }
    }
    writePng(dir / "contact_sheet.png", contactSheet(poses, all, per, vq.geometry().width, vq.geometry().height));
    std::printf("generate: %zu images -> %s\n", all.size(), dir.string().c_str());
    return 0;
}

int cmdEval(const Options& o) {
    const RunConfig rc = loadConfig(o);
    const Paths p{o.outDir};
    const ConditioningMode mode = parseMode(rc.get("model.mode"));
    const Dataset ds = loadDataset(p, rc, o.force);
    const BpeVocab bpe = loadBpeChecked(p);
    const VqModel<float> vq = loadCodebook(p);
    const Transformer<float> model = loadModel(p, rc, mode, bpe, vq, o.force);
    std::vector<std::size_t> split = rc.get("eval.split") == "train" ? ds.train : ds.test;
    const int maxInputs = rc.getInt("eval.max_inputs");
    if (maxInputs > 0 && split.size() > static_cast<std::size_t>(maxInputs)) split.resize(static_cast<std::size_t>(maxInputs));
    if (split.empty()) throw ConfigError("evaluation split is empty");
    const Evaluation ev = evaluateModel(model, vq, bpe, ds, split, samplerConfig(rc, o.seed));
    const EvalSummary s = summarize(ev.records);
    const fs::path dir = p.root / "eval" / std::string(modeName(mode));
    std::ostringstream csv;
    writeEvalCsv(csv, ev.records);
    writeText(dir / "records.csv", csv.str());
    writeText(dir / "summary.json", evalSummaryJson(s, std::string(modeName(mode)), rc.hash()) + "\n");
    std::printf("eval %s: %zu images  PCE rate %.4f  mean OKS %.4f  mean Mask-SSIM %.4f\n",
                std::string(modeName(mode)).c_str(), s.images, s.pceRate, s.meanOks, s.meanMaskSsim);
    const bool pass = s.meanOks >= rc.getDouble("eval.min_mean_oks") && s.pceRate <= rc.getDouble("eval.max_pce_rate");
    if (!pass) {
        std::fprintf(stderr, "eval: summary fails configured thresholds\n");
        return kThresholdExit;
    }
    return 0;
}

int cmdBench(const Options& o) {
    const RunConfig rc = loadConfig(o);
    const Paths p{o.outDir};
    if (o.paperScale) {
        ModelConfig full;
        full.d = 512;
        full.heads = 8;
        full.depth = 12;
        full.textLength = 256;
        full.gridHeight = full.gridWidth = 16;
        full.scheme = JointScheme::Body25;
        full.maxPeople = 4;
        const TokenAccounting acc = tokenAccounting(full);
        std::printf("%s", accountingTable(acc, "paper-scale token accounting (BODY25, 16x16 image grid)").c_str());
        const double ratio = attentionCost(acc.rows[1].seqLen, full.d, full.depth, full.heads).attention /
                             attentionCost(acc.rows[2].seqLen, full.d, full.depth, full.heads).attention;
        std::printf("attention-term ratio skeleton / kpe: %.3f\n", ratio);
        return 0;
    }
    const int canvas = rc.getInt("dataset.canvas");
    VqModel<float> vq;
    if (fs::exists(p.codebook())) {
        vq = loadCodebook(p);
    } else {
        const VqTrainConfig vc = vqConfig(rc);
        vq = VqModel<float>(vc.geometry, vc.codeDim, vc.codebookSize);
        Rng rng(deriveSeed(o.seed, 1));
        for (auto& v : vq.params().buffer()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    const int textVocab = fs::exists(p.bpe()) ? loadBpe(p.bpe()).size() : 3 + rc.getInt("tokenizers.bpe_symbols");
    DatasetConfig dc = datasetConfig(rc);
    dc.count = rc.getInt("bench.inputs");
    dc.testFraction = 0.0;
    const Dataset inputs = generateDataset(dc, deriveSeed(o.seed, 2));
    std::vector<Transformer<float>> models;
    for (ConditioningMode m : {ConditioningMode::TextOnly, ConditioningMode::SkeletonTokens, ConditioningMode::Kpe}) {
        models.emplace_back(modelConfig(rc, m, textVocab, vq.codebookSize()));
        models.back().initialize(deriveSeed(o.seed, 3));
    }
    SamplerConfig sc = samplerConfig(rc, o.seed);
    sc.samplesPerInput = 1;
    std::vector<BenchVariant> variants;
    for (const auto& model : models) {
        const Transformer<float>* m = &model;
        variants.push_back({model.config().mode,
                            [m, &inputs, &vq, &sc](std::size_t i) {
                                const Sample& s = inputs.samples[i % inputs.samples.size()];
                                const Conditioning cond = conditioningFor(m->config(), s.pose, vq);
                                const std::vector<int> text(static_cast<std::size_t>(m->config().textLength), 1);
                                (void)decodeTokens({vq.geometry().gridHeight(), vq.geometry().gridWidth(),
                                                    generateTokens(*m, text, cond, sc, deriveSeed(sc.seed, i))},
                                                   vq);
                            },
                            model.config()});
    }
    MeasureOptions mo;
    mo.runs = rc.getInt("bench.runs");
    mo.inputs = static_cast<std::size_t>(rc.getInt("bench.inputs"));
    mo.warmup = rc.getInt("bench.warmup");
    const auto reports = measureInference(variants, mo, [](const std::string& w) { std::fprintf(stderr, "bench: %s\n", w.c_str()); });
    const TokenAccounting acc = tokenAccounting(models.back().config());
    (void)canvas;
    writeText(p.root / "bench" / "report.json", benchReportJson(reports, acc, rc.hash()) + "\n");
    std::printf("%s%s", accountingTable(acc, "desk-scale token accounting").c_str(), benchTable(reports).c_str());
    return 0;
}

std::string errorKind(const std::exception& e) {
    if (dynamic_cast<const MissingArtifact*>(&e)) return "missing_artifact";
    if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
    if (dynamic_cast<const FormatError*>(&e)) return "format_error";
    if (dynamic_cast<const CapacityError*>(&e)) return "capacity_error";
    if (dynamic_cast<const InvalidArgument*>(&e)) return "invalid_argument";
    if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
    if (dynamic_cast<const UndefinedScore*>(&e)) return "undefined_score";
    return "error";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kpe-forge: keypoint-pose-conditioned text-to-image pipeline"};
    app.require_subcommand(1);
    Options o;
    auto common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config, "Run configuration file");
        sub->add_option("--seed", o.seed, "Seed for all randomness");
        sub->add_option("--out-dir", o.outDir, "Artifact directory");
        sub->add_flag("--force", o.force, "Ignore config-hash mismatches");
    };
    auto modeFlags = [&o](CLI::App* sub) {
        sub->add_option("--mode", o.mode, "Conditioning mode")->check(CLI::IsMember({"text_only", "skeleton", "kpe"}));
    };

    auto* dataset = app.add_subcommand("dataset", "Generate the synthetic multiperson dataset");
    common(dataset);
    auto* bpe = app.add_subcommand("train-bpe", "Train the caption BPE vocabulary");
    common(bpe);
    auto* codebook = app.add_subcommand("train-codebook", "Train the VQ codebook and patch encoder/decoder");
    common(codebook);
    auto* train = app.add_subcommand("train", "Train a transformer for one conditioning mode");
    common(train);
    modeFlags(train);
    train->add_option("--kpe-loss-align", o.kpeLossAlign, "Keypoint L2 target alignment")->check(CLI::IsMember({"shifted", "same"}));
    train->add_flag("--keep-epochs", o.keepEpochs, "Keep one checkpoint file per epoch");
    auto* generate = app.add_subcommand("generate", "Sample images for dataset or custom inputs");
    common(generate);
    modeFlags(generate);
    generate->add_option("--samples-per-input", o.samplesPerInput, "Images per (text, pose) input");
    generate->add_option("--pool-size", o.poolSize, "Top-k pool size");
    generate->add_option("--split", o.split, "Dataset split to draw inputs from")->check(CLI::IsMember({"train", "test"}));
    generate->add_option("--inputs", o.inputs, "Number of dataset inputs");
    generate->add_option("--pose", o.poseFile, "Keypoint JSON file for a custom input");
    generate->add_option("--caption", o.caption, "Caption for a custom input");
    generate->add_option("--dump-kpe", o.dumpKpe, "Write the keypoint token matrices as CSV");
    auto* eval = app.add_subcommand("eval", "Score generated images: PCE rate, OKS, Mask-SSIM");
    common(eval);
    modeFlags(eval);
    eval->add_option("--samples-per-input", o.samplesPerInput, "Images per (text, pose) input");
    eval->add_option("--pool-size", o.poolSize, "Top-k pool size");
    eval->add_option("--split", o.split, "Dataset split")->check(CLI::IsMember({"train", "test"}));
    auto* bench = app.add_subcommand("bench", "Token accounting and inference timing per conditioning mode");
    common(bench);
    bench->add_option("--pool-size", o.poolSize, "Top-k pool size");
    bench->add_flag("--paper-scale-accounting", o.paperScale, "Print paper-scale token accounting only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : kUsageExit;
    }
    try {
        if (dataset->parsed()) return cmdDataset(o);
        if (bpe->parsed()) return cmdTrainBpe(o);
        if (codebook->parsed()) return cmdTrainCodebook(o);
        if (train->parsed()) return cmdTrain(o);
        if (generate->parsed()) return cmdGenerate(o);
        if (eval->parsed()) return cmdEval(o);
        if (bench->parsed()) return cmdBench(o);
    } catch (const std::exception& e) {
        nlohmann::ordered_json j;
        j["error"] = errorKind(e);
        j["message"] = e.what();
        std::cerr << j.dump() << '\n';
        return 1;
    }
    return 1;
}
