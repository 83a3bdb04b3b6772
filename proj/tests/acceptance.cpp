// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "kpe_forge/bench.hpp"
#include "kpe_forge/error.hpp"
#include "kpe_forge/pipeline.hpp"
#include "scenes.hpp"
#include "support.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

using namespace kpeforge;
using namespace kpeforge::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kMinMemoryRatio = 10.0;
constexpr int kQuantizePatches = 1000;
constexpr double kMaxGradientRelError = 1e-4;
constexpr double kLossWiringTolerance = 1e-6;
constexpr int kChiSquareDraws = 10000;
constexpr double kMinChiSquareP = 0.01;
constexpr int kPceSuiteSize = 50;
constexpr int kPceMinCorrect = 48;
constexpr double kMinOksGainOverText = 0.15;
constexpr double kMaxOksDeficitVsSkeleton = 0.02;
constexpr double kAblationBudgetSeconds = 30.0 * 60.0;
constexpr double kMinSpeedupVsSkeleton = 1.1;
constexpr double kMaxSlowdownVsText = 0.05;

using Clock = std::chrono::steady_clock;

double secondsSince(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail, double seconds) {
    std::printf("[%s] %2d %-28s %s (%.1fs)\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++failures;
}

// Runs a criterion; an exception counts as a failure with its message.
void criterion(int id, const std::string& name, const std::function<bool(std::string&)>& body) {
    const auto t0 = Clock::now();
    std::string detail;
    bool pass = false;
    try {
        pass = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    report(id, name, pass, detail, secondsSince(t0));
}

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

ModelConfig paperScale() {
    ModelConfig c;
    c.d = 512;
    c.heads = 8;
    c.depth = 12;
    c.textLength = 256;
    c.gridHeight = c.gridWidth = 16;
    c.scheme = JointScheme::Body25;
    c.maxPeople = 4;
    return c;
}

bool tokenAccountingCheck(std::string& detail) {
    const TokenAccounting acc = tokenAccounting(paperScale());
    const int skeleton = acc.rows[1].condTokens, kpe = acc.rows[2].condTokens;
    detail = fmt("skeleton %d, kpe %d, memory ratio %.2f", skeleton, kpe, acc.memoryRatio);
    return skeleton == 256 && kpe == 25 && acc.memoryRatio >= kMinMemoryRatio;
}

bool resolutionCheck(std::string& detail) {
    bool ok = true;
    for (int grid : {8, 16, 32}) {
        ModelConfig base = paperScale();
        base.gridHeight = base.gridWidth = grid;
        ModelConfig doubled = base;
        doubled.gridHeight = doubled.gridWidth = 2 * grid;
        const TokenAccounting a = tokenAccounting(base), b = tokenAccounting(doubled);
        ok = ok && b.rows[2].condTokens == a.rows[2].condTokens && b.rows[1].condTokens == 4 * a.rows[1].condTokens;
        if (grid == 16)
            detail = fmt("grid 16->32: kpe %d->%d, skeleton %d->%d", a.rows[2].condTokens, b.rows[2].condTokens,
                         a.rows[1].condTokens, b.rows[1].condTokens);
    }
    return ok;
}

bool quantizeCheck(std::string& detail) {
    const PatchGeometry g{};
    VqModel<float> vq(g, 16, 256);
    Rng rng(31);
    for (auto& v : vq.params().buffer()) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    const int images = (kQuantizePatches + g.tokens() - 1) / g.tokens();
    int checked = 0, agree = 0;
    for (int i = 0; i < images && checked < kQuantizePatches; ++i) {
        Image im(g.width, g.height, g.channels);
        for (auto& p : im.pixels) p = static_cast<float>(rng.uniform());
        const TokenGrid grid = encodeImage(im, vq);
        const Mat<double> patches = extractPatches<double>(im, g);
        const auto enc = vq.encoder();
        const auto bias = vq.encoderBias();
        const auto book = vq.codebook();
        for (int r = 0; r < patches.rows() && checked < kQuantizePatches; ++r, ++checked) {
            std::vector<double> code(static_cast<std::size_t>(vq.codeDim()));
            for (int c = 0; c < vq.codeDim(); ++c) {
                double s = bias(0, c);
                for (int k = 0; k < patches.cols(); ++k) s += patches(r, k) * enc(k, c);
                code[static_cast<std::size_t>(c)] = s;
            }
            int best = 0;
            double bestDist = INFINITY;
            for (int k = 0; k < vq.codebookSize(); ++k) {
                double dist = 0.0;
                for (int c = 0; c < vq.codeDim(); ++c) {
                    const double diff = code[static_cast<std::size_t>(c)] - book(k, c);
                    dist += diff * diff;
                }
                if (dist < bestDist) {
                    bestDist = dist;
                    best = k;
                }
            }
            if (grid.ids[static_cast<std::size_t>(r)] == best) ++agree;
        }
    }
    detail = fmt("%d/%d patches agree", agree, checked);
    return checked == kQuantizePatches && agree == checked;
}

std::vector<SequenceExample> twoPersonBatch(const ModelConfig& c, int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SequenceExample> out;
    for (int i = 0; i < count; ++i) out.push_back(randomExample(rng, c, 2));
    return out;
}

bool gradientCheck(std::string& detail) {
    const ModelConfig c = toyConfig(ConditioningMode::Kpe, 8, 1);
    Transformer<double> model(c);
    model.initialize(41);
    const auto examples = twoPersonBatch(c, 2, 42);
    const SequenceBatch batch = batchOf(examples);
    ParamStore<double> grad;
    model.lossAndGradient(batch, grad);
    // The keypoint targets are stop-gradient, so the oracle holds them fixed.
    const Mat<double> frozen = model.forward(batch).condTargets;
    const double h = 1e-6;
    double worst = 0.0;
    auto& p = model.params().buffer();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = model.loss(batch, &frozen).total;
        p[i] = keep - h;
        const double down = model.loss(batch, &frozen).total;
        p[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double g = grad.buffer()[i];
        worst = std::max(worst, std::abs(fd - g) / std::max(1e-2, std::abs(fd) + std::abs(g)));
    }
    detail = fmt("%zu parameters, worst relative error %.2e", p.size(), worst);
    return worst < kMaxGradientRelError;
}

double crossEntropy(const auto& row, int target) {
    double mx = -INFINITY;
    for (Eigen::Index i = 0; i < row.size(); ++i) mx = std::max(mx, static_cast<double>(row(i)));
    double sum = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) sum += std::exp(static_cast<double>(row(i)) - mx);
    return mx + std::log(sum) - static_cast<double>(row(target));
}

bool lossWiringCheck(std::string& detail) {
    const ModelConfig c = toyConfig(ConditioningMode::Kpe, 16, 2);
    Transformer<double> model(c);
    model.initialize(51);
    auto examples = twoPersonBatch(c, 3, 52);
    examples[2].text[3] = 0;
    const SequenceBatch batch = batchOf(examples);
    const auto out = model.forward(batch);
    const int B = batch.size();
    double text = 0.0;
    int textCount = 0;
    for (int b = 0; b < B; ++b)
        for (int p = 0; p + 1 < c.textLength; ++p) {
            const int target = examples[static_cast<std::size_t>(b)].text[static_cast<std::size_t>(p + 1)];
            if (target == 0) continue;
            text += crossEntropy(out.textLogits.row(b * (c.textLength - 1) + p), target);
            ++textCount;
        }
    text /= textCount;
    double image = 0.0;
    for (int b = 0; b < B; ++b)
        for (int k = 0; k < c.imageTokens(); ++k)
            image += crossEntropy(out.imageLogits.row(b * c.imageTokens() + k),
                                  examples[static_cast<std::size_t>(b)].image[static_cast<std::size_t>(k)]);
    image /= B * c.imageTokens();
    double kp = 0.0;
    for (Eigen::Index i = 0; i < out.condOutput.size(); ++i) {
        const double diff = out.condOutput.data()[i] - out.condTargets.data()[i];
        kp += diff * diff;
    }
    kp /= static_cast<double>(out.condOutput.size());
    const double expected = text + 7.0 * image + 10.0 * kp;
    const LossBreakdown lb = model.loss(batch);
    detail = fmt("loss %.9f, recombined %.9f, lambdas %.0f/%.0f", lb.total, expected, c.lambdaImage, c.lambdaKeypoint);
    return std::abs(lb.total - expected) <= kLossWiringTolerance && c.lambdaImage == 7.0 && c.lambdaKeypoint == 10.0;
}

bool samplerCheck(std::string& detail) {
    RowVec<float> logits(64);
    Rng init(61);
    for (int i = 0; i < logits.size(); ++i) logits(i) = static_cast<float>(init.uniform() * 4.0);
    const auto top = topK(logits, 8);
    Rng a(62), b(63);
    bool deterministic = true;
    for (int i = 0; i < 100; ++i)
        deterministic = deterministic && samplePool(logits, 1, PoolSampling::Uniform, a) == top[0] &&
                        samplePool(logits, 1, PoolSampling::Uniform, b) == top[0];
    std::map<int, int> counts;
    Rng rng(64);
    for (int i = 0; i < kChiSquareDraws; ++i) ++counts[samplePool(logits, 8, PoolSampling::Uniform, rng)];
    const double expected = kChiSquareDraws / 8.0;
    double chi2 = 0.0;
    bool inPool = counts.size() == 8;
    for (int t : top) {
        const double diff = counts[t] - expected;
        chi2 += diff * diff / expected;
        inPool = inPool && counts.count(t) == 1;
    }
    const double pValue = boost::math::cdf(boost::math::complement(boost::math::chi_squared(7.0), chi2));
    detail = fmt("pool 1 deterministic: %s, pool 8 chi2 %.2f (p = %.3f)", deterministic ? "yes" : "no", chi2, pValue);
    return deterministic && inPool && pValue > kMinChiSquareP;
}

struct LabelledImage {
    Image image;
    int gt{0};
    int expectedPce{0};
};

// Repaints every oracle component whose centroid falls inside the person's
// keypoint box (grown by the limb reach) with the background colour.
void erasePerson(Image& image, const PersonPose& person) {
    double x0 = 1, y0 = 1, x1 = 0, y1 = 0;
    for (const auto& kp : person.joints())
        if (kp.visible()) {
            x0 = std::min(x0, kp.x);
            y0 = std::min(y0, kp.y);
            x1 = std::max(x1, kp.x);
            y1 = std::max(y1, kp.y);
        }
    const double pad = 3.0;
    for (PixelClass cls : {PixelClass::Head, PixelClass::Arm, PixelClass::Leg, PixelClass::Torso})
        for (const auto& comp : componentsOf(image, cls))
            if (comp.cx >= x0 * image.width - pad && comp.cx <= x1 * image.width + pad && comp.cy >= y0 * image.height - pad &&
                comp.cy <= y1 * image.height + pad)
                for (const auto& [x, y] : comp.pixels) {
                    image.at(x, y, 0) = palette::kBackground.r;
                    image.at(x, y, 1) = palette::kBackground.g;
                    image.at(x, y, 2) = palette::kBackground.b;
                }
}

// Six injection kinds over 64 x 64 renders of one to three people.
std::vector<LabelledImage> pceSuite() {
    ComposeOptions opts;
    opts.width = opts.height = 64;
    std::vector<LabelledImage> suite;
    for (int i = 0; i < kPceSuiteSize; ++i) {
        const int kind = i % 6;
        const int n = 1 + (i / 6) % 3;
        Sample s = cleanScene(1000 + static_cast<std::uint64_t>(i), n, opts);
        LabelledImage li{s.image, n, 0};
        switch (kind) {
        case 0:  // clean
            break;
        case 1:  // floating extra arm
        case 2:  // floating extra leg
        case 3: {  // floating extra head
            const auto spot = kind == 3 ? freeRect(s.mask, 3, 3) : freeRect(s.mask, 2, 6);
            if (!spot) throw std::runtime_error("no free space for injection");
            fillRect(li.image, &s.mask, *spot, kind == 1 ? palette::kArm : kind == 2 ? palette::kLeg : palette::kHead);
            li.expectedPce = 1;
            break;
        }
        case 4: {  // one arm removed: still the same number of people
            const auto arms = componentsOf(li.image, PixelClass::Arm);
            if (arms.empty()) throw std::runtime_error("no arm to remove");
            eraseComponent(li.image, arms.front());
            break;
        }
        case 5:  // a whole figure removed
            erasePerson(li.image, s.pose[s.pose.size() - 1]);
            li.expectedPce = 1;
            break;
        }
        suite.push_back(std::move(li));
    }
    return suite;
}

bool pceCheck(std::string& detail) {
    const auto suite = pceSuite();
    int correct = 0;
    std::string misses;
    for (std::size_t i = 0; i < suite.size(); ++i) {
        if (pce(suite[i].image, suite[i].gt) == suite[i].expectedPce)
            ++correct;
        else
            misses += " #" + std::to_string(i);
    }
    detail = fmt("%d/%zu match hand labels", correct, suite.size()) + (misses.empty() ? "" : ", missed:" + misses);
    return correct >= kPceMinCorrect;
}

// Desk-scale ablation setup shared by the quality and speed criteria.
struct Ablation {
    Dataset ds;
    BpeVocab bpe;
    VqModel<float> vq;
    std::map<ConditioningMode, Transformer<float>> models;
    std::map<ConditioningMode, EvalSummary> summaries;
    bool ready{false};
};

constexpr std::uint64_t kAblationSeed = 2024;

Ablation runAblation() {
    Ablation a;
    DatasetConfig dc;
    dc.count = 1000;
    a.ds = generateDataset(dc, kAblationSeed);
    a.bpe = bpeTrain(captions(a.ds, a.ds.train), 48, 16);
    VqTrainConfig vc;
    vc.codebookSize = 512;
    vc.codeDim = 32;
    vc.epochs = 4;
    a.vq = trainCodebook(images(a.ds, a.ds.train), vc, deriveSeed(kAblationSeed, 1)).model;
    for (ConditioningMode mode : {ConditioningMode::TextOnly, ConditioningMode::SkeletonTokens, ConditioningMode::Kpe}) {
        ModelConfig mc;
        mc.mode = mode;
        mc.textVocab = a.bpe.size();
        mc.imageVocab = a.vq.codebookSize();
        const auto examples = buildExamples(a.ds, a.ds.train, a.bpe, a.vq, mc);
        TrainConfig tc;
        tc.epochs = 40;
        tc.adam.lr = 1e-3;
        const auto t0 = Clock::now();
        TrainResult r = trainTransformer(examples, mc, tc, deriveSeed(kAblationSeed, 2));
        SamplerConfig sc;
        sc.poolSize = 1;
        sc.seed = deriveSeed(kAblationSeed, 3);
        const Evaluation ev = evaluateModel(r.model, a.vq, a.bpe, a.ds, a.ds.test, sc);
        const EvalSummary s = summarize(ev.records);
        std::printf("       %-9s final loss %.3f, OKS %.3f, PCE rate %.3f, Mask-SSIM %.3f (%.0fs)\n",
                    std::string(modeName(mode)).c_str(), r.log.back().loss.total, s.meanOks, s.pceRate, s.meanMaskSsim,
                    secondsSince(t0));
        std::fflush(stdout);
        a.summaries[mode] = s;
        a.models.emplace(mode, std::move(r.model));
    }
    a.ready = true;
    return a;
}

bool ablationCheck(Ablation& a, std::string& detail) {
    const auto t0 = Clock::now();
    a = runAblation();
    const double elapsed = secondsSince(t0);
    const EvalSummary& text = a.summaries[ConditioningMode::TextOnly];
    const EvalSummary& skel = a.summaries[ConditioningMode::SkeletonTokens];
    const EvalSummary& kpe = a.summaries[ConditioningMode::Kpe];
    const bool oksGain = kpe.meanOks >= text.meanOks + kMinOksGainOverText;
    const bool pceOk = kpe.pceRate <= text.pceRate;
    const bool vsSkeleton = kpe.meanOks >= skel.meanOks - kMaxOksDeficitVsSkeleton;
    detail = fmt("OKS kpe %.3f / text %.3f / skeleton %.3f [%s %s], PCE kpe %.3f <= text %.3f [%s], %.0fs of %.0fs",
                 kpe.meanOks, text.meanOks, skel.meanOks, oksGain ? "a ok" : "a FAIL", vsSkeleton ? "c ok" : "c FAIL",
                 kpe.pceRate, text.pceRate, pceOk ? "b ok" : "b FAIL", elapsed, kAblationBudgetSeconds);
    return oksGain && pceOk && vsSkeleton && elapsed <= kAblationBudgetSeconds;
}

bool speedCheck(const Ablation& a, std::string& detail) {
    if (!a.ready) {
        detail = "ablation models unavailable";
        return false;
    }
    DatasetConfig dc;
    dc.count = 8;
    dc.testFraction = 0.0;
    const Dataset inputs = generateDataset(dc, deriveSeed(kAblationSeed, 4));
    SamplerConfig sc;
    sc.poolSize = 8;
    sc.seed = deriveSeed(kAblationSeed, 5);
    std::vector<BenchVariant> variants;
    for (const auto& [mode, model] : a.models) {
        const Transformer<float>* m = &model;
        variants.push_back({mode,
                            [m, &inputs, &a, &sc](std::size_t i) {
                                const Sample& s = inputs.samples[i % inputs.samples.size()];
                                const Conditioning cond = conditioningFor(m->config(), s.pose, a.vq);
                                const std::vector<int> text = encodeText(s.caption, a.bpe);
                                (void)decodeTokens({a.vq.geometry().gridHeight(), a.vq.geometry().gridWidth(),
                                                    generateTokens(*m, text, cond, sc, deriveSeed(sc.seed, i))},
                                                   a.vq);
                            },
                            model.config()});
    }
    MeasureOptions mo;
    mo.runs = 15;
    mo.inputs = 8;
    mo.warmup = 2;
    const auto reports = measureInference(variants, mo);
    std::map<ConditioningMode, double> wall;
    for (const auto& r : reports) wall[r.mode] = r.wallClock;
    const double speedup = wall[ConditioningMode::SkeletonTokens] / wall[ConditioningMode::Kpe];
    const double slowdown = wall[ConditioningMode::Kpe] / wall[ConditioningMode::TextOnly] - 1.0;
    detail = fmt("per image: text %.2f ms, skeleton %.2f ms, kpe %.2f ms; speedup %.2fx, vs text %+.1f%%",
                 1e3 * wall[ConditioningMode::TextOnly], 1e3 * wall[ConditioningMode::SkeletonTokens],
                 1e3 * wall[ConditioningMode::Kpe], speedup, 100.0 * slowdown);
    return speedup > kMinSpeedupVsSkeleton && slowdown <= kMaxSlowdownVsText;
}

std::string fileBytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool determinismCheck(std::string& detail) {
    DatasetConfig dc;
    dc.count = 60;
    const Dataset d1 = generateDataset(dc, 71), d2 = generateDataset(dc, 71);
    bool datasetSame = d1.train == d2.train && d1.test == d2.test;
    for (std::size_t i = 0; i < d1.samples.size(); ++i)
        datasetSame = datasetSame && d1.samples[i].image == d2.samples[i].image && d1.samples[i].pose == d2.samples[i].pose &&
                      d1.samples[i].caption == d2.samples[i].caption;

    const BpeVocab bpe = bpeTrain(captions(d1, d1.train), 32, 16);
    VqTrainConfig vc;
    vc.codebookSize = 32;
    vc.codeDim = 8;
    vc.epochs = 1;
    const VqModel<float> vq = trainCodebook(images(d1, d1.train), vc, 72).model;
    ModelConfig mc;
    mc.d = 32;
    mc.heads = 2;
    mc.depth = 1;
    mc.textVocab = bpe.size();
    mc.imageVocab = vq.codebookSize();
    const auto examples = buildExamples(d1, d1.train, bpe, vq, mc);
    TrainConfig tc;
    tc.epochs = 3;
    tc.adam.lr = 1e-3;
    const TrainResult r1 = trainTransformer(examples, mc, tc, 73), r2 = trainTransformer(examples, mc, tc, 73);
    std::ostringstream log1, log2;
    writeLossCsv(log1, r1.log);
    writeLossCsv(log2, r2.log);
    const bool lossSame = log1.str() == log2.str();

    SamplerConfig sc;
    sc.poolSize = 8;
    sc.seed = 74;
    const Sample& s = d1.samples[d1.test.front()];
    const auto cond = conditioningFor(mc, s.pose, vq);
    const auto text = encodeText(s.caption, bpe);
    const bool genSame = generateImages(r1.model, vq, text, cond, sc)[0].image == generateImages(r2.model, vq, text, cond, sc)[0].image;

    const fs::path dir = fs::temp_directory_path() / "kpe_forge_acceptance";
    fs::create_directories(dir);
    saveCheckpoint(dir / "a.ckpt", makeCheckpoint(r1.model, &r1.adam, r1.state));
    const Checkpoint back = loadCheckpoint(dir / "a.ckpt", mc.hash());
    saveCheckpoint(dir / "b.ckpt", back);
    const Transformer<float> restored = modelFromCheckpoint(back);
    const bool ckptSame = restored.params().buffer() == r1.model.params().buffer() && back.state == r1.state &&
                          fileBytes(dir / "a.ckpt") == fileBytes(dir / "b.ckpt");
    fs::remove_all(dir);
    detail = fmt("dataset %s, loss log %s, generation %s, checkpoint %s", datasetSame ? "same" : "DIFFERS",
                 lossSame ? "same" : "DIFFERS", genSame ? "same" : "DIFFERS", ckptSame ? "bit exact" : "DIFFERS");
    return datasetSame && lossSame && genSame && ckptSame;
}

bool metricSanityCheck(std::string& detail) {
    const Sample s = cleanScene(81, 2);
    const double ms = maskSsim(s.image, s.image, s.mask);
    const auto cfg = OksConfig::forScheme(JointScheme::Skel13);
    const double o = oks(s.pose[0], s.pose[0], cfg);
    const double rate = pceRate(std::vector<int>(100, 0));
    detail = fmt("mask_ssim(x, x) = %.17g, oks(p, p) = %.17g, pce_rate = %g", ms, o, rate);
    return ms == 1.0 && o == 1.0 && rate == 0.0;
}

} // namespace

int main() {
    Ablation ablation;
    criterion(1, "token accounting", tokenAccountingCheck);
    criterion(2, "resolution invariance", resolutionCheck);
    criterion(3, "quantize oracle", quantizeCheck);
    criterion(4, "gradient check", gradientCheck);
    criterion(5, "loss wiring", lossWiringCheck);
    criterion(6, "sampler contract", samplerCheck);
    criterion(7, "pce mechanism", pceCheck);
    criterion(8, "directional ablation", [&](std::string& d) { return ablationCheck(ablation, d); });
    criterion(9, "speed direction", [&](std::string& d) { return speedCheck(ablation, d); });
    criterion(10, "determinism", determinismCheck);
    criterion(11, "metric sanity", metricSanityCheck);
    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
