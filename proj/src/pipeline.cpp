#include "kpe_forge/pipeline.hpp"

#include "kpe_forge/error.hpp"
#include "kpe_forge/kpe.hpp"
#include "kpe_forge/parallel.hpp"

#include <map>
#include <sstream>

namespace kpeforge {

DatasetConfig datasetConfig(const RunConfig& rc) {
    DatasetConfig c;
    c.count = rc.getInt("dataset.count");
    c.testFraction = rc.getDouble("dataset.test_fraction");
    c.maxPeople = rc.getInt("dataset.max_people");
    c.partialProbability = rc.getDouble("dataset.partial_probability");
    c.compose.width = c.compose.height = rc.getInt("dataset.canvas");
    c.compose.scaleJitter = rc.getDouble("dataset.scale_jitter");
    return c;
}

VqTrainConfig vqConfig(const RunConfig& rc) {
    VqTrainConfig c;
    const int canvas = rc.getInt("dataset.canvas");
    c.geometry = {canvas, canvas, 3, rc.getInt("tokenizers.patch")};
    c.geometry.validate();
    c.codeDim = rc.getInt("tokenizers.code_dim");
    c.codebookSize = rc.getInt("tokenizers.codebook_size");
    c.kmeansIterations = rc.getInt("tokenizers.kmeans_iterations");
    c.epochs = rc.getInt("tokenizers.vq_epochs");
    c.batchSize = rc.getInt("tokenizers.vq_batch");
    c.adam.lr = rc.getDouble("tokenizers.vq_lr");
    return c;
}

ModelConfig modelConfig(const RunConfig& rc, ConditioningMode mode, int textVocab, int imageVocab) {
    ModelConfig c;
    const int grid = rc.getInt("dataset.canvas") / rc.getInt("tokenizers.patch");
    c.d = rc.getInt("model.d");
    c.heads = rc.getInt("model.heads");
    c.depth = rc.getInt("model.depth");
    c.mlpRatio = rc.getInt("model.mlp_ratio");
    c.textLength = rc.getInt("tokenizers.text_length");
    c.textVocab = textVocab;
    c.imageVocab = imageVocab;
    c.gridHeight = c.gridWidth = grid;
    c.mode = mode;
    c.scheme = parseScheme(rc.get("model.scheme"));
    c.maxPeople = rc.getInt("model.max_people");
    c.lambdaImage = rc.getDouble("model.lambda_image");
    c.lambdaKeypoint = rc.getDouble("model.lambda_keypoint");
    c.align = parseAlign(rc.get("model.kpe_loss_align"));
    const std::string& emb = rc.get("model.kpe_embedding");
    if (emb != "linear" && emb != "zero_pad") throw ConfigError("model.kpe_embedding must be linear or zero_pad");
    c.kpeEmbedding = emb == "linear" ? KpeEmbedding::Linear : KpeEmbedding::ZeroPad;
    c.maxSequence = rc.getInt("model.max_sequence");
    c.initScale = rc.getDouble("model.init_scale");
    c.validate();
    return c;
}

TrainConfig trainConfig(const RunConfig& rc) {
    TrainConfig c;
    c.epochs = rc.getInt("train.epochs");
    c.batchSize = rc.getInt("train.batch_size");
    c.adam.lr = rc.getDouble("train.lr");
    c.plateauEpochs = rc.getInt("train.plateau_epochs");
    c.lrFactor = rc.getDouble("train.lr_factor");
    c.minLr = rc.getDouble("train.min_lr");
    return c;
}

SamplerConfig samplerConfig(const RunConfig& rc, std::uint64_t seed) {
    SamplerConfig c;
    c.poolSize = rc.getInt("sample.pool_size");
    c.samplesPerInput = rc.getInt("sample.samples_per_input");
    c.seed = seed;
    const std::string& s = rc.get("sample.sampling");
    if (s == "uniform") c.sampling = PoolSampling::Uniform;
    else if (s == "proportional") c.sampling = PoolSampling::Proportional;
    else throw ConfigError("sample.sampling must be uniform or proportional");
    return c;
}

std::vector<std::string> captions(const Dataset& ds, const std::vector<std::size_t>& indices) {
    std::vector<std::string> out;
    for (auto i : indices) out.push_back(ds.samples[i].caption);
    return out;
}

std::vector<Image> images(const Dataset& ds, const std::vector<std::size_t>& indices) {
    std::vector<Image> out;
    for (auto i : indices) out.push_back(ds.samples[i].image);
    return out;
}

namespace {

std::string codebookConfigText(const PatchGeometry& g, int codeDim, int codebookSize) {
    return "width = " + std::to_string(g.width) + "\nheight = " + std::to_string(g.height) +
           "\nchannels = " + std::to_string(g.channels) + "\npatch = " + std::to_string(g.patch) +
           "\ncode_dim = " + std::to_string(codeDim) + "\ncodebook_size = " + std::to_string(codebookSize) + "\n";
}

} // namespace

Checkpoint makeCodebookCheckpoint(const VqModel<float>& vq) {
    Checkpoint ck;
    ck.kind = "vq";
    ck.configText = codebookConfigText(vq.geometry(), vq.codeDim(), vq.codebookSize());
    ck.configHash = fnv1a64(ck.configText);
    ck.params = vq.params();
    return ck;
}

VqModel<float> codebookFromCheckpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "vq") throw FormatError("checkpoint holds a '" + ckpt.kind + "' model, not a codebook");
    std::map<std::string, int> kv;
    std::istringstream is(ckpt.configText);
    std::string key, eq;
    int value = 0;
    while (is >> key >> eq >> value) kv[key] = value;
    for (const char* k : {"width", "height", "channels", "patch", "code_dim", "codebook_size"})
        if (!kv.count(k)) throw FormatError(std::string("codebook checkpoint lacks ") + k);
    const PatchGeometry g{kv["width"], kv["height"], kv["channels"], kv["patch"]};
    if (codebookConfigText(g, kv["code_dim"], kv["codebook_size"]) != ckpt.configText ||
        fnv1a64(ckpt.configText) != ckpt.configHash)
        throw FormatError("codebook checkpoint config does not match its hash");
    VqModel<float> vq(g, kv["code_dim"], kv["codebook_size"]);
    vq.setParams(ckpt.params);
    return vq;
}

Conditioning conditioningFor(const ModelConfig& config, const MultiPersonPose& pose, const VqModel<float>& vq) {
    switch (config.mode) {
    case ConditioningMode::TextOnly: return std::monostate{};
    case ConditioningMode::Kpe: return tokenize(pose, config.maxPeople);
    case ConditioningMode::SkeletonTokens: {
        const auto& g = vq.geometry();
        return encodeImage(renderSkeletonImage(pose, g.width, g.height), vq).ids;
    }
    }
    return std::monostate{};
}

SequenceExample makeExample(const Sample& sample, const BpeVocab& bpe, const VqModel<float>& vq,
                            const ModelConfig& config) {
    SequenceExample ex;
    ex.text = encodeText(sample.caption, bpe);
    ex.image = encodeImage(sample.image, vq).ids;
    const Conditioning cond = conditioningFor(config, sample.pose, vq);
    if (auto* k = std::get_if<KeypointTokenMatrix>(&cond)) ex.keypoints = *k;
    if (auto* p = std::get_if<std::vector<int>>(&cond)) ex.pose = *p;
    return ex;
}

std::vector<SequenceExample> buildExamples(const Dataset& ds, const std::vector<std::size_t>& indices,
                                           const BpeVocab& bpe, const VqModel<float>& vq, const ModelConfig& config) {
    if (bpe.textLength() != config.textLength) throw ConfigError("BPE text length differs from the model text length");
    std::vector<SequenceExample> out(indices.size());
    parallelFor(indices.size(), [&](std::size_t k) { out[k] = makeExample(ds.samples[indices[k]], bpe, vq, config); });
    return out;
}

Evaluation evaluateModel(const Transformer<float>& model, const VqModel<float>& vq, const BpeVocab& bpe,
                         const Dataset& ds, const std::vector<std::size_t>& indices, const SamplerConfig& sampler,
                         bool keepImages) {
    sampler.validate(model.config().imageVocab);
    const std::size_t per = static_cast<std::size_t>(sampler.samplesPerInput);
    const auto& g = vq.geometry();
    const OksConfig oksCfg = OksConfig::forScheme(JointScheme::Skel13);
    Evaluation ev;
    ev.records.resize(indices.size() * per);
    if (keepImages) ev.generated.resize(indices.size() * per);
    parallelFor(indices.size(), [&](std::size_t k) {
        const Sample& s = ds.samples[indices[k]];
        const std::vector<int> text = encodeText(s.caption, bpe);
        const Conditioning cond = conditioningFor(model.config(), s.pose, vq);
        for (std::size_t j = 0; j < per; ++j) {
            GeneratedImage gi;
            gi.seed = deriveSeed(sampler.seed, k * per + j);
            gi.grid = {g.gridHeight(), g.gridWidth(), generateTokens(model, text, cond, sampler, gi.seed)};
            gi.image = decodeTokens(gi.grid, vq);
            EvalRecord& r = ev.records[k * per + j];
            r.id = s.id;
            r.sample = static_cast<int>(j);
            r.gt = s.count;
            r.h = countPeople(gi.image).count;
            r.pce = pce(r.h, r.gt);
            r.oks = matchOks(estimatePoses(gi.image), s.pose, oksCfg);
            r.maskSsim = maskSsim(gi.image, s.image, s.mask);
            if (keepImages) ev.generated[k * per + j] = std::move(gi);
        }
    });
    return ev;
}

} // namespace kpeforge
