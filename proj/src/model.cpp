#include "kpe_forge/model.hpp"

#include "kpe_forge/error.hpp"
#include "kpe_forge/rng.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace kpeforge {

std::string_view modeName(ConditioningMode mode) noexcept {
    switch (mode) {
    case ConditioningMode::TextOnly: return "text_only";
    case ConditioningMode::SkeletonTokens: return "skeleton";
    case ConditioningMode::Kpe: return "kpe";
    }
    return "kpe";
}

ConditioningMode parseMode(std::string_view name) {
    if (name == "text_only") return ConditioningMode::TextOnly;
    if (name == "skeleton") return ConditioningMode::SkeletonTokens;
    if (name == "kpe") return ConditioningMode::Kpe;
    throw InvalidArgument("unknown conditioning mode '" + std::string(name) + "' (text_only, skeleton, kpe)");
}

std::string_view alignName(KpeLossAlign align) noexcept { return align == KpeLossAlign::Shifted ? "shifted" : "same"; }

KpeLossAlign parseAlign(std::string_view name) {
    if (name == "shifted") return KpeLossAlign::Shifted;
    if (name == "same") return KpeLossAlign::Same;
    throw InvalidArgument("unknown keypoint loss alignment '" + std::string(name) + "' (shifted, same)");
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

int ModelConfig::condLength() const noexcept {
    switch (mode) {
    case ConditioningMode::TextOnly: return 0;
    case ConditioningMode::SkeletonTokens: return imageTokens();
    case ConditioningMode::Kpe: return jointCount(scheme);
    }
    return 0;
}

void ModelConfig::validate() const {
    if (d <= 0 || heads <= 0 || depth <= 0 || mlpRatio <= 0) throw ConfigError("model dimensions must be positive");
    if (d % heads != 0) throw ConfigError("model.d must be divisible by model.heads");
    if (textLength < 1 || textVocab < 1 || imageVocab < 1 || gridHeight < 1 || gridWidth < 1 || maxPeople < 1)
        throw ConfigError("model lengths and vocabularies must be positive");
    if (sequenceLength() > maxSequence)
        throw ConfigError("sequence length " + std::to_string(sequenceLength()) + " exceeds model.max_sequence " +
                          std::to_string(maxSequence));
    if (mode == ConditioningMode::Kpe && kpeEmbedding == KpeEmbedding::ZeroPad && 3 * maxPeople > d)
        throw CapacityError("zero-pad keypoint embedding needs 3*max_people <= d");
}

std::string ModelConfig::serialize() const {
    std::ostringstream os;
    auto dbl = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    os << "d = " << d << '\n'
       << "heads = " << heads << '\n'
       << "depth = " << depth << '\n'
       << "mlp_ratio = " << mlpRatio << '\n'
       << "text_length = " << textLength << '\n'
       << "text_vocab = " << textVocab << '\n'
       << "image_vocab = " << imageVocab << '\n'
       << "grid_height = " << gridHeight << '\n'
       << "grid_width = " << gridWidth << '\n'
       << "mode = " << modeName(mode) << '\n'
       << "scheme = " << schemeName(scheme) << '\n'
       << "max_people = " << maxPeople << '\n'
       << "lambda_image = " << dbl(lambdaImage) << '\n'
       << "lambda_keypoint = " << dbl(lambdaKeypoint) << '\n'
       << "kpe_loss_align = " << alignName(align) << '\n'
       << "kpe_embedding = " << (kpeEmbedding == KpeEmbedding::Linear ? "linear" : "zero_pad") << '\n'
       << "max_sequence = " << maxSequence << '\n'
       << "init_scale = " << dbl(initScale) << '\n';
    return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("model config lacks key ") + key);
        return it->second;
    };
    ModelConfig c;
    try {
        c.d = std::stoi(get("d"));
        c.heads = std::stoi(get("heads"));
        c.depth = std::stoi(get("depth"));
        c.mlpRatio = std::stoi(get("mlp_ratio"));
        c.textLength = std::stoi(get("text_length"));
        c.textVocab = std::stoi(get("text_vocab"));
        c.imageVocab = std::stoi(get("image_vocab"));
        c.gridHeight = std::stoi(get("grid_height"));
        c.gridWidth = std::stoi(get("grid_width"));
        c.mode = parseMode(get("mode"));
        c.scheme = parseScheme(get("scheme"));
        c.maxPeople = std::stoi(get("max_people"));
        c.lambdaImage = std::stod(get("lambda_image"));
        c.lambdaKeypoint = std::stod(get("lambda_keypoint"));
        c.align = parseAlign(get("kpe_loss_align"));
        c.kpeEmbedding = get("kpe_embedding") == "zero_pad" ? KpeEmbedding::ZeroPad : KpeEmbedding::Linear;
        c.maxSequence = std::stoi(get("max_sequence"));
        c.initScale = std::stod(get("init_scale"));
    } catch (const std::logic_error& e) {
        throw FormatError(std::string("bad model config value: ") + e.what());
    }
    return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(serialize()); }

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <class T>
T gelu(T u) {
    return T(0.5) * u * (T(1) + std::tanh(T(kGeluC) * (u + T(0.044715) * u * u * u)));
}

template <class T>
T geluGrad(T u) {
    const T t = std::tanh(T(kGeluC) * (u + T(0.044715) * u * u * u));
    return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * 0.044715) * u * u);
}

template <class T, class G, class B>
void layerNorm(const Mat<T>& x, const G& gain, const B& bias, Mat<T>& xhat, std::vector<T>& rstd, Mat<T>& out) {
    const Eigen::Index n = x.rows();
    xhat.resize(n, x.cols());
    out.resize(n, x.cols());
    rstd.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mean = x.row(i).mean();
        const T var = (x.row(i).array() - mean).square().mean();
        const T r = T(1) / std::sqrt(var + T(kLnEps));
        rstd[static_cast<std::size_t>(i)] = r;
        xhat.row(i) = (x.row(i).array() - mean) * r;
        out.row(i) = xhat.row(i).cwiseProduct(gain.row(0)) + bias.row(0);
    }
}

template <class T, class G, class DG, class DB>
void layerNormBackward(const Mat<T>& dout, const Mat<T>& xhat, const std::vector<T>& rstd, const G& gain, DG dgain,
                       DB dbias, Mat<T>& dx) {
    dgain.row(0) += dout.cwiseProduct(xhat).colwise().sum();
    dbias.row(0) += dout.colwise().sum();
    for (Eigen::Index i = 0; i < dout.rows(); ++i) {
        const RowVec<T> dxhat = dout.row(i).cwiseProduct(gain.row(0));
        const T m1 = dxhat.mean();
        const T m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
        dx.row(i).array() += rstd[static_cast<std::size_t>(i)] * (dxhat.array() - m1 - xhat.row(i).array() * m2);
    }
}

// Causal softmax in place: row i keeps columns [0, offset + i].
template <class T>
void causalSoftmax(Mat<T>& s, int offset) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const Eigen::Index valid = std::min<Eigen::Index>(s.cols(), offset + i + 1);
        auto head = s.row(i).head(valid);
        const T mx = head.maxCoeff();
        head = (head.array() - mx).exp();
        head /= head.sum();
        s.row(i).tail(s.cols() - valid).setZero();
    }
}

// Cross-entropy of one logit row; writes softmax - onehot scaled by `scale`
// into `dlogits` when given.
template <class T>
double crossEntropy(const Eigen::Ref<const RowVec<T>>& logits, int target, T scale, RowVec<T>* dlogits) {
    const T mx = logits.maxCoeff();
    const RowVec<T> e = (logits.array() - mx).exp();
    const T sum = e.sum();
    const double loss = static_cast<double>(std::log(sum) + mx - logits(target));
    if (dlogits) {
        *dlogits = e / sum;
        (*dlogits)(target) -= T(1);
        *dlogits *= scale;
    }
    return loss;
}

struct SegmentRows {
    int textBegin, textEnd;    // prediction positions for text tokens 1..t-1
    int condBegin, condEnd;    // prediction positions for conditioning targets
    int imageBegin, imageEnd;  // prediction positions for image tokens 0..n-1
};

SegmentRows segmentRows(const ModelConfig& c) {
    const int t = c.textLength, nc = c.condLength(), n = c.imageTokens();
    SegmentRows r{0, t - 1, t - 1, t + nc - 1, t + nc - 1, t + nc + n - 1};
    if (c.mode == ConditioningMode::Kpe && c.align == KpeLossAlign::Same) {
        r.condBegin = t;
        r.condEnd = t + nc;
    }
    return r;
}

template <class T>
Mat<T> gatherRows(const Mat<T>& src, int batch, int seqLen, int begin, int end) {
    const int per = end - begin;
    Mat<T> out(batch * per, src.cols());
    for (int b = 0; b < batch; ++b) out.middleRows(b * per, per) = src.middleRows(b * seqLen + begin, per);
    return out;
}

template <class T>
void scatterAddRows(Mat<T>& dst, const Mat<T>& src, int batch, int seqLen, int begin, int end) {
    const int per = end - begin;
    for (int b = 0; b < batch; ++b) dst.middleRows(b * seqLen + begin, per) += src.middleRows(b * per, per);
}

} // namespace

template <class T>
struct Transformer<T>::Cache {
    struct LayerCache {
        Mat<T> xhat1, h1, qkv, attn, xhat2, h2, u, g;
        std::vector<T> rstd1, rstd2;
        std::vector<Mat<T>> probs;  // index b * heads + head
    };
    std::vector<LayerCache> layers;
    Mat<T> xhatF, hf;
    std::vector<T> rstdF;
    Mat<T> kpEmb;
};

template <class T>
Transformer<T>::Transformer(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    build();
}

template <class T>
void Transformer<T>::build() {
    const ModelConfig& c = config_;
    const int d = c.d, f = c.d * c.mlpRatio;
    textEmb_ = params_.add("tok.text", c.textVocab, d);
    textPos_ = params_.add("pos.text", c.textLength, d);
    imageEmb_ = params_.add("tok.image", c.imageVocab, d);
    imageRow_ = params_.add("pos.image_row", c.gridHeight, d);
    imageCol_ = params_.add("pos.image_col", c.gridWidth, d);
    if (c.mode == ConditioningMode::Kpe && c.kpeEmbedding == KpeEmbedding::Linear) {
        kpeW_ = params_.add("kpe.weight", 3 * c.maxPeople, d);
        kpeB_ = params_.add("kpe.bias", 1, d);
    }
    if (c.mode == ConditioningMode::SkeletonTokens) poseEmb_ = params_.add("tok.pose", c.imageVocab, d);
    for (int l = 0; l < c.depth; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        Layer L{};
        L.ln1g = params_.add(p + "ln1.gain", 1, d);
        L.ln1b = params_.add(p + "ln1.bias", 1, d);
        L.wqkv = params_.add(p + "attn.qkv.weight", d, 3 * d);
        L.bqkv = params_.add(p + "attn.qkv.bias", 1, 3 * d);
        L.wo = params_.add(p + "attn.out.weight", d, d);
        L.bo = params_.add(p + "attn.out.bias", 1, d);
        L.ln2g = params_.add(p + "ln2.gain", 1, d);
        L.ln2b = params_.add(p + "ln2.bias", 1, d);
        L.wfc = params_.add(p + "mlp.fc.weight", d, f);
        L.bfc = params_.add(p + "mlp.fc.bias", 1, f);
        L.wproj = params_.add(p + "mlp.proj.weight", f, d);
        L.bproj = params_.add(p + "mlp.proj.bias", 1, d);
        layers_.push_back(L);
    }
    lnfG_ = params_.add("ln_f.gain", 1, d);
    lnfB_ = params_.add("ln_f.bias", 1, d);
    headTextW_ = params_.add("head.text.weight", d, c.textVocab);
    headTextB_ = params_.add("head.text.bias", 1, c.textVocab);
    headImageW_ = params_.add("head.image.weight", d, c.imageVocab);
    headImageB_ = params_.add("head.image.bias", 1, c.imageVocab);
    if (c.mode == ConditioningMode::Kpe) {
        headCondW_ = params_.add("head.keypoint.weight", d, d);
        headCondB_ = params_.add("head.keypoint.bias", 1, d);
    } else if (c.mode == ConditioningMode::SkeletonTokens) {
        headCondW_ = params_.add("head.pose.weight", d, c.imageVocab);
        headCondB_ = params_.add("head.pose.bias", 1, c.imageVocab);
    }
}

template <class T>
void Transformer<T>::initialize(std::uint64_t seed) {
    Rng rng(seed);
    const double a = config_.initScale * std::sqrt(3.0);
    for (std::size_t i = 0; i < params_.slots().size(); ++i) {
        const std::string& name = params_.slots()[i].name;
        auto m = params_[static_cast<int>(i)];
        const bool isGain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
        const bool isBias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
        if (isGain) {
            m.setOnes();
        } else if (isBias) {
            m.setZero();
        } else {
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<T>(rng.uniform(-a, a));
        }
    }
}

template <class T>
template <class U>
Transformer<U> Transformer<T>::cast() const {
    Transformer<U> out(config_);
    out.params_ = params_.template cast<U>();
    return out;
}

template <class T>
void Transformer<T>::setParams(ParamStore<T> params) {
    if (!params.sameLayout(params_)) throw FormatError("parameter layout does not match the model configuration");
    params_ = std::move(params);
}

template <class T>
void Transformer<T>::checkBatch(const SequenceBatch& batch) const {
    const ModelConfig& c = config_;
    if (batch.examples.empty()) throw InvalidArgument("empty batch");
    auto inRange = [](const std::vector<int>& ids, int vocab) {
        return std::all_of(ids.begin(), ids.end(), [vocab](int id) { return id >= 0 && id < vocab; });
    };
    for (const SequenceExample* ex : batch.examples) {
        if (static_cast<int>(ex->text.size()) != c.textLength) throw InvalidArgument("text length mismatch");
        if (!inRange(ex->text, c.textVocab)) throw InvalidArgument("text id outside vocabulary");
        if (static_cast<int>(ex->image.size()) != c.imageTokens()) throw InvalidArgument("image token count mismatch");
        if (!inRange(ex->image, c.imageVocab)) throw InvalidArgument("image id outside vocabulary");
        if (c.mode == ConditioningMode::Kpe) {
            if (ex->keypoints.rows() != c.condLength() || ex->keypoints.cols() != 3 * c.maxPeople)
                throw InvalidArgument("keypoint token block has shape " + std::to_string(ex->keypoints.rows()) + "x" +
                                      std::to_string(ex->keypoints.cols()) + ", model expects " +
                                      std::to_string(c.condLength()) + "x" + std::to_string(3 * c.maxPeople));
        } else if (c.mode == ConditioningMode::SkeletonTokens) {
            if (static_cast<int>(ex->pose.size()) != c.condLength()) throw InvalidArgument("pose token count mismatch");
            if (!inRange(ex->pose, c.imageVocab)) throw InvalidArgument("pose id outside vocabulary");
        }
    }
}

template <class T>
void Transformer<T>::embedImageRow(Eigen::Ref<RowVec<T>> row, int token, int index, bool pose) const {
    const int r = index / config_.gridWidth, col = index % config_.gridWidth;
    row = params_[pose ? poseEmb_ : imageEmb_].row(token) + params_[imageRow_].row(r) + params_[imageCol_].row(col);
}

template <class T>
Mat<T> Transformer<T>::embed(const SequenceBatch& batch, Mat<T>& kpEmbeddings) const {
    const ModelConfig& c = config_;
    const int B = batch.size(), L = c.sequenceLength(), t = c.textLength, nc = c.condLength();
    Mat<T> x = Mat<T>::Zero(B * L, c.d);
    if (c.mode == ConditioningMode::Kpe) kpEmbeddings.resize(B * nc, c.d);
    for (int b = 0; b < B; ++b) {
        const SequenceExample& ex = *batch.examples[static_cast<std::size_t>(b)];
        const int base = b * L;
        for (int p = 0; p < t; ++p)
            x.row(base + p) = params_[textEmb_].row(ex.text[static_cast<std::size_t>(p)]) + params_[textPos_].row(p);
        if (c.mode == ConditioningMode::Kpe) {
            Mat<T> e;
            if (c.kpeEmbedding == KpeEmbedding::Linear) {
                const KpeProjection<T> proj{params_[kpeW_], params_[kpeB_].row(0), true};
                e = embedLinear(ex.keypoints, proj);
            } else {
                e = embedZeroPad(ex.keypoints, c.d).template cast<T>();
            }
            kpEmbeddings.middleRows(b * nc, nc) = e;
            x.middleRows(base + t, nc) = e;
        } else if (c.mode == ConditioningMode::SkeletonTokens) {
            for (int k = 0; k < nc; ++k) {
                RowVec<T> row(c.d);
                embedImageRow(row, ex.pose[static_cast<std::size_t>(k)], k, true);
                x.row(base + t + k) = row;
            }
        }
        for (int k = 0; k < c.imageTokens(); ++k) {
            RowVec<T> row(c.d);
            embedImageRow(row, ex.image[static_cast<std::size_t>(k)], k, false);
            x.row(base + t + nc + k) = row;
        }
    }
    return x;
}

template <class T>
ModelOutput<T> Transformer<T>::run(const SequenceBatch& batch, Cache* cache) const {
    checkBatch(batch);
    const ModelConfig& c = config_;
    const int B = batch.size(), L = c.sequenceLength(), H = c.heads, hd = c.headDim(), d = c.d;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    Mat<T> kpEmb;
    Mat<T> x = embed(batch, kpEmb);
    if (cache) {
        cache->layers.assign(layers_.size(), {});
        cache->kpEmb = kpEmb;
    }

    Mat<T> xhat, h, qkv, attn, s, u, g;
    std::vector<T> rstd;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& P = layers_[l];
        layerNorm(x, params_[P.ln1g], params_[P.ln1b], xhat, rstd, h);
        qkv.noalias() = h * params_[P.wqkv];
        qkv.rowwise() += params_[P.bqkv].row(0);
        attn.setZero(B * L, d);
        typename Cache::LayerCache* lc = cache ? &cache->layers[l] : nullptr;
        if (lc) {
            lc->xhat1 = xhat;
            lc->rstd1 = rstd;
            lc->h1 = h;
            lc->qkv = qkv;
            lc->probs.resize(static_cast<std::size_t>(B * H));
        }
        for (int b = 0; b < B; ++b)
            for (int k = 0; k < H; ++k) {
                const auto q = qkv.block(b * L, k * hd, L, hd);
                const auto kk = qkv.block(b * L, d + k * hd, L, hd);
                const auto v = qkv.block(b * L, 2 * d + k * hd, L, hd);
                s.noalias() = (q * kk.transpose()) * scale;
                causalSoftmax(s, 0);
                attn.block(b * L, k * hd, L, hd).noalias() = s * v;
                if (lc) lc->probs[static_cast<std::size_t>(b * H + k)] = s;
            }
        if (lc) lc->attn = attn;
        x.noalias() += attn * params_[P.wo];
        x.rowwise() += params_[P.bo].row(0);

        layerNorm(x, params_[P.ln2g], params_[P.ln2b], xhat, rstd, h);
        u.noalias() = h * params_[P.wfc];
        u.rowwise() += params_[P.bfc].row(0);
        g = u.unaryExpr([](T v) { return gelu(v); });
        x.noalias() += g * params_[P.wproj];
        x.rowwise() += params_[P.bproj].row(0);
        if (lc) {
            lc->xhat2 = xhat;
            lc->rstd2 = rstd;
            lc->h2 = h;
            lc->u = u;
            lc->g = g;
        }
    }
    Mat<T> hf;
    layerNorm(x, params_[lnfG_], params_[lnfB_], xhat, rstd, hf);

    const SegmentRows rows = segmentRows(c);
    ModelOutput<T> out;
    out.textLogits = gatherRows(hf, B, L, rows.textBegin, rows.textEnd) * params_[headTextW_];
    out.textLogits.rowwise() += params_[headTextB_].row(0);
    out.imageLogits = gatherRows(hf, B, L, rows.imageBegin, rows.imageEnd) * params_[headImageW_];
    out.imageLogits.rowwise() += params_[headImageB_].row(0);
    if (c.mode != ConditioningMode::TextOnly) {
        out.condOutput = gatherRows(hf, B, L, rows.condBegin, rows.condEnd) * params_[headCondW_];
        out.condOutput.rowwise() += params_[headCondB_].row(0);
    }
    if (c.mode == ConditioningMode::Kpe) out.condTargets = kpEmb;
    if (cache) {
        cache->xhatF = xhat;
        cache->rstdF = rstd;
        cache->hf = std::move(hf);
    }
    return out;
}

template <class T>
ModelOutput<T> Transformer<T>::forward(const SequenceBatch& batch) const {
    return run(batch, nullptr);
}

template <class T>
LossBreakdown Transformer<T>::lossFromOutput(const SequenceBatch& batch, const ModelOutput<T>& out,
                                             const Mat<T>* frozenTargets) const {
    const ModelConfig& c = config_;
    const int B = batch.size(), t = c.textLength, nc = c.condLength(), n = c.imageTokens();
    LossBreakdown lb;
    int textCount = 0;
    for (int b = 0; b < B; ++b)
        for (int p = 0; p + 1 < t; ++p) {
            const int target = batch.examples[static_cast<std::size_t>(b)]->text[static_cast<std::size_t>(p + 1)];
            if (target == 0) continue;  // pad
            lb.text += crossEntropy<T>(out.textLogits.row(b * (t - 1) + p), target, T(1), nullptr);
            ++textCount;
        }
    if (textCount > 0) lb.text /= textCount;
    for (int b = 0; b < B; ++b)
        for (int k = 0; k < n; ++k)
            lb.image += crossEntropy<T>(out.imageLogits.row(b * n + k),
                                        batch.examples[static_cast<std::size_t>(b)]->image[static_cast<std::size_t>(k)],
                                        T(1), nullptr);
    lb.image /= static_cast<double>(B * n);
    if (c.mode == ConditioningMode::Kpe) {
        const Mat<T>& targets = frozenTargets ? *frozenTargets : out.condTargets;
        lb.cond = static_cast<double>((out.condOutput - targets).squaredNorm()) / static_cast<double>(B * nc * c.d);
    } else if (c.mode == ConditioningMode::SkeletonTokens) {
        for (int b = 0; b < B; ++b)
            for (int k = 0; k < nc; ++k)
                lb.cond += crossEntropy<T>(out.condOutput.row(b * nc + k),
                                           batch.examples[static_cast<std::size_t>(b)]->pose[static_cast<std::size_t>(k)],
                                           T(1), nullptr);
        lb.cond /= static_cast<double>(B * nc);
    }
    lb.total = lb.text + c.lambdaImage * lb.image + c.lambdaKeypoint * lb.cond;
    return lb;
}

template <class T>
LossBreakdown Transformer<T>::loss(const SequenceBatch& batch, const Mat<T>* frozenTargets) const {
    return lossFromOutput(batch, forward(batch), frozenTargets);
}

template <class T>
LossBreakdown Transformer<T>::lossAndGradient(const SequenceBatch& batch, ParamStore<T>& grad) const {
    if (!grad.sameLayout(params_)) grad = params_.zerosLike();
    const ModelConfig& c = config_;
    const int B = batch.size(), L = c.sequenceLength(), t = c.textLength, nc = c.condLength(), n = c.imageTokens();
    const int H = c.heads, hd = c.headDim(), d = c.d;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    Cache cache;
    const ModelOutput<T> out = run(batch, &cache);
    const LossBreakdown lb = lossFromOutput(batch, out);
    const SegmentRows rows = segmentRows(c);

    // Output-head gradients.
    Mat<T> dText = Mat<T>::Zero(out.textLogits.rows(), out.textLogits.cols());
    int textCount = 0;
    for (int b = 0; b < B; ++b)
        for (int p = 0; p + 1 < t; ++p)
            if (batch.examples[static_cast<std::size_t>(b)]->text[static_cast<std::size_t>(p + 1)] != 0) ++textCount;
    RowVec<T> dl;
    if (textCount > 0) {
        const T w = T(1) / static_cast<T>(textCount);
        for (int b = 0; b < B; ++b)
            for (int p = 0; p + 1 < t; ++p) {
                const int target = batch.examples[static_cast<std::size_t>(b)]->text[static_cast<std::size_t>(p + 1)];
                if (target == 0) continue;
                crossEntropy<T>(out.textLogits.row(b * (t - 1) + p), target, w, &dl);
                dText.row(b * (t - 1) + p) = dl;
            }
    }
    Mat<T> dImage(out.imageLogits.rows(), out.imageLogits.cols());
    {
        const T w = static_cast<T>(c.lambdaImage) / static_cast<T>(B * n);
        for (int b = 0; b < B; ++b)
            for (int k = 0; k < n; ++k) {
                crossEntropy<T>(out.imageLogits.row(b * n + k),
                                batch.examples[static_cast<std::size_t>(b)]->image[static_cast<std::size_t>(k)], w, &dl);
                dImage.row(b * n + k) = dl;
            }
    }
    Mat<T> dCond;
    if (c.mode == ConditioningMode::Kpe) {
        dCond = (out.condOutput - out.condTargets) *
                static_cast<T>(2.0 * c.lambdaKeypoint / static_cast<double>(B * nc * c.d));
    } else if (c.mode == ConditioningMode::SkeletonTokens) {
        dCond.resize(out.condOutput.rows(), out.condOutput.cols());
        const T w = static_cast<T>(c.lambdaKeypoint) / static_cast<T>(B * nc);
        for (int b = 0; b < B; ++b)
            for (int k = 0; k < nc; ++k) {
                crossEntropy<T>(out.condOutput.row(b * nc + k),
                                batch.examples[static_cast<std::size_t>(b)]->pose[static_cast<std::size_t>(k)], w, &dl);
                dCond.row(b * nc + k) = dl;
            }
    }

    Mat<T> dhf = Mat<T>::Zero(B * L, d);
    auto headBackward = [&](const Mat<T>& dLogits, int wIdx, int bIdx, int begin, int end) {
        const Mat<T> inputs = gatherRows(cache.hf, B, L, begin, end);
        grad[wIdx].noalias() += inputs.transpose() * dLogits;
        grad[bIdx] += dLogits.colwise().sum();
        const Mat<T> dIn = dLogits * params_[wIdx].transpose();
        scatterAddRows(dhf, dIn, B, L, begin, end);
    };
    headBackward(dText, headTextW_, headTextB_, rows.textBegin, rows.textEnd);
    headBackward(dImage, headImageW_, headImageB_, rows.imageBegin, rows.imageEnd);
    if (c.mode != ConditioningMode::TextOnly) headBackward(dCond, headCondW_, headCondB_, rows.condBegin, rows.condEnd);

    Mat<T> dx = Mat<T>::Zero(B * L, d);
    layerNormBackward(dhf, cache.xhatF, cache.rstdF, params_[lnfG_], grad[lnfG_], grad[lnfB_], dx);

    Mat<T> dG, dU, dh, dAttn, dQkv, dP, dS;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Layer& P = layers_[li];
        const auto& lc = cache.layers[li];
        // MLP residual branch.
        grad[P.wproj].noalias() += lc.g.transpose() * dx;
        grad[P.bproj] += dx.colwise().sum();
        dG.noalias() = dx * params_[P.wproj].transpose();
        dU = dG.cwiseProduct(lc.u.unaryExpr([](T v) { return geluGrad(v); }));
        grad[P.wfc].noalias() += lc.h2.transpose() * dU;
        grad[P.bfc] += dU.colwise().sum();
        dh.noalias() = dU * params_[P.wfc].transpose();
        layerNormBackward(dh, lc.xhat2, lc.rstd2, params_[P.ln2g], grad[P.ln2g], grad[P.ln2b], dx);

        // Attention residual branch.
        grad[P.wo].noalias() += lc.attn.transpose() * dx;
        grad[P.bo] += dx.colwise().sum();
        dAttn.noalias() = dx * params_[P.wo].transpose();
        dQkv.setZero(B * L, 3 * d);
        for (int b = 0; b < B; ++b)
            for (int k = 0; k < H; ++k) {
                const Mat<T>& prob = lc.probs[static_cast<std::size_t>(b * H + k)];
                const auto q = lc.qkv.block(b * L, k * hd, L, hd);
                const auto kk = lc.qkv.block(b * L, d + k * hd, L, hd);
                const auto v = lc.qkv.block(b * L, 2 * d + k * hd, L, hd);
                const auto dA = dAttn.block(b * L, k * hd, L, hd);
                dP.noalias() = dA * v.transpose();
                dQkv.block(b * L, 2 * d + k * hd, L, hd).noalias() += prob.transpose() * dA;
                dS.resize(L, L);
                for (int i = 0; i < L; ++i) {
                    const T dot = prob.row(i).head(i + 1).dot(dP.row(i).head(i + 1));
                    dS.row(i).head(i + 1) = prob.row(i).head(i + 1).cwiseProduct(
                        (dP.row(i).head(i + 1).array() - dot).matrix());
                    dS.row(i).tail(L - i - 1).setZero();
                }
                dS *= scale;
                dQkv.block(b * L, k * hd, L, hd).noalias() += dS * kk;
                dQkv.block(b * L, d + k * hd, L, hd).noalias() += dS.transpose() * q;
            }
        grad[P.wqkv].noalias() += lc.h1.transpose() * dQkv;
        grad[P.bqkv] += dQkv.colwise().sum();
        dh.noalias() = dQkv * params_[P.wqkv].transpose();
        layerNormBackward(dh, lc.xhat1, lc.rstd1, params_[P.ln1g], grad[P.ln1g], grad[P.ln1b], dx);
    }

    // Embedding gradients.
    for (int b = 0; b < B; ++b) {
        const SequenceExample& ex = *batch.examples[static_cast<std::size_t>(b)];
        const int base = b * L;
        for (int p = 0; p < t; ++p) {
            grad[textEmb_].row(ex.text[static_cast<std::size_t>(p)]) += dx.row(base + p);
            grad[textPos_].row(p) += dx.row(base + p);
        }
        if (c.mode == ConditioningMode::Kpe && c.kpeEmbedding == KpeEmbedding::Linear) {
            const KpeProjection<T> proj{params_[kpeW_], params_[kpeB_].row(0), true};
            KpeProjectionGrad<T> pg{Mat<T>::Zero(proj.weights.rows(), proj.weights.cols()), RowVec<T>::Zero(d)};
            embedLinearBackward(ex.keypoints, proj, Mat<T>(dx.middleRows(base + t, nc)), pg);
            grad[kpeW_] += pg.weights;
            grad[kpeB_] += pg.bias;
        } else if (c.mode == ConditioningMode::SkeletonTokens) {
            for (int k = 0; k < nc; ++k) {
                const auto row = dx.row(base + t + k);
                grad[poseEmb_].row(ex.pose[static_cast<std::size_t>(k)]) += row;
                grad[imageRow_].row(k / c.gridWidth) += row;
                grad[imageCol_].row(k % c.gridWidth) += row;
            }
        }
        for (int k = 0; k < n; ++k) {
            const auto row = dx.row(base + t + nc + k);
            grad[imageEmb_].row(ex.image[static_cast<std::size_t>(k)]) += row;
            grad[imageRow_].row(k / c.gridWidth) += row;
            grad[imageCol_].row(k % c.gridWidth) += row;
        }
    }
    return lb;
}

template <class T>
DecodeState<T> Transformer<T>::beginDecode() const {
    DecodeState<T> s;
    s.keys.assign(layers_.size(), Mat<T>::Zero(config_.sequenceLength(), config_.d));
    s.values.assign(layers_.size(), Mat<T>::Zero(config_.sequenceLength(), config_.d));
    return s;
}

template <class T>
Mat<T> Transformer<T>::runRows(DecodeState<T>& state, const Mat<T>& rows) const {
    const ModelConfig& c = config_;
    const int n = static_cast<int>(rows.rows()), start = state.length, H = c.heads, hd = c.headDim(), d = c.d;
    if (start + n > c.sequenceLength()) throw InvalidArgument("decode past the configured sequence length");
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Mat<T> x = rows, xhat, h, qkv, attn, s, u, g;
    std::vector<T> rstd;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& P = layers_[l];
        layerNorm(x, params_[P.ln1g], params_[P.ln1b], xhat, rstd, h);
        qkv.noalias() = h * params_[P.wqkv];
        qkv.rowwise() += params_[P.bqkv].row(0);
        state.keys[l].middleRows(start, n) = qkv.middleCols(d, d);
        state.values[l].middleRows(start, n) = qkv.middleCols(2 * d, d);
        attn.setZero(n, d);
        for (int k = 0; k < H; ++k) {
            const auto kk = state.keys[l].block(0, k * hd, start + n, hd);
            const auto v = state.values[l].block(0, k * hd, start + n, hd);
            s.noalias() = (qkv.block(0, k * hd, n, hd) * kk.transpose()) * scale;
            causalSoftmax(s, start);
            attn.middleCols(k * hd, hd).noalias() = s * v;
        }
        x.noalias() += attn * params_[P.wo];
        x.rowwise() += params_[P.bo].row(0);
        layerNorm(x, params_[P.ln2g], params_[P.ln2b], xhat, rstd, h);
        u.noalias() = h * params_[P.wfc];
        u.rowwise() += params_[P.bfc].row(0);
        g = u.unaryExpr([](T v) { return gelu(v); });
        x.noalias() += g * params_[P.wproj];
        x.rowwise() += params_[P.bproj].row(0);
    }
    Mat<T> hf;
    layerNorm(x, params_[lnfG_], params_[lnfB_], xhat, rstd, hf);
    state.length += n;
    return hf;
}

template <class T>
RowVec<T> Transformer<T>::prefill(DecodeState<T>& state, const std::vector<int>& text, const Conditioning& cond) const {
    const ModelConfig& c = config_;
    SequenceExample ex;
    ex.text = text;
    ex.image.assign(static_cast<std::size_t>(c.imageTokens()), 0);
    switch (c.mode) {
    case ConditioningMode::TextOnly:
        if (!std::holds_alternative<std::monostate>(cond))
            throw InvalidArgument("text-only model takes no pose conditioning");
        break;
    case ConditioningMode::Kpe:
        if (!std::holds_alternative<KeypointTokenMatrix>(cond))
            throw InvalidArgument("KPE model needs a keypoint token block");
        ex.keypoints = std::get<KeypointTokenMatrix>(cond);
        break;
    case ConditioningMode::SkeletonTokens:
        if (!std::holds_alternative<std::vector<int>>(cond))
            throw InvalidArgument("skeleton model needs pose image tokens");
        ex.pose = std::get<std::vector<int>>(cond);
        break;
    }
    const SequenceBatch batch{{&ex}};
    checkBatch(batch);
    Mat<T> kp;
    const Mat<T> all = embed(batch, kp);
    const int prefix = c.textLength + c.condLength();
    state = beginDecode();
    const Mat<T> hf = runRows(state, all.topRows(prefix));
    RowVec<T> logits = hf.row(prefix - 1) * params_[headImageW_];
    logits += params_[headImageB_].row(0);
    return logits;
}

template <class T>
RowVec<T> Transformer<T>::advance(DecodeState<T>& state, int token, int index) const {
    if (token < 0 || token >= config_.imageVocab) throw InvalidArgument("image token outside vocabulary");
    if (index < 0 || index >= config_.imageTokens()) throw InvalidArgument("image token index out of range");
    Mat<T> row(1, config_.d);
    embedImageRow(row.row(0), token, index, false);
    const Mat<T> hf = runRows(state, row);
    RowVec<T> logits = hf.row(0) * params_[headImageW_];
    logits += params_[headImageB_].row(0);
    return logits;
}

template class Transformer<float>;
template class Transformer<double>;
template Transformer<double> Transformer<float>::cast<double>() const;
template Transformer<float> Transformer<double>::cast<float>() const;

} // namespace kpeforge
