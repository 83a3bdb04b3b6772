#pragma once

#include "kpe_forge/kpe.hpp"
#include "kpe_forge/params.hpp"
#include "kpe_forge/pose.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace kpeforge {

enum class ConditioningMode { TextOnly, SkeletonTokens, Kpe };

std::string_view modeName(ConditioningMode mode) noexcept;
ConditioningMode parseMode(std::string_view name);

// Which keypoint embedding the L2 head regresses: the next position's
// (shifted, default) or the one at the same position.
enum class KpeLossAlign { Shifted, Same };
std::string_view alignName(KpeLossAlign align) noexcept;
KpeLossAlign parseAlign(std::string_view name);

enum class KpeEmbedding { Linear, ZeroPad };

struct ModelConfig {
    int d{64};
    int heads{4};
    int depth{2};
    int mlpRatio{4};
    int textLength{16};
    int textVocab{64};
    int imageVocab{64};
    int gridHeight{8};
    int gridWidth{8};
    ConditioningMode mode{ConditioningMode::Kpe};
    JointScheme scheme{JointScheme::Skel13};
    int maxPeople{3};
    double lambdaImage{7.0};
    double lambdaKeypoint{10.0};
    KpeLossAlign align{KpeLossAlign::Shifted};
    KpeEmbedding kpeEmbedding{KpeEmbedding::Linear};
    int maxSequence{2048};
    double initScale{0.02};

    int imageTokens() const noexcept { return gridHeight * gridWidth; }
    // 0 (text only), imageTokens (skeleton), N joints (KPE).
    int condLength() const noexcept;
    int sequenceLength() const noexcept { return textLength + condLength() + imageTokens(); }
    int headDim() const noexcept { return d / heads; }

    void validate() const;
    // "key = value" lines in a fixed key order.
    std::string serialize() const;
    static ModelConfig parse(const std::string& text);
    std::uint64_t hash() const;
};

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// One training/evaluation example in token form.
struct SequenceExample {
    std::vector<int> text;          // textLength ids
    KeypointTokenMatrix keypoints;  // KPE mode
    std::vector<int> pose;          // skeleton mode, imageTokens ids
    std::vector<int> image;         // imageTokens ids
};

struct SequenceBatch {
    std::vector<const SequenceExample*> examples;
    int size() const noexcept { return static_cast<int>(examples.size()); }
};

struct LossBreakdown {
    double text{0.0};
    double image{0.0};
    double cond{0.0};
    double total{0.0};
};

// Conditioning passed to incremental decoding.
using Conditioning = std::variant<std::monostate, KeypointTokenMatrix, std::vector<int>>;

template <class T>
struct DecodeState {
    int length{0};
    std::vector<Mat<T>> keys;
    std::vector<Mat<T>> values;
};

template <class T>
struct ModelOutput {
    // Row b*(textLength-1)+p predicts text token p+1 of example b.
    Mat<T> textLogits;
    // KPE: predicted keypoint vectors (B*condLength x d); skeleton: pose logits.
    Mat<T> condOutput;
    // Row b*imageTokens+k predicts image token k.
    Mat<T> imageLogits;
    // KPE only: the keypoint embeddings the L2 term regresses (B*condLength x d).
    Mat<T> condTargets;
};

/// Decoder-only transformer over [text | conditioning | image] with causal
/// self-attention, pre-norm blocks and separate output heads per segment.
/// Keypoint positions get no positional encoding.
template <class T>
class Transformer {
public:
    explicit Transformer(ModelConfig config);

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore<T>& params() noexcept { return params_; }
    const ParamStore<T>& params() const noexcept { return params_; }

    // Small uniform weights (std = initScale), unit LayerNorm gains.
    void initialize(std::uint64_t seed);

    ModelOutput<T> forward(const SequenceBatch& batch) const;

    /// L = L_T + lambdaImage * L_I + lambdaKeypoint * L_K. Cross-entropy terms
    /// are means over predicted tokens (text pads excluded); the KPE term is the
    /// mean squared error against stop-gradient keypoint embeddings.
    /// `frozenTargets` replaces the KPE targets (finite-difference oracle).
    LossBreakdown loss(const SequenceBatch& batch, const Mat<T>* frozenTargets = nullptr) const;
    LossBreakdown lossFromOutput(const SequenceBatch& batch, const ModelOutput<T>& out,
                                 const Mat<T>* frozenTargets = nullptr) const;

    // Adds dL/dparams into `grad` (resized to the parameter layout if needed).
    LossBreakdown lossAndGradient(const SequenceBatch& batch, ParamStore<T>& grad) const;

    // Incremental decoding with a key/value cache.
    DecodeState<T> beginDecode() const;
    // Feeds text and conditioning; returns logits for image token 0.
    RowVec<T> prefill(DecodeState<T>& state, const std::vector<int>& text, const Conditioning& cond) const;
    // Appends image token `index`; returns logits for image token index+1.
    RowVec<T> advance(DecodeState<T>& state, int token, int index) const;

    template <class U>
    Transformer<U> cast() const;
    void setParams(ParamStore<T> params);

private:
    template <class>
    friend class Transformer;
    struct Cache;
    struct Layer {
        int ln1g, ln1b, wqkv, bqkv, wo, bo, ln2g, ln2b, wfc, bfc, wproj, bproj;
    };

    void build();
    void checkBatch(const SequenceBatch& batch) const;
    Mat<T> embed(const SequenceBatch& batch, Mat<T>& kpEmbeddings) const;
    ModelOutput<T> run(const SequenceBatch& batch, Cache* cache) const;
    Mat<T> runRows(DecodeState<T>& state, const Mat<T>& rows) const;
    void embedImageRow(Eigen::Ref<RowVec<T>> row, int token, int index, bool pose) const;

    ModelConfig config_;
    ParamStore<T> params_;
    int textEmb_{-1}, textPos_{-1}, imageEmb_{-1}, imageRow_{-1}, imageCol_{-1}, poseEmb_{-1};
    int kpeW_{-1}, kpeB_{-1};
    std::vector<Layer> layers_;
    int lnfG_{-1}, lnfB_{-1};
    int headTextW_{-1}, headTextB_{-1}, headImageW_{-1}, headImageB_{-1};
    int headCondW_{-1}, headCondB_{-1};
};

} // namespace kpeforge
