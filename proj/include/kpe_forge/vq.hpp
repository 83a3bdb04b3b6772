#pragma once

#include "kpe_forge/adam.hpp"
#include "kpe_forge/image.hpp"
#include "kpe_forge/params.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace kpeforge {

// Image shape handled by a VQ model; h = H / patch, w = W / patch.
struct PatchGeometry {
    int width{32};
    int height{32};
    int channels{3};
    int patch{4};

    int gridWidth() const noexcept { return width / patch; }
    int gridHeight() const noexcept { return height / patch; }
    int tokens() const noexcept { return gridWidth() * gridHeight(); }
    int patchDim() const noexcept { return patch * patch * channels; }
    void validate() const;
    friend bool operator==(const PatchGeometry&, const PatchGeometry&) = default;
};

// Row-major h x w grid of codebook indices.
struct TokenGrid {
    int height{0};
    int width{0};
    std::vector<int> ids;

    friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

/// Per-patch linear autoencoder with a vector-quantized bottleneck:
/// code = patch * encoder + encoderBias, quantized to the nearest codebook
/// row, and decoded by patch = code * decoder + decoderBias.
template <class T>
class VqModel {
public:
    VqModel() = default;
    VqModel(PatchGeometry geometry, int codeDim, int codebookSize);

    const PatchGeometry& geometry() const noexcept { return geometry_; }
    int codeDim() const noexcept { return codeDim_; }
    int codebookSize() const noexcept { return codebookSize_; }

    auto encoder() noexcept { return params_[encW_]; }
    auto encoder() const noexcept { return params_[encW_]; }
    auto encoderBias() noexcept { return params_[encB_]; }
    auto encoderBias() const noexcept { return params_[encB_]; }
    auto decoder() noexcept { return params_[decW_]; }
    auto decoder() const noexcept { return params_[decW_]; }
    auto decoderBias() noexcept { return params_[decB_]; }
    auto decoderBias() const noexcept { return params_[decB_]; }
    auto codebook() noexcept { return params_[code_]; }
    auto codebook() const noexcept { return params_[code_]; }

    ParamStore<T>& params() noexcept { return params_; }
    const ParamStore<T>& params() const noexcept { return params_; }

    // Codebook rows finite and pairwise distinct.
    void validateCodebook() const;

    template <class U>
    VqModel<U> cast() const;

    // Adopts a parameter store read from disk (layout must match).
    void setParams(ParamStore<T> params);

private:
    template <class>
    friend class VqModel;

    PatchGeometry geometry_{};
    int codeDim_{0};
    int codebookSize_{0};
    ParamStore<T> params_;
    int encW_{0}, encB_{0}, decW_{0}, decB_{0}, code_{0};
};

// Image -> (tokens x patchDim) patch rows in grid order.
template <class T>
Mat<T> extractPatches(const Image& image, const PatchGeometry& g);
Image assemblePatches(const Mat<float>& patches, const PatchGeometry& g);

// Nearest codebook row per code row; ties go to the lowest index.
template <class T>
std::vector<int> quantize(const Mat<T>& codes, const Mat<T>& codebook);

template <class T>
Mat<T> encodeCodes(const Image& image, const VqModel<T>& model);

template <class T>
TokenGrid encodeImage(const Image& image, const VqModel<T>& model);

// Codebook lookup, linear decode, reassembly, clamp to [0,1].
template <class T>
Image decodeTokens(const TokenGrid& tokens, const VqModel<T>& model);

struct VqLossTerms {
    double reconstruction{0.0};
    double codebook{0.0};
    double commitment{0.0};
    double total() const noexcept { return reconstruction + codebook + commitment; }
};

// Which terms contribute gradients (all by default).
struct VqTermMask {
    bool reconstruction{true};
    bool codebook{true};
    bool commitment{true};
};

// Values held fixed by the stop-gradients at a base point; lets a finite
// difference oracle evaluate the same surrogate whose gradient vqLoss returns.
template <class T>
struct VqFrozen {
    std::vector<std::vector<int>> ids;
    std::vector<Mat<T>> codes;
    std::vector<Mat<T>> quantized;
};

/// ||x - x_hat||^2 + ||sg[E(x)] - z_q||^2 + ||sg[z_q] - E(x)||^2 averaged over
/// images, with straight-through copying of the reconstruction gradient from
/// z_q to E(x). Sums run over every pixel/code element of an image.
/// When `grad` is non-null it receives the (image-averaged) gradients.
template <class T>
VqLossTerms vqLoss(std::span<const Image> images, const VqModel<T>& model, ParamStore<T>* grad = nullptr,
                   VqTermMask mask = {}, const VqFrozen<T>* frozen = nullptr, VqFrozen<T>* capture = nullptr);

struct VqTrainConfig {
    PatchGeometry geometry{};
    int codeDim{16};
    int codebookSize{64};
    int kmeansIterations{25};
    int epochs{8};
    int batchSize{16};
    AdamHyper adam{1e-3, 0.9, 0.999, 1e-8};
};

struct VqTrainResult {
    VqModel<float> model;
    std::vector<double> epochLoss;  // mean vqLoss per image, one entry per epoch
};

/// PCA-initialized linear encoder/decoder, k-means codebook over encoded
/// patches, then Adam on vqLoss. Deterministic for a given seed.
VqTrainResult trainCodebook(std::span<const Image> images, const VqTrainConfig& config, std::uint64_t seed);

// Mean squared pixel error of encode -> decode over a set of images.
double reconstructionMse(std::span<const Image> images, const VqModel<float>& model);

} // namespace kpeforge
