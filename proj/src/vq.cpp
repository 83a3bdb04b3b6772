#include "kpe_forge/vq.hpp"

#include "kpe_forge/error.hpp"
#include "kpe_forge/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kpeforge {

void PatchGeometry::validate() const {
    if (width <= 0 || height <= 0 || channels <= 0 || patch <= 0)
        throw InvalidArgument("patch geometry dimensions must be positive");
    if (width % patch != 0 || height % patch != 0)
        throw InvalidArgument("image " + std::to_string(width) + "x" + std::to_string(height) +
                              " is not divisible by patch size " + std::to_string(patch));
}

template <class T>
VqModel<T>::VqModel(PatchGeometry geometry, int codeDim, int codebookSize)
    : geometry_(geometry), codeDim_(codeDim), codebookSize_(codebookSize) {
    geometry_.validate();
    if (codeDim <= 0 || codebookSize <= 0) throw InvalidArgument("code dimension and codebook size must be positive");
    const int d = geometry_.patchDim();
    encW_ = params_.add("vq.encoder", d, codeDim);
    encB_ = params_.add("vq.encoder_bias", 1, codeDim);
    decW_ = params_.add("vq.decoder", codeDim, d);
    decB_ = params_.add("vq.decoder_bias", 1, d);
    code_ = params_.add("vq.codebook", codebookSize, codeDim);
}

template <class T>
void VqModel<T>::validateCodebook() const {
    auto cb = codebook();
    if (!cb.allFinite()) throw InvalidArgument("codebook contains non-finite values");
    for (int i = 0; i < cb.rows(); ++i)
        for (int j = i + 1; j < cb.rows(); ++j)
            if (cb.row(i) == cb.row(j))
                throw InvalidArgument("codebook entries " + std::to_string(i) + " and " + std::to_string(j) +
                                      " are identical");
}

template <class T>
template <class U>
VqModel<U> VqModel<T>::cast() const {
    VqModel<U> out(geometry_, codeDim_, codebookSize_);
    out.params_ = params_.template cast<U>();
    return out;
}

template <class T>
void VqModel<T>::setParams(ParamStore<T> params) {
    if (!params.sameLayout(params_)) throw FormatError("VQ parameter layout does not match the configured model");
    params_ = std::move(params);
}

template <class T>
Mat<T> extractPatches(const Image& image, const PatchGeometry& g) {
    if (image.width != g.width || image.height != g.height || image.channels != g.channels)
        throw InvalidArgument("image shape " + std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                              std::to_string(image.channels) + " does not match the VQ geometry");
    Mat<T> out(g.tokens(), g.patchDim());
    for (int r = 0; r < g.gridHeight(); ++r)
        for (int c = 0; c < g.gridWidth(); ++c) {
            const int row = r * g.gridWidth() + c;
            int col = 0;
            for (int py = 0; py < g.patch; ++py)
                for (int px = 0; px < g.patch; ++px)
                    for (int ch = 0; ch < g.channels; ++ch)
                        out(row, col++) = static_cast<T>(image.at(c * g.patch + px, r * g.patch + py, ch));
        }
    return out;
}

Image assemblePatches(const Mat<float>& patches, const PatchGeometry& g) {
    Image image(g.width, g.height, g.channels);
    for (int r = 0; r < g.gridHeight(); ++r)
        for (int c = 0; c < g.gridWidth(); ++c) {
            const int row = r * g.gridWidth() + c;
            int col = 0;
            for (int py = 0; py < g.patch; ++py)
                for (int px = 0; px < g.patch; ++px)
                    for (int ch = 0; ch < g.channels; ++ch)
                        image.at(c * g.patch + px, r * g.patch + py, ch) = patches(row, col++);
        }
    return image;
}

template <class T>
std::vector<int> quantize(const Mat<T>& codes, const Mat<T>& codebook) {
    if (codes.cols() != codebook.cols()) throw InvalidArgument("code/codebook dimension mismatch");
    std::vector<int> ids(static_cast<std::size_t>(codes.rows()), 0);
    for (Eigen::Index i = 0; i < codes.rows(); ++i) {
        T best = std::numeric_limits<T>::infinity();
        for (Eigen::Index k = 0; k < codebook.rows(); ++k) {
            const T dist = (codes.row(i) - codebook.row(k)).squaredNorm();
            if (dist < best) {
                best = dist;
                ids[static_cast<std::size_t>(i)] = static_cast<int>(k);
            }
        }
    }
    return ids;
}

template <class T>
Mat<T> encodeCodes(const Image& image, const VqModel<T>& model) {
    Mat<T> codes = extractPatches<T>(image, model.geometry()) * model.encoder();
    codes.rowwise() += model.encoderBias().row(0);
    return codes;
}

template <class T>
TokenGrid encodeImage(const Image& image, const VqModel<T>& model) {
    const auto& g = model.geometry();
    return {g.gridHeight(), g.gridWidth(), quantize<T>(encodeCodes(image, model), model.codebook())};
}

template <class T>
Image decodeTokens(const TokenGrid& tokens, const VqModel<T>& model) {
    const auto& g = model.geometry();
    if (tokens.height != g.gridHeight() || tokens.width != g.gridWidth() ||
        tokens.ids.size() != static_cast<std::size_t>(g.tokens()))
        throw InvalidArgument("token grid shape does not match the VQ geometry");
    Mat<T> zq(g.tokens(), model.codeDim());
    for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
        const int id = tokens.ids[i];
        if (id < 0 || id >= model.codebookSize())
            throw InvalidArgument("token id " + std::to_string(id) + " outside codebook of size " +
                                  std::to_string(model.codebookSize()));
        zq.row(static_cast<Eigen::Index>(i)) = model.codebook().row(id);
    }
    Mat<T> patches = zq * model.decoder();
    patches.rowwise() += model.decoderBias().row(0);
    Mat<float> clamped = patches.template cast<float>().cwiseMax(0.0F).cwiseMin(1.0F);
    return assemblePatches(clamped, g);
}

template <class T>
VqLossTerms vqLoss(std::span<const Image> images, const VqModel<T>& model, ParamStore<T>* grad, VqTermMask mask,
                   const VqFrozen<T>* frozen, VqFrozen<T>* capture) {
    if (images.empty()) return {};
    if (grad && !grad->sameLayout(model.params())) *grad = model.params().zerosLike();
    if (capture) *capture = {};
    const double inv = 1.0 / static_cast<double>(images.size());
    const T tinv = static_cast<T>(inv);
    VqLossTerms terms;
    const auto& cb = model.codebook();
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Mat<T> x = extractPatches<T>(images[n], model.geometry());
        Mat<T> z = x * model.encoder();
        z.rowwise() += model.encoderBias().row(0);
        const std::vector<int> ids = frozen ? frozen->ids[n] : quantize<T>(z, Mat<T>(cb));
        Mat<T> zq(z.rows(), z.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) zq.row(static_cast<Eigen::Index>(i)) = cb.row(ids[i]);
        if (capture) {
            capture->ids.push_back(ids);
            capture->codes.push_back(z);
            capture->quantized.push_back(zq);
        }
        // Stop-gradient operands: at the base point they equal the live values.
        const Mat<T>& zSg = frozen ? frozen->codes[n] : z;
        const Mat<T>& zqSg = frozen ? frozen->quantized[n] : zq;
        // Straight-through decoder input: value z_q, gradient routed to z.
        const Mat<T> zIn = z + (zqSg - zSg);
        Mat<T> xhat = zIn * model.decoder();
        xhat.rowwise() += model.decoderBias().row(0);

        const Mat<T> recon = xhat - x;
        const Mat<T> cbDiff = zq - zSg;
        const Mat<T> commitDiff = z - zqSg;
        terms.reconstruction += static_cast<double>(recon.squaredNorm()) * inv;
        terms.codebook += static_cast<double>(cbDiff.squaredNorm()) * inv;
        terms.commitment += static_cast<double>(commitDiff.squaredNorm()) * inv;

        if (!grad) continue;
        ParamStore<T>& g = *grad;
        const int iEncW = g.require("vq.encoder"), iEncB = g.require("vq.encoder_bias");
        const int iDecW = g.require("vq.decoder"), iDecB = g.require("vq.decoder_bias");
        const int iCode = g.require("vq.codebook");
        Mat<T> dz = Mat<T>::Zero(z.rows(), z.cols());
        if (mask.reconstruction) {
            const Mat<T> dxhat = (T(2) * tinv) * recon;
            g[iDecW].noalias() += zIn.transpose() * dxhat;
            g[iDecB] += dxhat.colwise().sum();
            dz.noalias() += dxhat * model.decoder().transpose();
        }
        if (mask.codebook) {
            for (std::size_t i = 0; i < ids.size(); ++i)
                g[iCode].row(ids[i]) += (T(2) * tinv) * cbDiff.row(static_cast<Eigen::Index>(i));
        }
        if (mask.commitment) dz += (T(2) * tinv) * commitDiff;
        g[iEncW].noalias() += x.transpose() * dz;
        g[iEncB] += dz.colwise().sum();
    }
    return terms;
}

namespace {

// Lloyd iterations from a k-means++ seeding; returns centers.
Mat<double> kmeans(const Mat<double>& points, int k, int iterations, Rng& rng) {
    const Eigen::Index n = points.rows();
    Mat<double> centers(k, points.cols());
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    Eigen::Index chosen = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    for (int c = 0; c < k; ++c) {
        centers.row(c) = points.row(chosen);
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] =
                std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - centers.row(c)).squaredNorm());
            total += d2[static_cast<std::size_t>(i)];
        }
        if (c + 1 == k) break;
        if (total <= 0.0) {
            chosen = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
            continue;
        }
        double target = rng.uniform() * total;
        chosen = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            target -= d2[static_cast<std::size_t>(i)];
            if (target < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
                chosen = i;
                break;
            }
        }
    }
    std::vector<int> assign;
    for (int it = 0; it < iterations; ++it) {
        std::vector<int> next = quantize<double>(points, centers);
        if (next == assign) break;
        assign = std::move(next);
        Mat<double> sums = Mat<double>::Zero(k, points.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0)
                centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    return centers;
}

// Nudges later duplicates of an entry until every row is unique.
void repairDuplicates(Mat<double>& centers, Rng& rng) {
    for (Eigen::Index j = 1; j < centers.rows(); ++j) {
        bool dup = true;
        while (dup) {
            dup = false;
            for (Eigen::Index i = 0; i < j; ++i)
                if (centers.row(i) == centers.row(j)) {
                    dup = true;
                    break;
                }
            if (dup)
                for (Eigen::Index c = 0; c < centers.cols(); ++c) centers(j, c) += 1e-3 * rng.normal();
        }
    }
}

} // namespace

VqTrainResult trainCodebook(std::span<const Image> images, const VqTrainConfig& config, std::uint64_t seed) {
    if (images.empty()) throw InvalidArgument("codebook training needs at least one image");
    const PatchGeometry& g = config.geometry;
    g.validate();
    Rng rng(seed);

    const int perImage = g.tokens();
    Mat<double> patches(static_cast<Eigen::Index>(images.size()) * perImage, g.patchDim());
    for (std::size_t n = 0; n < images.size(); ++n)
        patches.middleRows(static_cast<Eigen::Index>(n) * perImage, perImage) = extractPatches<double>(images[n], g);

    // PCA: encoder = top principal directions, decoder = their transpose.
    const RowVec<double> mean = patches.colwise().mean();
    const Mat<double> centered = patches.rowwise() - mean;
    const Mat<double> cov = (centered.transpose() * centered) / static_cast<double>(patches.rows());
    Eigen::SelfAdjointEigenSolver<Mat<double>> eig(cov);
    const int d = g.patchDim();
    Mat<double> basis = Mat<double>::Zero(d, config.codeDim);
    for (int k = 0; k < std::min(config.codeDim, d); ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        basis.col(k) = v;
    }

    VqModel<double> model(g, config.codeDim, config.codebookSize);
    model.encoder() = basis;
    model.encoderBias() = -mean * basis;
    model.decoder() = basis.transpose();
    model.decoderBias() = mean;

    Mat<double> codes = patches * basis;
    codes.rowwise() += model.encoderBias().row(0);
    Mat<double> centers = kmeans(codes, config.codebookSize, config.kmeansIterations, rng);
    repairDuplicates(centers, rng);
    model.codebook() = centers;

    VqTrainResult result;
    result.epochLoss.push_back(vqLoss<double>(images, model).total());
    AdamState<double> adam;
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Image> batch;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batchSize)) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(config.batchSize)); ++i)
                batch.push_back(images[order[i]]);
            ParamStore<double> grad = model.params().zerosLike();
            vqLoss<double>(batch, model, &grad);
            adamStep<double>(model.params().flat(), grad.flat(), adam, config.adam);
        }
        result.epochLoss.push_back(vqLoss<double>(images, model).total());
    }
    Mat<double> cb = model.codebook();
    repairDuplicates(cb, rng);
    model.codebook() = cb;
    result.model = model.cast<float>();
    return result;
}

double reconstructionMse(std::span<const Image> images, const VqModel<float>& model) {
    if (images.empty()) throw InvalidArgument("reconstructionMse needs images");
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& im : images) {
        const Image rec = decodeTokens(encodeImage(im, model), model);
        for (std::size_t i = 0; i < im.pixels.size(); ++i) {
            const double e = static_cast<double>(rec.pixels[i]) - static_cast<double>(im.pixels[i]);
            sum += e * e;
        }
        count += im.pixels.size();
    }
    return sum / static_cast<double>(count);
}

template class VqModel<float>;
template class VqModel<double>;
template VqModel<float> VqModel<double>::cast<float>() const;
template VqModel<double> VqModel<float>::cast<double>() const;
template Mat<float> extractPatches<float>(const Image&, const PatchGeometry&);
template Mat<double> extractPatches<double>(const Image&, const PatchGeometry&);
template std::vector<int> quantize<float>(const Mat<float>&, const Mat<float>&);
template std::vector<int> quantize<double>(const Mat<double>&, const Mat<double>&);
template Mat<float> encodeCodes<float>(const Image&, const VqModel<float>&);
template Mat<double> encodeCodes<double>(const Image&, const VqModel<double>&);
template TokenGrid encodeImage<float>(const Image&, const VqModel<float>&);
template TokenGrid encodeImage<double>(const Image&, const VqModel<double>&);
template Image decodeTokens<float>(const TokenGrid&, const VqModel<float>&);
template Image decodeTokens<double>(const TokenGrid&, const VqModel<double>&);
template VqLossTerms vqLoss<float>(std::span<const Image>, const VqModel<float>&, ParamStore<float>*, VqTermMask,
                                   const VqFrozen<float>*, VqFrozen<float>*);
template VqLossTerms vqLoss<double>(std::span<const Image>, const VqModel<double>&, ParamStore<double>*, VqTermMask,
                                    const VqFrozen<double>*, VqFrozen<double>*);

} // namespace kpeforge
