#pragma once

#include "kpe_forge/pose.hpp"
#include "kpe_forge/tensor.hpp"

#include <iosfwd>

namespace kpeforge {

/// N x (3 * mMax) block of continuous keypoint tokens. Row j stacks joint j
/// of every person slot as (x, y, v); empty slots and invisible joints are 0.
struct KeypointTokenMatrix {
    JointScheme scheme{JointScheme::Skel13};
    int maxPeople{0};
    Mat<double> values;

    int rows() const noexcept { return static_cast<int>(values.rows()); }
    int cols() const noexcept { return static_cast<int>(values.cols()); }
};

// Linear keypoint embedding: (3 * mMax) -> d.
template <class T>
struct KpeProjection {
    Mat<T> weights;
    RowVec<T> bias;
    bool learnable{true};

    int inputDim() const noexcept { return static_cast<int>(weights.rows()); }
    int outputDim() const noexcept { return static_cast<int>(weights.cols()); }
};

template <class T>
struct KpeProjectionGrad {
    Mat<T> weights;
    RowVec<T> bias;
};

// Leftmost person first (minimum visible x), ties by minimum visible y.
// People without visible joints go last; the sort is stable.
MultiPersonPose canonicalPersonOrder(const MultiPersonPose& pose);

KeypointTokenMatrix tokenize(const MultiPersonPose& pose, int maxPeople);

// Copies each token row into the first 3*mMax coordinates of a width-d row.
Mat<double> embedZeroPad(const KeypointTokenMatrix& tokens, int d);

template <class T>
Mat<T> embedLinear(const KeypointTokenMatrix& tokens, const KpeProjection<T>& proj);

// Accumulates dL/dW and dL/db into `grad` for upstream gradient dOut (N x d).
// Returns dL/dtokens (N x 3*mMax).
template <class T>
Mat<T> embedLinearBackward(const KeypointTokenMatrix& tokens, const KpeProjection<T>& proj, const Mat<T>& dOut,
                           KpeProjectionGrad<T>& grad);

// [I | 0] projection, which makes embedLinear reproduce embedZeroPad.
template <class T>
KpeProjection<T> identityProjection(int maxPeople, int d);

void writeTokenCsv(std::ostream& out, const KeypointTokenMatrix& tokens);

} // namespace kpeforge
