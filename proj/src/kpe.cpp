#include "kpe_forge/kpe.hpp"

#include "kpe_forge/error.hpp"

#include <algorithm>
#include <limits>
#include <ostream>

namespace kpeforge {

namespace {

std::pair<double, double> minVisible(const PersonPose& p) {
    double mx = std::numeric_limits<double>::infinity(), my = mx;
    for (const auto& kp : p.joints()) {
        if (!kp.visible()) continue;
        mx = std::min(mx, kp.x);
        my = std::min(my, kp.y);
    }
    return {mx, my};
}

template <class T>
void checkShapes(const KeypointTokenMatrix& tokens, const KpeProjection<T>& proj) {
    if (proj.weights.rows() != tokens.values.cols())
        throw InvalidArgument("kpe projection expects " + std::to_string(proj.weights.rows()) +
                              " inputs, tokens have " + std::to_string(tokens.values.cols()));
    if (proj.bias.size() != proj.weights.cols()) throw InvalidArgument("kpe projection bias width mismatch");
}

} // namespace

MultiPersonPose canonicalPersonOrder(const MultiPersonPose& pose) {
    std::vector<PersonPose> people = pose.people();
    std::stable_sort(people.begin(), people.end(),
                     [](const PersonPose& a, const PersonPose& b) { return minVisible(a) < minVisible(b); });
    return MultiPersonPose(pose.scheme(), pose.maxPeople(), std::move(people));
}

KeypointTokenMatrix tokenize(const MultiPersonPose& pose, int maxPeople) {
    if (maxPeople <= 0) throw InvalidArgument("maxPeople must be positive");
    if (pose.size() > static_cast<std::size_t>(maxPeople))
        throw CapacityError("pose has " + std::to_string(pose.size()) + " people, token block holds " +
                            std::to_string(maxPeople));
    const int n = jointCount(pose.scheme());
    KeypointTokenMatrix out{pose.scheme(), maxPeople, Mat<double>::Zero(n, 3 * maxPeople)};
    for (std::size_t i = 0; i < pose.size(); ++i) {
        const int col = 3 * static_cast<int>(i);
        for (int j = 0; j < n; ++j) {
            const Keypoint& kp = pose[i][static_cast<std::size_t>(j)];
            if (!kp.visible()) continue;
            out.values(j, col) = kp.x;
            out.values(j, col + 1) = kp.y;
            out.values(j, col + 2) = kp.v;
        }
    }
    return out;
}

Mat<double> embedZeroPad(const KeypointTokenMatrix& tokens, int d) {
    if (tokens.cols() > d)
        throw CapacityError("zero-pad embedding needs 3*m_max <= d (" + std::to_string(tokens.cols()) + " > " +
                            std::to_string(d) + ")");
    Mat<double> out = Mat<double>::Zero(tokens.rows(), d);
    out.leftCols(tokens.cols()) = tokens.values;
    return out;
}

template <class T>
Mat<T> embedLinear(const KeypointTokenMatrix& tokens, const KpeProjection<T>& proj) {
    checkShapes(tokens, proj);
    Mat<T> out = tokens.values.template cast<T>() * proj.weights;
    out.rowwise() += proj.bias;
    return out;
}

template <class T>
Mat<T> embedLinearBackward(const KeypointTokenMatrix& tokens, const KpeProjection<T>& proj, const Mat<T>& dOut,
                           KpeProjectionGrad<T>& grad) {
    checkShapes(tokens, proj);
    if (dOut.rows() != tokens.values.rows() || dOut.cols() != proj.weights.cols())
        throw InvalidArgument("kpe backward: upstream gradient shape mismatch");
    if (grad.weights.size() == 0) grad.weights = Mat<T>::Zero(proj.weights.rows(), proj.weights.cols());
    if (grad.bias.size() == 0) grad.bias = RowVec<T>::Zero(proj.bias.size());
    grad.weights.noalias() += tokens.values.template cast<T>().transpose() * dOut;
    grad.bias += dOut.colwise().sum();
    return dOut * proj.weights.transpose();
}

template <class T>
KpeProjection<T> identityProjection(int maxPeople, int d) {
    const int in = 3 * maxPeople;
    if (in > d) throw CapacityError("identity projection needs 3*m_max <= d");
    KpeProjection<T> p{Mat<T>::Zero(in, d), RowVec<T>::Zero(d), false};
    p.weights.leftCols(in).setIdentity();
    return p;
}

void writeTokenCsv(std::ostream& out, const KeypointTokenMatrix& tokens) {
    out << "joint";
    for (int i = 0; i < tokens.maxPeople; ++i) out << ",x" << i << ",y" << i << ",v" << i;
    out << '\n';
    for (int j = 0; j < tokens.rows(); ++j) {
        out << j;
        for (int c = 0; c < tokens.cols(); ++c) out << ',' << tokens.values(j, c);
        out << '\n';
    }
}

template Mat<float> embedLinear(const KeypointTokenMatrix&, const KpeProjection<float>&);
template Mat<double> embedLinear(const KeypointTokenMatrix&, const KpeProjection<double>&);
template Mat<float> embedLinearBackward(const KeypointTokenMatrix&, const KpeProjection<float>&, const Mat<float>&,
                                        KpeProjectionGrad<float>&);
template Mat<double> embedLinearBackward(const KeypointTokenMatrix&, const KpeProjection<double>&, const Mat<double>&,
                                         KpeProjectionGrad<double>&);
template KpeProjection<float> identityProjection(int, int);
template KpeProjection<double> identityProjection(int, int);

} // namespace kpeforge
