#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kpeforge {

enum class JointScheme { Skel13, Body25 };

int jointCount(JointScheme scheme) noexcept;
std::string_view schemeName(JointScheme scheme) noexcept;
JointScheme parseScheme(std::string_view name);

// Joint indices of the 13-joint synthetic scheme (COCO-17 without eyes/ears).
// "Left" is the figure's own left, which sits on the image right.
namespace skel13 {
enum Joint : int {
    Nose = 0,
    LShoulder,
    RShoulder,
    LElbow,
    RElbow,
    LWrist,
    RWrist,
    LHip,
    RHip,
    LKnee,
    RKnee,
    LAnkle,
    RAnkle,
};
} // namespace skel13

// OpenPose BODY_25 ordering.
namespace body25 {
enum Joint : int {
    Nose = 0, Neck, RShoulder, RElbow, RWrist, LShoulder, LElbow, LWrist, MidHip, RHip, RKnee, RAnkle,
    LHip, LKnee, LAnkle, REye, LEye, REar, LEar, LBigToe, LSmallToe, LHeel, RBigToe, RSmallToe, RHeel,
};
} // namespace body25

// Bones (joint index pairs) drawn by the renderers for a scheme.
std::span<const std::pair<int, int>> schemeBones(JointScheme scheme) noexcept;

struct Keypoint {
    double x{0.0};
    double y{0.0};
    double v{0.0};

    // v == 0 marks an absent point; its coordinates carry no meaning.
    bool visible() const noexcept { return v > 0.0; }
    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

class PersonPose {
public:
    explicit PersonPose(JointScheme scheme = JointScheme::Skel13);
    PersonPose(JointScheme scheme, std::vector<Keypoint> joints);

    JointScheme scheme() const noexcept { return scheme_; }
    std::size_t size() const noexcept { return joints_.size(); }
    const Keypoint& operator[](std::size_t j) const noexcept { return joints_[j]; }
    const std::vector<Keypoint>& joints() const noexcept { return joints_; }

    // Replaces one joint; throws if it violates the keypoint range invariant.
    void set(std::size_t j, Keypoint kp);
    std::size_t visibleCount() const noexcept;

    friend bool operator==(const PersonPose&, const PersonPose&) = default;

private:
    JointScheme scheme_;
    std::vector<Keypoint> joints_;
};

class MultiPersonPose {
public:
    MultiPersonPose(JointScheme scheme = JointScheme::Skel13, int maxPeople = 4);
    MultiPersonPose(JointScheme scheme, int maxPeople, std::vector<PersonPose> people);

    JointScheme scheme() const noexcept { return scheme_; }
    int maxPeople() const noexcept { return maxPeople_; }
    std::size_t size() const noexcept { return people_.size(); }
    bool empty() const noexcept { return people_.empty(); }
    const PersonPose& operator[](std::size_t i) const noexcept { return people_[i]; }
    const std::vector<PersonPose>& people() const noexcept { return people_; }

    void add(PersonPose person);

    friend bool operator==(const MultiPersonPose&, const MultiPersonPose&) = default;

private:
    JointScheme scheme_;
    int maxPeople_;
    std::vector<PersonPose> people_;
};

struct Vec2 {
    double x{0.0};
    double y{0.0};
};

// Axis-aligned rectangle [x0, x1] x [y0, y1] in normalized coordinates.
struct Rect {
    double x0{0.0};
    double y0{0.0};
    double x1{1.0};
    double y1{1.0};

    double width() const noexcept { return x1 - x0; }
    double height() const noexcept { return y1 - y0; }
};

/// Maps every keypoint by p -> scale * p + translate, then re-expresses it in
/// the normalized frame of `crop` (given in the scaled/translated frame).
/// Points that land outside the crop become invisible with clamped coordinates.
MultiPersonPose transformPose(const MultiPersonPose& pose, Vec2 scale, Vec2 translate, Rect crop = {});

struct OksConfig {
    // Per-joint falloff constants, one per scheme joint.
    std::vector<double> kappas;
    // Lower bound on the object scale s.
    double minScale{1e-3};

    // kappa_j = 2 * sigma_j with sigma_j the COCO per-keypoint constants; the
    // BODY25-only joints borrow 0.079 (neck, mid-hip) and 0.089 (toes, heels).
    static OksConfig forScheme(JointScheme scheme);
};

// COCO sigma constants for a scheme, before the factor of two.
std::vector<double> cocoSigmas(JointScheme scheme);

// Object scale of a reference pose: sqrt of the visible-keypoint bounding-box
// area, floored at cfg.minScale.
double objectScale(const PersonPose& reference, const OksConfig& cfg);

/// Object Keypoint Similarity of `candidate` against `reference`. Only
/// reference-visible joints are scored; a candidate joint with v = 0 scores 0.
double oks(const PersonPose& candidate, const PersonPose& reference, const OksConfig& cfg);

// Greedy one-to-one assignment over scores[generated][reference]; unmatched
// reference columns contribute 0. Returns the mean over reference columns.
double greedyMatchMean(const std::vector<std::vector<double>>& scores, std::size_t referenceCount);

double matchOks(const MultiPersonPose& generated, const MultiPersonPose& reference, const OksConfig& cfg);

} // namespace kpeforge
