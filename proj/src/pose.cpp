#include "kpe_forge/pose.hpp"

#include "kpe_forge/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace kpeforge {

int jointCount(JointScheme scheme) noexcept { return scheme == JointScheme::Skel13 ? 13 : 25; }

std::string_view schemeName(JointScheme scheme) noexcept {
    return scheme == JointScheme::Skel13 ? "SKEL13" : "BODY25";
}

JointScheme parseScheme(std::string_view name) {
    std::string upper(name);
    for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper == "SKEL13") return JointScheme::Skel13;
    if (upper == "BODY25") return JointScheme::Body25;
    throw InvalidArgument("unknown joint scheme '" + std::string(name) + "'");
}

namespace {

constexpr std::array<std::pair<int, int>, 14> kSkel13Bones{{
    {skel13::Nose, skel13::LShoulder},
    {skel13::Nose, skel13::RShoulder},
    {skel13::LShoulder, skel13::RShoulder},
    {skel13::LShoulder, skel13::LElbow},
    {skel13::LElbow, skel13::LWrist},
    {skel13::RShoulder, skel13::RElbow},
    {skel13::RElbow, skel13::RWrist},
    {skel13::LShoulder, skel13::LHip},
    {skel13::RShoulder, skel13::RHip},
    {skel13::LHip, skel13::RHip},
    {skel13::LHip, skel13::LKnee},
    {skel13::LKnee, skel13::LAnkle},
    {skel13::RHip, skel13::RKnee},
    {skel13::RKnee, skel13::RAnkle},
}};

constexpr std::array<std::pair<int, int>, 24> kBody25Bones{{
    {1, 8}, {1, 2}, {1, 5}, {2, 3}, {3, 4}, {5, 6}, {6, 7}, {8, 9}, {9, 10}, {10, 11}, {8, 12}, {12, 13},
    {13, 14}, {1, 0}, {0, 15}, {15, 17}, {0, 16}, {16, 18}, {14, 19}, {19, 20}, {14, 21}, {11, 22}, {22, 23},
    {11, 24},
}};

// COCO-17 order: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles.
constexpr double kNose = 0.026, kEye = 0.025, kEar = 0.035, kShoulder = 0.079, kElbow = 0.072, kWrist = 0.062,
                 kHip = 0.107, kKnee = 0.087, kAnkle = 0.089;

void checkKeypoint(const Keypoint& kp) {
    auto inUnit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    if (!inUnit(kp.x) || !inUnit(kp.y) || !inUnit(kp.v))
        throw InvalidArgument("keypoint components must lie in [0,1]");
}

} // namespace

std::span<const std::pair<int, int>> schemeBones(JointScheme scheme) noexcept {
    if (scheme == JointScheme::Skel13) return kSkel13Bones;
    return kBody25Bones;
}

PersonPose::PersonPose(JointScheme scheme)
    : scheme_(scheme), joints_(static_cast<std::size_t>(jointCount(scheme))) {}

PersonPose::PersonPose(JointScheme scheme, std::vector<Keypoint> joints) : scheme_(scheme), joints_(std::move(joints)) {
    if (joints_.size() != static_cast<std::size_t>(jointCount(scheme)))
        throw InvalidArgument("pose has " + std::to_string(joints_.size()) + " joints, scheme " +
                              std::string(schemeName(scheme)) + " needs " + std::to_string(jointCount(scheme)));
    for (const auto& kp : joints_) checkKeypoint(kp);
}

void PersonPose::set(std::size_t j, Keypoint kp) {
    if (j >= joints_.size()) throw InvalidArgument("joint index out of range");
    checkKeypoint(kp);
    joints_[j] = kp;
}

std::size_t PersonPose::visibleCount() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(joints_.begin(), joints_.end(), [](const Keypoint& k) { return k.visible(); }));
}

MultiPersonPose::MultiPersonPose(JointScheme scheme, int maxPeople) : scheme_(scheme), maxPeople_(maxPeople) {
    if (maxPeople < 0) throw InvalidArgument("maxPeople must be non-negative");
}

MultiPersonPose::MultiPersonPose(JointScheme scheme, int maxPeople, std::vector<PersonPose> people)
    : MultiPersonPose(scheme, maxPeople) {
    for (auto& p : people) add(std::move(p));
}

void MultiPersonPose::add(PersonPose person) {
    if (person.scheme() != scheme_) throw InvalidArgument("all people must share one joint scheme");
    if (people_.size() >= static_cast<std::size_t>(maxPeople_))
        throw CapacityError("pose holds at most " + std::to_string(maxPeople_) + " people");
    people_.push_back(std::move(person));
}

MultiPersonPose transformPose(const MultiPersonPose& pose, Vec2 scale, Vec2 translate, Rect crop) {
    if (!(scale.x > 0.0) || !(scale.y > 0.0)) throw InvalidArgument("scale factors must be positive");
    if (!(crop.width() > 0.0) || !(crop.height() > 0.0)) throw InvalidArgument("crop rectangle has zero area");
    if (crop.x0 < 0.0 || crop.y0 < 0.0 || crop.x1 > 1.0 || crop.y1 > 1.0)
        throw InvalidArgument("crop rectangle must lie within the unit square");

    MultiPersonPose out(pose.scheme(), pose.maxPeople());
    for (const auto& person : pose.people()) {
        std::vector<Keypoint> joints;
        joints.reserve(person.size());
        for (const auto& kp : person.joints()) {
            const double x = (scale.x * kp.x + translate.x - crop.x0) / crop.width();
            const double y = (scale.y * kp.y + translate.y - crop.y0) / crop.height();
            const bool inside = x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0;
            joints.push_back({std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0), inside ? kp.v : 0.0});
        }
        out.add(PersonPose(person.scheme(), std::move(joints)));
    }
    return out;
}

std::vector<double> cocoSigmas(JointScheme scheme) {
    if (scheme == JointScheme::Skel13)
        return {kNose, kShoulder, kShoulder, kElbow, kElbow, kWrist, kWrist, kHip, kHip, kKnee, kKnee, kAnkle, kAnkle};
    std::vector<double> s(25, 0.0);
    using namespace body25;
    s[Nose] = kNose;
    s[Neck] = 0.079;
    s[MidHip] = 0.079;
    s[RShoulder] = s[LShoulder] = kShoulder;
    s[RElbow] = s[LElbow] = kElbow;
    s[RWrist] = s[LWrist] = kWrist;
    s[RHip] = s[LHip] = kHip;
    s[RKnee] = s[LKnee] = kKnee;
    s[RAnkle] = s[LAnkle] = kAnkle;
    s[REye] = s[LEye] = kEye;
    s[REar] = s[LEar] = kEar;
    for (int j : {LBigToe, LSmallToe, LHeel, RBigToe, RSmallToe, RHeel}) s[static_cast<std::size_t>(j)] = 0.089;
    return s;
}

OksConfig OksConfig::forScheme(JointScheme scheme) {
    OksConfig cfg;
    cfg.kappas = cocoSigmas(scheme);
    for (double& k : cfg.kappas) k *= 2.0;
    return cfg;
}

double objectScale(const PersonPose& reference, const OksConfig& cfg) {
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -x0;
    for (const auto& kp : reference.joints()) {
        if (!kp.visible()) continue;
        x0 = std::min(x0, kp.x);
        x1 = std::max(x1, kp.x);
        y0 = std::min(y0, kp.y);
        y1 = std::max(y1, kp.y);
    }
    if (x0 > x1) return cfg.minScale;
    return std::max(std::sqrt((x1 - x0) * (y1 - y0)), cfg.minScale);
}

double oks(const PersonPose& candidate, const PersonPose& reference, const OksConfig& cfg) {
    if (candidate.scheme() != reference.scheme()) throw InvalidArgument("oks: poses use different schemes");
    if (cfg.kappas.size() != reference.size()) throw InvalidArgument("oks: kappa count does not match scheme");
    for (double k : cfg.kappas)
        if (!(k > 0.0)) throw InvalidArgument("oks: kappas must be positive");

    const double s = objectScale(reference, cfg);
    double sum = 0.0;
    std::size_t visible = 0;
    for (std::size_t j = 0; j < reference.size(); ++j) {
        const Keypoint& r = reference[j];
        if (!r.visible()) continue;
        ++visible;
        const Keypoint& c = candidate[j];
        if (!c.visible()) continue;
        const double dx = c.x - r.x, dy = c.y - r.y;
        const double k = cfg.kappas[j];
        sum += std::exp(-(dx * dx + dy * dy) / (2.0 * s * s * k * k));
    }
    if (visible == 0) throw UndefinedScore("oks: reference has no visible joints");
    return sum / static_cast<double>(visible);
}

double greedyMatchMean(const std::vector<std::vector<double>>& scores, std::size_t referenceCount) {
    if (referenceCount == 0) throw UndefinedScore("match: empty reference set");
    std::vector<bool> genUsed(scores.size(), false), refUsed(referenceCount, false);
    double total = 0.0;
    for (std::size_t round = 0; round < std::min(scores.size(), referenceCount); ++round) {
        double best = -1.0;
        std::size_t bg = 0, br = 0;
        // Strict > keeps the lowest (generated, reference) index on ties.
        for (std::size_t g = 0; g < scores.size(); ++g) {
            if (genUsed[g]) continue;
            for (std::size_t r = 0; r < referenceCount; ++r) {
                if (refUsed[r]) continue;
                if (scores[g][r] > best) {
                    best = scores[g][r];
                    bg = g;
                    br = r;
                }
            }
        }
        genUsed[bg] = true;
        refUsed[br] = true;
        total += best;
    }
    return total / static_cast<double>(referenceCount);
}

double matchOks(const MultiPersonPose& generated, const MultiPersonPose& reference, const OksConfig& cfg) {
    if (generated.scheme() != reference.scheme()) throw InvalidArgument("matchOks: poses use different schemes");
    if (reference.empty()) throw UndefinedScore("matchOks: reference has no people");
    std::vector<std::vector<double>> scores(generated.size(), std::vector<double>(reference.size(), 0.0));
    for (std::size_t g = 0; g < generated.size(); ++g)
        for (std::size_t r = 0; r < reference.size(); ++r) scores[g][r] = oks(generated[g], reference[r], cfg);
    return greedyMatchMean(scores, reference.size());
}

} // namespace kpeforge
