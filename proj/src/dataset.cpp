#include "kpe_forge/dataset.hpp"

#include "kpe_forge/error.hpp"
#include "kpe_forge/kpe.hpp"
#include "kpe_forge/parallel.hpp"
#include "kpe_forge/pose_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

namespace kpeforge {

namespace {

using namespace skel13;

constexpr double kDeg = std::numbers::pi / 180.0;

// Template proportions in figure units (standing height ~1).
constexpr double kHeadY = 0.09, kHeadR = 0.075;
constexpr double kShoulderY = 0.22, kShoulderX = 0.11;
constexpr double kHipY = 0.55, kHipX = 0.11;
constexpr double kUpperArm = 0.2, kForearm = 0.18, kThigh = 0.22, kShin = 0.21;

// Template angles (degrees outward from straight down).
constexpr double kArm0 = 20.0, kElbow0 = 0.0, kLeg0 = 8.0, kKnee0 = 0.0;

// Tile span used by a figure; keeps a small border inside the unit square.
constexpr double kTileSpan = 0.96;

double lerpSample(Rng& rng, double templ, double lo, double hi, double jitter) {
    const double u = rng.uniform(lo, hi);
    return templ + jitter * (u - templ);
}

void setPixel(Image& img, Mask& mask, int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(x, y, 0) = c.r;
    img.at(x, y, 1) = c.g;
    img.at(x, y, 2) = c.b;
    mask.set(x, y);
}

double segmentDistance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = ax + t * dx - px, ey = ay + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

// Pixel centres within `radius` of segment a-b (pixel units).
void paintSegment(Image& img, Mask& mask, Vec2 a, Vec2 b, double radius, Color c) {
    const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - radius - 1));
    const int x1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + radius + 1));
    const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y) - radius - 1));
    const int y1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + radius + 1));
    for (int y = std::max(0, y0); y <= std::min(img.height - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(img.width - 1, x1); ++x)
            if (segmentDistance(x + 0.5, y + 0.5, a.x, a.y, b.x, b.y) <= radius) setPixel(img, mask, x, y, c);
}

void paintDisc(Image& img, Mask& mask, Vec2 c, double radius, Color color) { paintSegment(img, mask, c, c, radius, color); }

double cross(Vec2 o, Vec2 a, Vec2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Convex polygon fill over pixel centres, plus its outline so thin shapes stay connected.
void paintQuad(Image& img, Mask& mask, const std::array<Vec2, 4>& q, Color c) {
    double minX = q[0].x, maxX = q[0].x, minY = q[0].y, maxY = q[0].y;
    for (const auto& p : q) {
        minX = std::min(minX, p.x);
        maxX = std::max(maxX, p.x);
        minY = std::min(minY, p.y);
        maxY = std::max(maxY, p.y);
    }
    for (int y = std::max(0, static_cast<int>(std::floor(minY))); y <= std::min(img.height - 1, static_cast<int>(maxY)); ++y)
        for (int x = std::max(0, static_cast<int>(std::floor(minX))); x <= std::min(img.width - 1, static_cast<int>(maxX)); ++x) {
            const Vec2 p{x + 0.5, y + 0.5};
            bool pos = false, neg = false;
            for (int i = 0; i < 4; ++i) {
                const double cr = cross(q[static_cast<std::size_t>(i)], q[static_cast<std::size_t>((i + 1) % 4)], p);
                pos |= cr > 0;
                neg |= cr < 0;
            }
            if (!(pos && neg)) setPixel(img, mask, x, y, c);
        }
    for (int i = 0; i < 4; ++i)
        paintSegment(img, mask, q[static_cast<std::size_t>(i)], q[static_cast<std::size_t>((i + 1) % 4)], 0.5, c);
}

Vec2 toPixels(const Keypoint& k, int w, int h) { return {k.x * w, k.y * h}; }

// Painted extent of a pose in canvas pixels, expanded by the stroke sizes.
struct PxBox {
    double x0, y0, x1, y1;
    bool intersects(const PxBox& o, double margin) const {
        return !(x1 + margin <= o.x0 || o.x1 + margin <= x0 || y1 + margin <= o.y0 || o.y1 + margin <= y0);
    }
};

PxBox paintedBox(const PersonPose& pose, int w, int h, double heightPx) {
    const StrokeSizes st = strokeSizes(heightPx);
    const double pad = std::max(st.headRadius, st.limbRadius) + 0.5;
    PxBox b{1e9, 1e9, -1e9, -1e9};
    for (const auto& k : pose.joints()) {
        if (!k.visible()) continue;
        b.x0 = std::min(b.x0, k.x * w - pad);
        b.x1 = std::max(b.x1, k.x * w + pad);
        b.y0 = std::min(b.y0, k.y * h - pad);
        b.y1 = std::max(b.y1, k.y * h + pad);
    }
    return b;
}

double minVisibleX(const PersonPose& p) {
    double m = 2.0;
    for (const auto& k : p.joints())
        if (k.visible()) m = std::min(m, k.x);
    return m;
}
double minVisibleY(const PersonPose& p) {
    double m = 2.0;
    for (const auto& k : p.joints())
        if (k.visible()) m = std::min(m, k.y);
    return m;
}

} // namespace

std::string_view FigureStyle::tag() const {
    validate();
    return palette::kShirts[static_cast<std::size_t>(shirt)].name;
}

void FigureStyle::validate() const {
    if (shirt < 0 || shirt >= static_cast<int>(palette::kShirts.size())) throw InvalidArgument("shirt color outside the palette");
    if (build < 0.8 || build > 1.2) throw InvalidArgument("build multiplier outside [0.8, 1.2]");
}

StrokeSizes strokeSizes(double heightPx) {
    return {std::max(0.55, 0.035 * heightPx), std::max(1.3, 0.085 * heightPx)};
}

PersonPose samplePose(Rng& rng, JointScheme scheme, const PoseSampleOptions& o, PoseAngles* anglesOut) {
    if (scheme != JointScheme::Skel13) throw InvalidArgument("the stick-figure sampler only supports SKEL13");
    if (o.build < 0.8 || o.build > 1.2) throw InvalidArgument("build multiplier outside [0.8, 1.2]");
    const AngleBounds& b = o.bounds;
    PoseAngles a;
    a.leftArm = lerpSample(rng, kArm0, b.armMin, b.armMax, o.jitter);
    a.rightArm = lerpSample(rng, kArm0, b.armMin, b.armMax, o.jitter);
    a.leftElbow = lerpSample(rng, kElbow0, b.elbowMin, b.elbowMax, o.jitter);
    a.rightElbow = lerpSample(rng, kElbow0, b.elbowMin, b.elbowMax, o.jitter);
    a.leftLeg = lerpSample(rng, kLeg0, b.legMin, b.legMax, o.jitter);
    a.rightLeg = lerpSample(rng, kLeg0, b.legMin, b.legMax, o.jitter);
    a.leftKnee = lerpSample(rng, kKnee0, b.kneeMin, b.kneeMax, o.jitter);
    a.rightKnee = lerpSample(rng, kKnee0, b.kneeMin, b.kneeMax, o.jitter);
    if (anglesOut) *anglesOut = a;

    // Figure units, x to the image right, y down; side = +1 for the figure's left.
    std::array<Vec2, 13> p{};
    p[Nose] = {0.0, kHeadY};
    auto limb = [&](int root, int mid, int end, Vec2 rootPos, double side, double angle, double bend, double l1,
                    double l2) {
        p[static_cast<std::size_t>(root)] = rootPos;
        const double a1 = angle * kDeg, a2 = bend * kDeg;
        p[static_cast<std::size_t>(mid)] = {rootPos.x + side * l1 * std::sin(a1), rootPos.y + l1 * std::cos(a1)};
        const Vec2 m = p[static_cast<std::size_t>(mid)];
        p[static_cast<std::size_t>(end)] = {m.x + side * l2 * std::sin(a2), m.y + l2 * std::cos(a2)};
    };
    const double arm1 = kUpperArm * o.build, arm2 = kForearm * o.build;
    const double leg1 = kThigh * o.build, leg2 = kShin * o.build;
    limb(LShoulder, LElbow, LWrist, {kShoulderX, kShoulderY}, 1.0, a.leftArm, a.leftArm + a.leftElbow, arm1, arm2);
    limb(RShoulder, RElbow, RWrist, {-kShoulderX, kShoulderY}, -1.0, a.rightArm, a.rightArm + a.rightElbow, arm1, arm2);
    limb(LHip, LKnee, LAnkle, {kHipX, kHipY}, 1.0, a.leftLeg, a.leftLeg + a.leftKnee, leg1, leg2);
    limb(RHip, RKnee, RAnkle, {-kHipX, kHipY}, -1.0, a.rightLeg, a.rightLeg + a.rightKnee, leg1, leg2);

    double top = kHeadY - kHeadR, bottom = 0.0, halfWidth = 0.0;
    for (const auto& q : p) {
        bottom = std::max(bottom, q.y);
        halfWidth = std::max(halfWidth, std::abs(q.x));
    }
    const double unit = kTileSpan / std::max(bottom - top, 2.0 * halfWidth);
    const double y0 = 0.5 - 0.5 * unit * (bottom - top);
    std::vector<Keypoint> joints(13);
    for (std::size_t j = 0; j < 13; ++j)
        joints[j] = {std::clamp(0.5 + unit * p[j].x, 0.0, 1.0), std::clamp(y0 + unit * (p[j].y - top), 0.0, 1.0), 1.0};
    if (o.partial)
        for (int j : {LKnee, RKnee, LAnkle, RAnkle}) joints[static_cast<std::size_t>(j)] = {0.0, 0.0, 0.0};
    return PersonPose(JointScheme::Skel13, std::move(joints));
}

void paintPerson(Image& canvas, Mask& mask, const PersonPose& pose, const FigureStyle& style, double heightPx) {
    if (pose.scheme() != JointScheme::Skel13) throw InvalidArgument("the renderer only supports SKEL13 poses");
    style.validate();
    const StrokeSizes st = strokeSizes(heightPx);
    const int w = canvas.width, h = canvas.height;
    auto bone = [&](int a, int b, Color c) {
        if (pose[static_cast<std::size_t>(a)].visible() && pose[static_cast<std::size_t>(b)].visible())
            paintSegment(canvas, mask, toPixels(pose[static_cast<std::size_t>(a)], w, h),
                         toPixels(pose[static_cast<std::size_t>(b)], w, h), st.limbRadius, c);
    };
    bone(LHip, LKnee, palette::kLeg);
    bone(LKnee, LAnkle, palette::kLeg);
    bone(RHip, RKnee, palette::kLeg);
    bone(RKnee, RAnkle, palette::kLeg);
    bone(LShoulder, LElbow, palette::kArm);
    bone(LElbow, LWrist, palette::kArm);
    bone(RShoulder, RElbow, palette::kArm);
    bone(RElbow, RWrist, palette::kArm);
    const Color shirt = palette::kShirts[static_cast<std::size_t>(style.shirt)].color;
    if (pose[LShoulder].visible() && pose[RShoulder].visible() && pose[LHip].visible() && pose[RHip].visible())
        paintQuad(canvas, mask,
                  {toPixels(pose[RShoulder], w, h), toPixels(pose[LShoulder], w, h), toPixels(pose[LHip], w, h),
                   toPixels(pose[RHip], w, h)},
                  shirt);
    if (pose[Nose].visible()) paintDisc(canvas, mask, toPixels(pose[Nose], w, h), st.headRadius, palette::kHead);
}

RenderedTile renderPerson(const PersonPose& pose, const FigureStyle& style, int size) {
    RenderedTile t{Image(size, size, 3), Mask(size, size)};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            t.image.at(x, y, 0) = palette::kBackground.r;
            t.image.at(x, y, 1) = palette::kBackground.g;
            t.image.at(x, y, 2) = palette::kBackground.b;
        }
    if (pose.visibleCount() > 0) paintPerson(t.image, t.mask, pose, style, kTileSpan * size);
    quantize8(t.image);
    return t;
}

namespace {
Image blankCanvas(int w, int h) {
    Image img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = palette::kBackground.r;
            img.at(x, y, 1) = palette::kBackground.g;
            img.at(x, y, 2) = palette::kBackground.b;
        }
    return img;
}
} // namespace

Image renderSkeletonImage(const MultiPersonPose& pose, int width, int height) {
    Image img = blankCanvas(width, height);
    Mask scratch(width, height);
    for (const auto& person : pose.people())
        for (const auto& [a, b] : schemeBones(pose.scheme())) {
            const auto& ka = person[static_cast<std::size_t>(a)];
            const auto& kb = person[static_cast<std::size_t>(b)];
            if (ka.visible() && kb.visible())
                paintSegment(img, scratch, toPixels(ka, width, height), toPixels(kb, width, height), 0.55, palette::kBone);
        }
    quantize8(img);
    return img;
}

std::string makeCaption(const std::vector<FigureStyle>& styles) {
    std::string out;
    for (std::size_t i = 0; i < styles.size(); ++i) {
        if (i) out += " and ";
        out += "a ";
        out += styles[i].tag();
        out += " person";
    }
    return out;
}

Sample renderPlacements(const std::vector<Placement>& placements, const ComposeOptions& o) {
    Sample s;
    s.image = blankCanvas(o.width, o.height);
    s.mask = Mask(o.width, o.height);
    std::vector<std::pair<PersonPose, FigureStyle>> placed;
    for (const auto& pl : placements) {
        const MultiPersonPose one(JointScheme::Skel13, 1, {pl.tilePose});
        const MultiPersonPose canvasPose = transformPose(one, {pl.scale, pl.scale}, pl.translate);
        placed.emplace_back(canvasPose[0], pl.style);
        paintPerson(s.image, s.mask, canvasPose[0], pl.style, pl.scale * kTileSpan * o.height);
    }
    std::stable_sort(placed.begin(), placed.end(), [](const auto& a, const auto& b) {
        const double ax = minVisibleX(a.first), bx = minVisibleX(b.first);
        if (ax != bx) return ax < bx;
        return minVisibleY(a.first) < minVisibleY(b.first);
    });
    s.pose = MultiPersonPose(JointScheme::Skel13, std::max<int>(3, static_cast<int>(placed.size())));
    for (auto& [p, st] : placed) {
        s.pose.add(p);
        s.styles.push_back(st);
    }
    s.caption = makeCaption(s.styles);
    s.count = static_cast<int>(placed.size());
    quantize8(s.image);
    return s;
}

Sample composeMultiperson(const std::vector<PersonPose>& tilePoses, const std::vector<FigureStyle>& styles,
                          const ComposeOptions& o, Rng& rng, std::vector<Placement>* placementsOut) {
    const std::size_t n = tilePoses.size();
    if (n < 1 || n > 3) throw InvalidArgument("composition takes 1 to 3 people");
    if (styles.size() != n) throw InvalidArgument("one style per person required");
    std::vector<double> scales(n);
    for (auto& s : scales) s = o.figureHeight[n - 1] * (1.0 + rng.uniform(-o.scaleJitter, o.scaleJitter));

    std::vector<Placement> pl(n);
    for (int shrinkRound = 0;; ++shrinkRound) {
        for (int attempt = 0; attempt < o.maxAttempts; ++attempt) {
            std::vector<PxBox> boxes;
            bool ok = true;
            for (std::size_t i = 0; i < n && ok; ++i) {
                const PxBox tb = paintedBox(tilePoses[i], o.width, o.height, scales[i] * kTileSpan * o.height);
                // Tile box scaled into canvas pixels before translation.
                const double s = scales[i];
                const StrokeSizes st = strokeSizes(s * kTileSpan * o.height);
                const double pad = std::max(st.headRadius, st.limbRadius) + 0.5;
                const double bx0 = (tb.x0 + pad) * s - pad, bx1 = (tb.x1 - pad) * s + pad;
                const double by0 = (tb.y0 + pad) * s - pad, by1 = (tb.y1 - pad) * s + pad;
                const double loX = o.marginPx - bx0, hiX = o.width - o.marginPx - bx1;
                const double loY = o.marginPx - by0, hiY = o.height - o.marginPx - by1;
                if (hiX < loX || hiY < loY) {
                    ok = false;
                    break;
                }
                const double txPx = rng.uniform(loX, hiX), tyPx = rng.uniform(loY, hiY);
                const PxBox box{bx0 + txPx, by0 + tyPx, bx1 + txPx, by1 + tyPx};
                for (const auto& other : boxes)
                    if (box.intersects(other, o.marginPx)) ok = false;
                boxes.push_back(box);
                pl[i] = {tilePoses[i], styles[i], s, {txPx / o.width, tyPx / o.height}};
            }
            if (ok) {
                if (placementsOut) *placementsOut = pl;
                return renderPlacements(pl, o);
            }
        }
        if (shrinkRound >= 10) throw Error("could not place figures without overlap");
        for (auto& s : scales) s *= 0.9;
    }
}

Dataset generateDataset(const DatasetConfig& config, std::uint64_t seed) {
    if (config.count < 1) throw ConfigError("dataset.count must be >= 1");
    if (config.testFraction < 0.0 || config.testFraction >= 1.0) throw ConfigError("dataset.test_fraction must be in [0, 1)");
    if (config.maxPeople < 1 || config.maxPeople > 3) throw ConfigError("dataset.max_people must be 1..3");
    Dataset ds;
    ds.samples.resize(static_cast<std::size_t>(config.count));
    parallelFor(ds.samples.size(), [&](std::size_t i) {
        Rng rng(deriveSeed(seed, i));
        const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(config.maxPeople)));
        std::vector<PersonPose> poses;
        std::vector<FigureStyle> styles;
        for (int p = 0; p < n; ++p) {
            FigureStyle st{static_cast<int>(rng.below(palette::kShirts.size())), rng.uniform(0.8, 1.2)};
            PoseSampleOptions opt;
            opt.bounds = config.bounds;
            opt.build = st.build;
            opt.partial = rng.uniform() < config.partialProbability;
            poses.push_back(samplePose(rng, JointScheme::Skel13, opt));
            styles.push_back(st);
        }
        Sample s = composeMultiperson(poses, styles, config.compose, rng);
        char id[16];
        std::snprintf(id, sizeof id, "%06zu", i);
        s.id = id;
        ds.samples[i] = std::move(s);
    });
    std::vector<std::size_t> order(ds.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split(deriveSeed(seed, ~std::uint64_t{0}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split.below(i)]);
    const auto testCount = static_cast<std::size_t>(std::llround(config.testFraction * static_cast<double>(config.count)));
    for (std::size_t k = 0; k < testCount; ++k) ds.samples[order[k]].test = true;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) (ds.samples[i].test ? ds.test : ds.train).push_back(i);
    return ds;
}

void writeDataset(const std::filesystem::path& dir, const Dataset& dataset, const std::string& configHash) {
    namespace fs = std::filesystem;
    for (const char* sub : {"images", "masks", "keypoints"}) fs::create_directories(dir / sub);
    parallelFor(dataset.samples.size(), [&](std::size_t i) {
        const Sample& s = dataset.samples[i];
        writePng(dir / "images" / (s.id + ".png"), s.image);
        writeMaskPng(dir / "masks" / (s.id + ".png"), s.mask);
        writePoseFile(dir / "keypoints" / (s.id + ".json"), {s.pose, s.image.width, s.image.height});
    });
    std::ofstream out(dir / "manifest.jsonl", std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "manifest.jsonl").string());
    for (const Sample& s : dataset.samples) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["caption"] = s.caption;
        j["count"] = s.count;
        j["split"] = s.test ? "test" : "train";
        j["image"] = "images/" + s.id + ".png";
        j["mask"] = "masks/" + s.id + ".png";
        j["keypoints"] = "keypoints/" + s.id + ".json";
        std::vector<int> shirts;
        std::vector<double> builds;
        for (const auto& st : s.styles) {
            shirts.push_back(st.shirt);
            builds.push_back(st.build);
        }
        j["shirts"] = shirts;
        j["builds"] = builds;
        j["config_hash"] = configHash;
        out << j.dump() << '\n';
    }
}

Dataset readDataset(const std::filesystem::path& dir, int maxPeople, const std::string& expectedHash) {
    std::ifstream in(dir / "manifest.jsonl");
    if (!in) throw MissingArtifact("dataset manifest not found: " + (dir / "manifest.jsonl").string() + " (run `kpe-forge dataset` first)");
    Dataset ds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad manifest line: " + std::string(e.what()));
        }
        const std::string hash = j.value("config_hash", "");
        if (!expectedHash.empty() && hash != expectedHash)
            throw ConfigError("dataset config hash " + hash + " does not match requested " + expectedHash);
        Sample s;
        s.id = j.at("id").get<std::string>();
        s.caption = j.at("caption").get<std::string>();
        s.count = j.at("count").get<int>();
        s.test = j.at("split").get<std::string>() == "test";
        s.image = readPng(dir / j.at("image").get<std::string>());
        s.mask = readMaskPng(dir / j.at("mask").get<std::string>());
        s.pose = readPoseFile(dir / j.at("keypoints").get<std::string>(), maxPeople).pose;
        const auto shirts = j.at("shirts").get<std::vector<int>>();
        const auto builds = j.at("builds").get<std::vector<double>>();
        for (std::size_t k = 0; k < shirts.size() && k < builds.size(); ++k) s.styles.push_back({shirts[k], builds[k]});
        (s.test ? ds.test : ds.train).push_back(ds.samples.size());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace kpeforge
