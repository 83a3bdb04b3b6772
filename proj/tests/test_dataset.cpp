#include "kpe_forge/dataset.hpp"
#include "kpe_forge/error.hpp"
#include "scenes.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace kpeforge;
using namespace kpeforge::testing;

namespace {

// Degrees between straight down and the segment a -> b.
double angleFromDown(const Keypoint& a, const Keypoint& b) {
    return std::atan2(std::abs(b.x - a.x), b.y - a.y) * 180.0 / 3.14159265358979323846;
}

std::string readFile(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("zero jitter gives the fixed template stance") {
    Rng a(1), b(2);
    PoseSampleOptions o;
    o.jitter = 0.0;
    const PersonPose p = samplePose(a, JointScheme::Skel13, o);
    CHECK(p == samplePose(b, JointScheme::Skel13, o));
    CHECK(p.visibleCount() == 13);
    CHECK(p[skel13::Nose].y < p[skel13::LShoulder].y);
    CHECK(p[skel13::LShoulder].x > p[skel13::RShoulder].x);
    CHECK(p[skel13::LHip].y < p[skel13::LKnee].y);
    CHECK(p[skel13::LKnee].y < p[skel13::LAnkle].y);
}

TEST_CASE("partial poses drop knees and ankles") {
    Rng rng(3);
    PoseSampleOptions o;
    o.partial = true;
    const PersonPose p = samplePose(rng, JointScheme::Skel13, o);
    for (int j : {skel13::LKnee, skel13::RKnee, skel13::LAnkle, skel13::RAnkle}) CHECK(p[static_cast<std::size_t>(j)].v == 0.0);
    CHECK(p[skel13::LHip].v == 1.0);
    CHECK_THROWS_AS(samplePose(rng, JointScheme::Body25), InvalidArgument);
}

TEST_CASE("sampled angles respect the anatomical bounds") {
    Rng rng(4);
    const AngleBounds b;
    for (int i = 0; i < 1000; ++i) {
        PoseAngles a;
        const PersonPose p = samplePose(rng, JointScheme::Skel13, {}, &a);
        for (double arm : {a.leftArm, a.rightArm}) CHECK((arm >= b.armMin && arm <= b.armMax));
        for (double e : {a.leftElbow, a.rightElbow}) CHECK((e >= b.elbowMin && e <= b.elbowMax));
        for (double l : {a.leftLeg, a.rightLeg}) CHECK((l >= b.legMin && l <= b.legMax));
        for (double k : {a.leftKnee, a.rightKnee}) CHECK((k >= b.kneeMin && k <= b.kneeMax));
        // The geometry agrees with the reported upper-arm angle.
        CHECK(angleFromDown(p[skel13::LShoulder], p[skel13::LElbow]) == doctest::Approx(a.leftArm).epsilon(1e-6));
    }
}

TEST_CASE("renderer: empty pose, style isolation and mask coverage") {
    const RenderedTile empty = renderPerson(PersonPose(JointScheme::Skel13), {}, 32);
    CHECK(empty.mask.count() == 0);
    Rng rng(5);
    const PersonPose p = samplePose(rng, JointScheme::Skel13);
    const RenderedTile red = renderPerson(p, {0, 1.0}, 32);
    const RenderedTile blue = renderPerson(p, {2, 1.0}, 32);
    CHECK(red.mask == blue.mask);
    int differing = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const bool same = red.image.at(x, y, 0) == blue.image.at(x, y, 0) && red.image.at(x, y, 1) == blue.image.at(x, y, 1) &&
                              red.image.at(x, y, 2) == blue.image.at(x, y, 2);
            if (!same) {
                ++differing;
                CHECK(red.mask.at(x, y));
            }
            if (!red.mask.at(x, y)) CHECK(red.image.at(x, y, 0) == doctest::Approx(palette::kBackground.r).epsilon(0.01));
        }
    CHECK(differing > 0);
    FigureStyle bad{0, 1.5};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("composition: disjoint boxes, captions and keypoints under the placement map") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const int n = 1 + static_cast<int>(seed % 3);
        std::vector<PersonPose> poses;
        std::vector<FigureStyle> styles;
        for (int i = 0; i < n; ++i) {
            poses.push_back(samplePose(rng, JointScheme::Skel13));
            styles.push_back({i, 1.0});
        }
        std::vector<Placement> placements;
        const Sample s = composeMultiperson(poses, styles, {}, rng, &placements);
        CHECK(s.count == n);
        CHECK(s.pose.size() == static_cast<std::size_t>(n));
        std::size_t words = 0;
        std::istringstream caption(s.caption);
        for (std::string w; caption >> w;) ++words;
        CHECK(words == static_cast<std::size_t>(4 * n - 1));
        for (std::size_t i = 0; i < s.styles.size(); ++i) {
            CHECK(s.caption.find(std::string(s.styles[i].tag())) != std::string::npos);
        }
        // Painted boxes are disjoint: every mask component belongs to one placement.
        std::vector<std::array<double, 4>> boxes;
        for (const auto& person : s.pose.people()) {
            double x0 = 1, y0 = 1, x1 = 0, y1 = 0;
            for (const auto& kp : person.joints())
                if (kp.visible()) {
                    x0 = std::min(x0, kp.x);
                    y0 = std::min(y0, kp.y);
                    x1 = std::max(x1, kp.x);
                    y1 = std::max(y1, kp.y);
                }
            boxes.push_back({x0, y0, x1, y1});
        }
        for (std::size_t i = 0; i < boxes.size(); ++i)
            for (std::size_t j = i + 1; j < boxes.size(); ++j) {
                const bool overlap = boxes[i][0] <= boxes[j][2] && boxes[j][0] <= boxes[i][2] &&
                                     boxes[i][1] <= boxes[j][3] && boxes[j][1] <= boxes[i][3];
                CHECK_FALSE(overlap);
            }
        // Inverting the placement affine recovers the tile keypoints.
        for (const auto& pl : placements)
            for (std::size_t j = 0; j < pl.tilePose.size(); ++j) {
                const Keypoint& t = pl.tilePose[j];
                const double cx = pl.scale * t.x + pl.translate.x, cy = pl.scale * t.y + pl.translate.y;
                bool found = false;
                for (const auto& person : s.pose.people())
                    if (std::abs(person[j].x - cx) < 1e-9 && std::abs(person[j].y - cy) < 1e-9) found = true;
                CHECK(found);
                CHECK((cx - pl.translate.x) / pl.scale == doctest::Approx(t.x).epsilon(1.0 / 32));
            }
        // People are ordered left to right.
        for (std::size_t i = 1; i < s.pose.size(); ++i) CHECK(s.pose[i - 1][skel13::Nose].x < s.pose[i][skel13::Nose].x + 0.5);
    }
}

TEST_CASE("skeleton images: blank when empty, bones only otherwise") {
    const Image empty = renderSkeletonImage(MultiPersonPose(JointScheme::Skel13, 3), 32, 32);
    for (float v : empty.pixels) CHECK(v == doctest::Approx(palette::kBackground.r).epsilon(0.01));
    const Sample s = cleanScene(7, 2);
    const Image sk = renderSkeletonImage(s.pose, 32, 32);
    int dark = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (sk.at(x, y, 0) < 0.5F) ++dark;
    CHECK(dark > 10);
}

TEST_CASE("dataset build: determinism, split and count coverage") {
    DatasetConfig dc;
    dc.count = 300;
    const Dataset a = generateDataset(dc, 7);
    const Dataset b = generateDataset(dc, 7);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(std::abs(static_cast<double>(a.test.size()) - 60.0) <= 1.0);
    std::set<std::size_t> all(a.train.begin(), a.train.end());
    for (auto t : a.test) CHECK(all.insert(t).second);
    CHECK(all.size() == 300);
    std::set<int> counts;
    for (const auto& s : a.samples) counts.insert(s.count);
    CHECK(counts == std::set<int>{1, 2, 3});
}

TEST_CASE("dataset files round trip and carry the config hash") {
    DatasetConfig dc;
    dc.count = 12;
    const Dataset ds = generateDataset(dc, 3);
    const auto dir = std::filesystem::temp_directory_path() / "kpe_forge_dataset_test";
    std::filesystem::remove_all(dir);
    writeDataset(dir, ds, "abc123");
    const std::string manifest = readFile(dir / "manifest.jsonl");
    CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 12);
    CHECK(manifest.find("\"config_hash\":\"abc123\"") != std::string::npos);
    const Dataset back = readDataset(dir, 3, "abc123");
    REQUIRE(back.samples.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(back.samples[i].image == ds.samples[i].image);
        CHECK(back.samples[i].mask == ds.samples[i].mask);
        CHECK(back.samples[i].caption == ds.samples[i].caption);
        CHECK(back.samples[i].pose == ds.samples[i].pose);
    }
    CHECK(back.test == ds.test);
    CHECK_THROWS_AS(readDataset(dir, 3, "other"), ConfigError);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(readDataset(dir, 3), MissingArtifact);
}
