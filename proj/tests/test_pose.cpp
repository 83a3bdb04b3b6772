#include "kpe_forge/error.hpp"
#include "kpe_forge/pose.hpp"
#include "kpe_forge/pose_io.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace kpeforge;
using kpeforge::testing::randomPerson;
using kpeforge::testing::randomPose;

TEST_CASE("joint schemes have their documented sizes") {
    CHECK(jointCount(JointScheme::Skel13) == 13);
    CHECK(jointCount(JointScheme::Body25) == 25);
    CHECK(parseScheme("BODY25") == JointScheme::Body25);
    CHECK(parseScheme("skel13") == JointScheme::Skel13);
    CHECK_THROWS_AS(parseScheme("COCO17"), InvalidArgument);
}

TEST_CASE("keypoints outside [0,1] are rejected") {
    PersonPose p;
    CHECK_THROWS_AS(p.set(0, {1.2, 0.5, 1.0}), InvalidArgument);
    CHECK_THROWS_AS(p.set(0, {0.5, 0.5, -0.1}), InvalidArgument);
    CHECK_THROWS_AS(PersonPose(JointScheme::Skel13, std::vector<Keypoint>(12)), InvalidArgument);
}

TEST_CASE("multiperson pose enforces capacity and a single scheme") {
    MultiPersonPose pose(JointScheme::Skel13, 2);
    pose.add(PersonPose(JointScheme::Skel13));
    pose.add(PersonPose(JointScheme::Skel13));
    CHECK_THROWS_AS(pose.add(PersonPose(JointScheme::Skel13)), CapacityError);
    MultiPersonPose other(JointScheme::Skel13, 3);
    CHECK_THROWS_AS(other.add(PersonPose(JointScheme::Body25)), InvalidArgument);
}

TEST_CASE("transformPose: identity, translation and cropping") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const MultiPersonPose p = randomPose(rng, 1 + trial % 3, 3);
        CHECK(transformPose(p, {1.0, 1.0}, {0.0, 0.0}) == p);
    }

    MultiPersonPose single(JointScheme::Skel13, 1);
    PersonPose person;
    person.set(0, {0.5, 0.5, 1.0});
    single.add(person);
    const auto moved = transformPose(single, {1.0, 1.0}, {0.25, 0.0});
    CHECK(moved[0][0].x == doctest::Approx(0.75));
    CHECK(moved[0][0].y == doctest::Approx(0.5));
    CHECK(moved[0][0].v == 1.0);

    PersonPose right;
    right.set(0, {0.9, 0.5, 1.0});
    MultiPersonPose r(JointScheme::Skel13, 1, {right});
    const auto cropped = transformPose(r, {1.0, 1.0}, {0.0, 0.0}, Rect{0.0, 0.0, 0.5, 1.0});
    CHECK(cropped[0][0].v == 0.0);
    CHECK(cropped[0][0].x <= 1.0);

    CHECK_THROWS_AS(transformPose(r, {1.0, 1.0}, {0.0, 0.0}, Rect{0.2, 0.0, 0.2, 1.0}), InvalidArgument);
    CHECK_THROWS_AS(transformPose(r, {0.0, 1.0}, {0.0, 0.0}), InvalidArgument);
}

TEST_CASE("OKS constants are twice the COCO sigmas") {
    const auto sigmas = cocoSigmas(JointScheme::Skel13);
    REQUIRE(sigmas.size() == 13);
    CHECK(sigmas[skel13::Nose] == doctest::Approx(0.026));
    CHECK(sigmas[skel13::LShoulder] == doctest::Approx(0.079));
    CHECK(sigmas[skel13::LHip] == doctest::Approx(0.107));
    CHECK(sigmas[skel13::LAnkle] == doctest::Approx(0.089));
    const auto body = cocoSigmas(JointScheme::Body25);
    REQUIRE(body.size() == 25);
    CHECK(body[body25::Neck] == doctest::Approx(0.079));
    CHECK(body[body25::MidHip] == doctest::Approx(0.079));
    CHECK(body[body25::LHeel] == doctest::Approx(0.089));
    const auto cfg = OksConfig::forScheme(JointScheme::Skel13);
    for (std::size_t j = 0; j < sigmas.size(); ++j) CHECK(cfg.kappas[j] == doctest::Approx(2.0 * sigmas[j]));
}

TEST_CASE("oks of a pose with itself is 1") {
    Rng rng(5);
    const auto cfg = OksConfig::forScheme(JointScheme::Skel13);
    for (int i = 0; i < 20; ++i) {
        const PersonPose p = randomPerson(rng);
        if (p.visibleCount() == 0) continue;
        CHECK(oks(p, p, cfg) == 1.0);
    }
}

TEST_CASE("oks reaches one half at the analytically inverted distance") {
    PersonPose ref;
    ref.set(0, {0.2, 0.2, 1.0});
    ref.set(1, {0.6, 0.7, 1.0});
    OksConfig cfg = OksConfig::forScheme(JointScheme::Skel13);
    const double s = objectScale(ref, cfg);
    CHECK(s == doctest::Approx(std::sqrt(0.4 * 0.5)));

    // A single visible joint has zero box area, so the scale is the floor.
    PersonPose one;
    one.set(0, {0.2, 0.2, 1.0});
    cfg.minScale = 0.25;
    const double kappa = cfg.kappas[0];
    const double d = std::sqrt(2.0 * 0.25 * 0.25 * kappa * kappa * std::log(2.0));
    PersonPose cand;
    cand.set(0, {0.2 + d, 0.2, 1.0});
    CHECK(oks(cand, one, cfg) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("oks: symmetry, monotone decay and undefined reference") {
    Rng rng(9);
    const auto cfg = OksConfig::forScheme(JointScheme::Skel13);
    std::vector<Keypoint> a(13), b(13);
    for (int j = 0; j < 13; ++j) {
        a[static_cast<std::size_t>(j)] = {0.3 + 0.02 * j, 0.2 + 0.03 * j, 1.0};
        b[static_cast<std::size_t>(j)] = {0.3 + 0.02 * j + 0.01 * rng.uniform(), 0.2 + 0.03 * j, 1.0};
    }
    // Same visibility masks and equal boxes: oks is symmetric.
    b[0].x = a[0].x;
    b[12].x = a[12].x;
    const PersonPose pa(JointScheme::Skel13, a), pb(JointScheme::Skel13, b);
    CHECK(oks(pa, pb, cfg) == doctest::Approx(oks(pb, pa, cfg)).epsilon(1e-9));

    double previous = 1.1;
    for (int step = 0; step < 10; ++step) {
        auto moved = a;
        moved[5].x = a[5].x + 0.01 * step;
        const double score = oks(PersonPose(JointScheme::Skel13, moved), pa, cfg);
        CHECK(score < previous);
        previous = score;
    }

    CHECK_THROWS_AS(oks(pa, PersonPose(JointScheme::Skel13), cfg), UndefinedScore);
    auto hidden = a;
    hidden[3].v = 0.0;
    CHECK(oks(PersonPose(JointScheme::Skel13, hidden), pa, cfg) < 1.0);
}

TEST_CASE("greedy multiperson matching") {
    CHECK(greedyMatchMean({{0.9, 0.2}, {0.8, 0.1}}, 2) == doctest::Approx(0.5));
    Rng rng(3);
    const auto cfg = OksConfig::forScheme(JointScheme::Skel13);
    MultiPersonPose ref(JointScheme::Skel13, 2);
    ref.add(randomPerson(rng, JointScheme::Skel13, 1.0));
    ref.add(randomPerson(rng, JointScheme::Skel13, 1.0));
    CHECK(matchOks(ref, ref, cfg) == 1.0);
    CHECK(matchOks(MultiPersonPose(JointScheme::Skel13, 2), ref, cfg) == 0.0);
    CHECK_THROWS_AS(matchOks(ref, MultiPersonPose(JointScheme::Skel13, 2), cfg), UndefinedScore);
}

TEST_CASE("keypoint JSON round trip and arity check") {
    Rng rng(21);
    const PoseDocument doc{randomPose(rng, 2, 4), 32, 32};
    const PoseDocument back = poseFromJson(poseToJson(doc));
    CHECK(back.pose == doc.pose);
    CHECK(back.imageWidth == 32);
    const std::string bad = R"({"scheme":"SKEL13","image_wh":[8,8],"people":[{"keypoints":[[0.1,0.2]]}]})";
    CHECK_THROWS_AS(poseFromJson(bad), FormatError);
}
