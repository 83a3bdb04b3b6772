#pragma once

#include "kpe_forge/image.hpp"
#include "kpe_forge/pose.hpp"
#include "kpe_forge/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kpeforge {

struct Color {
    float r{0.0F};
    float g{0.0F};
    float b{0.0F};
};

// Fixed render colors shared by the renderer and the counting oracle. A blend
// of any two of them stays far from every third one, so blurred edges do not
// create spurious parts.
namespace palette {
inline constexpr Color kBackground{0.9F, 0.9F, 0.9F};
inline constexpr Color kHead{0.1F, 0.75F, 0.8F};
inline constexpr Color kArm{1.0F, 0.7F, 0.0F};
inline constexpr Color kLeg{0.1F, 0.1F, 0.1F};
inline constexpr Color kBone{0.0F, 0.0F, 0.0F};

struct Shirt {
    std::string_view name;
    Color color;
};
inline constexpr std::array<Shirt, 4> kShirts{{
    {"red", {0.85F, 0.1F, 0.1F}},
    {"green", {0.1F, 0.65F, 0.2F}},
    {"blue", {0.1F, 0.2F, 0.7F}},
    {"purple", {0.75F, 0.1F, 0.75F}},
}};
} // namespace palette

struct FigureStyle {
    int shirt{0};        // index into palette::kShirts
    double build{1.0};   // limb-length multiplier in [0.8, 1.2]

    std::string_view tag() const;
    void validate() const;
};

// Limb angles in degrees, measured outward from straight down.
struct AngleBounds {
    double armMin{10.0}, armMax{60.0};
    double elbowMin{0.0}, elbowMax{60.0};
    double legMin{5.0}, legMax{25.0};
    double kneeMin{0.0}, kneeMax{30.0};
};

struct PoseSampleOptions {
    double jitter{1.0};  // 0 gives the fixed template stance
    bool partial{false}; // drop knees and ankles
    AngleBounds bounds{};
    double build{1.0};
};

// Limb angles actually used for a sampled pose (for bound checks).
struct PoseAngles {
    double leftArm{0.0}, rightArm{0.0}, leftElbow{0.0}, rightElbow{0.0};
    double leftLeg{0.0}, rightLeg{0.0}, leftKnee{0.0}, rightKnee{0.0};
};

/// SKEL13 stick pose in a unit tile: figure centred horizontally, head at the
/// top and feet at the bottom. Only SKEL13 is supported by the renderer.
PersonPose samplePose(Rng& rng, JointScheme scheme, const PoseSampleOptions& options = {},
                      PoseAngles* angles = nullptr);

// Pixel sizes of the painted primitives for a figure `heightPx` tall.
struct StrokeSizes {
    double limbRadius;
    double headRadius;
};
StrokeSizes strokeSizes(double heightPx);

struct RenderedTile {
    Image image;
    Mask mask;
};

/// Paints one person into `canvas` (pose in the canvas' normalized frame).
/// Limbs first, then the shirt-filled torso, then the head disc.
void paintPerson(Image& canvas, Mask& mask, const PersonPose& pose, const FigureStyle& style, double heightPx);

// Single figure on a blank `size` x `size` tile.
RenderedTile renderPerson(const PersonPose& pose, const FigureStyle& style, int size = 32);

// Black bones on the background color, no styling.
Image renderSkeletonImage(const MultiPersonPose& pose, int width, int height);

struct Sample {
    std::string id;
    Image image;
    Mask mask;
    MultiPersonPose pose;  // canvas frame, left-to-right
    std::vector<FigureStyle> styles;
    std::string caption;
    int count{0};
    bool test{false};
};

std::string makeCaption(const std::vector<FigureStyle>& styles);

struct ComposeOptions {
    int width{32};
    int height{32};
    double scaleJitter{0.1};
    int maxAttempts{200};
    // Figure height as a fraction of the canvas for 1, 2 and 3 people.
    std::array<double, 3> figureHeight{0.72, 0.6, 0.5};
    int marginPx{1};
};

// One figure as placed on a canvas.
struct Placement {
    PersonPose tilePose;
    FigureStyle style;
    double scale{1.0};
    Vec2 translate{};
};

/// Jitters each figure's scale by +-scaleJitter, places figures at random
/// non-overlapping positions (painted bounding boxes plus margin are disjoint)
/// and maps the tile keypoints into the canvas with transformPose.
Sample composeMultiperson(const std::vector<PersonPose>& tilePoses, const std::vector<FigureStyle>& styles,
                          const ComposeOptions& options, Rng& rng, std::vector<Placement>* placements = nullptr);

// Renders fixed placements (no randomness).
Sample renderPlacements(const std::vector<Placement>& placements, const ComposeOptions& options);

struct DatasetConfig {
    int count{300};
    double testFraction{0.2};
    int maxPeople{3};
    double partialProbability{0.1};
    ComposeOptions compose{};
    AngleBounds bounds{};
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Deterministic for a given seed; sample i draws from deriveSeed(seed, i).
Dataset generateDataset(const DatasetConfig& config, std::uint64_t seed);

/// Writes images/, masks/, keypoints/ and manifest.jsonl (one JSON object per
/// sample: id, caption, count, split, paths, config_hash) under `dir`.
void writeDataset(const std::filesystem::path& dir, const Dataset& dataset, const std::string& configHash);

// Reads a dataset written by writeDataset; checks the stored config hash when
// `expectedHash` is non-empty.
Dataset readDataset(const std::filesystem::path& dir, int maxPeople, const std::string& expectedHash = {});

} // namespace kpeforge
