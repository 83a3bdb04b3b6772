#pragma once

#include "kpe_forge/image.hpp"
#include "kpe_forge/pose.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kpeforge {

// Pixel classes recognised by the render-domain oracle.
enum class PixelClass : unsigned char { Background, Head, Arm, Leg, Torso };

struct OracleConfig {
    // Pixels farther than this (RGB distance) from every prototype are background.
    double maxColorDistance{0.3};
    int minHeadPixels{3};
    int minLimbPixels{3};
    int minTorsoPixels{4};
};

// Nearest-prototype classification of every pixel.
std::vector<PixelClass> classifyPixels(const Image& image, const OracleConfig& cfg = {});

struct Component {
    std::vector<std::pair<int, int>> pixels;  // (x, y)
    double cx{0.0};
    double cy{0.0};
};

// 8-connected components of pixels with class `cls`, at least `minPixels` large.
std::vector<Component> components(const std::vector<PixelClass>& classes, int width, int height, PixelClass cls,
                                  int minPixels);

struct PeopleCount {
    int heads{0};
    int arms{0};
    int legs{0};
    int torsos{0};
    // max(heads, ceil(arms / 2), ceil(legs / 2))
    int count{0};
};

/// Person count for an image from the synthetic render domain: head discs,
/// arm strokes and leg strokes are counted as separate color components, so an
/// extra limb raises the count.
PeopleCount countPeople(const Image& image, const OracleConfig& cfg = {});

/// Recovers SKEL13 keypoints from a render: one person per torso component,
/// shoulders/hips from the torso's top/bottom corners, the nose at the head
/// centroid, wrist/ankle at the limb pixel farthest from its root joint and
/// elbow/knee at the bend (or the midpoint of a straight limb).
MultiPersonPose estimatePoses(const Image& image, const OracleConfig& cfg = {});

// People Count Error indicator: 1 when the detected count differs from gt.
int pce(int detected, int gt);
int pce(const Image& image, int gt, const OracleConfig& cfg = {});
double pceRate(const std::vector<int>& indicators);

struct SsimConfig {
    int window{11};
    double sigma{1.5};
    double k1{0.01};
    double k2{0.03};
    double range{1.0};

    void validate() const;
};

// Mean SSIM map over all pixels and channels. Gaussian windows are truncated
// at the border and renormalized.
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

/// Background (mask == 0) set to 0 in both images, both cropped to the mask's
/// bounding box, then ssim. Empty mask throws UndefinedScore.
double maskSsim(const Image& generated, const Image& reference, const Mask& mask, const SsimConfig& cfg = {});

struct EvalRecord {
    std::string id;
    int sample{0};  // generated sample index for this input
    int gt{0};
    int h{0};
    int pce{0};
    double oks{0.0};
    double maskSsim{0.0};
};

struct EvalSummary {
    std::size_t images{0};
    double pceRate{0.0};
    double meanOks{0.0};
    double meanMaskSsim{0.0};
};

EvalSummary summarize(const std::vector<EvalRecord>& records);
void writeEvalCsv(std::ostream& out, const std::vector<EvalRecord>& records);
std::string evalSummaryJson(const EvalSummary& summary, const std::string& mode, const std::string& configHash);

} // namespace kpeforge
