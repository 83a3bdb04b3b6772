#pragma once

#include "kpe_forge/pose.hpp"

#include <filesystem>
#include <string>

namespace kpeforge {

// Keypoint interchange document:
//   {"scheme": "SKEL13", "image_wh": [W, H], "people": [{"keypoints": [[x,y,v], ...]}]}
// Coordinates are stored already normalized to [0,1].
struct PoseDocument {
    MultiPersonPose pose;
    int imageWidth{0};
    int imageHeight{0};
};

std::string poseToJson(const PoseDocument& doc);
PoseDocument poseFromJson(const std::string& text, int maxPeople = 4);

void writePoseFile(const std::filesystem::path& path, const PoseDocument& doc);
PoseDocument readPoseFile(const std::filesystem::path& path, int maxPeople = 4);

} // namespace kpeforge
