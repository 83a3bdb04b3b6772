#include "kpe_forge/pose_io.hpp"

#include "kpe_forge/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace kpeforge {

using json = nlohmann::json;

std::string poseToJson(const PoseDocument& doc) {
    json people = json::array();
    for (const auto& person : doc.pose.people()) {
        json kps = json::array();
        for (const auto& kp : person.joints()) kps.push_back({kp.x, kp.y, kp.v});
        people.push_back({{"keypoints", kps}});
    }
    json root = {
        {"scheme", std::string(schemeName(doc.pose.scheme()))},
        {"image_wh", {doc.imageWidth, doc.imageHeight}},
        {"people", people},
    };
    return root.dump();
}

PoseDocument poseFromJson(const std::string& text, int maxPeople) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("keypoint file is not valid JSON: ") + e.what());
    }
    try {
        const JointScheme scheme = parseScheme(root.at("scheme").get<std::string>());
        const auto& wh = root.at("image_wh");
        if (!wh.is_array() || wh.size() != 2) throw FormatError("image_wh must be [W, H]");
        PoseDocument doc{MultiPersonPose(scheme, maxPeople), wh[0].get<int>(), wh[1].get<int>()};
        for (const auto& p : root.at("people")) {
            const auto& kps = p.at("keypoints");
            std::vector<Keypoint> joints;
            for (const auto& triple : kps) {
                if (!triple.is_array() || triple.size() != 3)
                    throw FormatError("keypoint entries must be [x, y, v] triples");
                joints.push_back({triple[0].get<double>(), triple[1].get<double>(), triple[2].get<double>()});
            }
            doc.pose.add(PersonPose(scheme, std::move(joints)));
        }
        return doc;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed keypoint file: ") + e.what());
    }
}

void writePoseFile(const std::filesystem::path& path, const PoseDocument& doc) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << poseToJson(doc) << '\n';
}

PoseDocument readPoseFile(const std::filesystem::path& path, int maxPeople) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open keypoint file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return poseFromJson(ss.str(), maxPeople);
}

} // namespace kpeforge
