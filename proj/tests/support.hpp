#pragma once

#include "kpe_forge/model.hpp"
#include "kpe_forge/pose.hpp"
#include "kpe_forge/rng.hpp"

#include <vector>

namespace kpeforge::testing {

inline PersonPose randomPerson(Rng& rng, JointScheme scheme = JointScheme::Skel13, double visibleProb = 0.8) {
    std::vector<Keypoint> joints(static_cast<std::size_t>(jointCount(scheme)));
    for (auto& kp : joints) {
        if (rng.uniform() < visibleProb) kp = {rng.uniform(), rng.uniform(), 1.0};
    }
    return PersonPose(scheme, std::move(joints));
}

inline MultiPersonPose randomPose(Rng& rng, int people, int maxPeople, JointScheme scheme = JointScheme::Skel13) {
    MultiPersonPose pose(scheme, maxPeople);
    for (int i = 0; i < people; ++i) pose.add(randomPerson(rng, scheme));
    return pose;
}

// Small model configuration used by gradient and wiring tests.
inline ModelConfig toyConfig(ConditioningMode mode, int d = 8, int depth = 1) {
    ModelConfig c;
    c.d = d;
    c.heads = 2;
    c.depth = depth;
    c.mlpRatio = 2;
    c.textLength = 4;
    c.textVocab = 7;
    c.imageVocab = 5;
    c.gridHeight = 2;
    c.gridWidth = 2;
    c.mode = mode;
    c.scheme = JointScheme::Skel13;
    c.maxPeople = 2;
    c.initScale = 0.5;
    return c;
}

inline SequenceExample randomExample(Rng& rng, const ModelConfig& c, int people) {
    SequenceExample ex;
    for (int i = 0; i < c.textLength; ++i)
        ex.text.push_back(i + 1 < c.textLength ? 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.textVocab - 1))) : 0);
    for (int i = 0; i < c.imageTokens(); ++i) ex.image.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.imageVocab))));
    if (c.mode == ConditioningMode::Kpe) ex.keypoints = tokenize(canonicalPersonOrder(randomPose(rng, people, c.maxPeople, c.scheme)), c.maxPeople);
    if (c.mode == ConditioningMode::SkeletonTokens)
        for (int i = 0; i < c.imageTokens(); ++i) ex.pose.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.imageVocab))));
    return ex;
}

inline SequenceBatch batchOf(const std::vector<SequenceExample>& examples) {
    SequenceBatch b;
    for (const auto& e : examples) b.examples.push_back(&e);
    return b;
}

} // namespace kpeforge::testing
