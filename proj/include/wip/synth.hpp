#pragma once

#include <cstdint>
#include <string>

#include "wip/sequence.hpp"

namespace wip {

enum class MotionKind { walk, arm_swing, squat, turn, figure8 };

MotionKind motion_kind_from_string(const std::string& name);
std::string to_string(MotionKind kind);

// Procedural desk-scale 24-joint motion in meters. Bone lengths are constant
// by construction (segments are rotated fixed offsets; legs use two-bone IK),
// stance feet sit exactly on z=0 with zero velocity, and walk/figure8 carry
// real global translation.
MotionSequence generate_synthetic(MotionKind kind, double duration_s, double fps, uint64_t seed);

}  // namespace wip
