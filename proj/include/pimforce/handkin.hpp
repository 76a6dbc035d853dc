#pragma once

#include <numbers>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pimforce/common.hpp"

namespace pimforce::handkin {

// Joint indexing: 0 root; then four joints per finger in the order
// thumb (CMC, MCP, IP, tip), index (MCP, PIP, DIP, tip), middle, ring, pinky.
enum class Finger : std::size_t { Thumb = 0, Index = 1, Middle = 2, Ring = 3, Pinky = 4 };

inline constexpr std::size_t kRoot = 0;
constexpr std::size_t joint_index(Finger f, std::size_t k) {
    return 1 + 4 * static_cast<std::size_t>(f) + k;
}
inline constexpr std::size_t kIndexMcp = joint_index(Finger::Index, 0);
inline constexpr std::size_t kMiddleMcp = joint_index(Finger::Middle, 0);

// Kinematic tree with bone lengths relative to the root-to-middle-MCP bone.
struct HandSkeleton {
    std::array<int, kNumJoints> parent{};
    // Length of the bone ending at each joint; the root entry is unused (0).
    std::array<double, kNumJoints> bone_length{};
    // Rest-pose unit direction (global frame) of the bone ending at each joint.
    std::array<Vec3, kNumJoints> rest_direction{};
    // Joints carrying one row of JointRotations, in row order.
    std::array<std::size_t, kNumArticulated> articulated{};

    // Relative bone lengths of a reference hand, flat rest pose with fingers
    // along +y and palm normal +z.
    static HandSkeleton reference();
    static HandSkeleton from_json(const nlohmann::json& j);
    static HandSkeleton load(const std::string& path);
    nlohmann::json to_json() const;

    // Throws InvalidInput on a malformed tree, nonpositive bone, or a
    // middle-MCP bone that is not exactly 1.
    void validate() const;
};

// 20 glove angles (radians): per finger [abduction, flexion1, flexion2, flexion3],
// fingers ordered thumb..pinky.
struct GloveAngles {
    std::array<double, kNumGloveAngles> values{};
};

// Per articulated joint Euler angles (rx flexion, ry twist, rz abduction),
// applied intrinsically as Rz * Rx * Ry.
struct JointRotations {
    std::array<Vec3, kNumArticulated> theta{};
};

enum class Frame { Canonical, RawDetector };

struct JointSet {
    std::array<Vec3, kNumJoints> joints{};
    Frame frame = Frame::Canonical;
};

// Returns the indices of angles whose magnitude exceeds `bound`. Throws
// InvalidInput on non-finite values. Out-of-bound angles are reported, not
// clamped.
std::vector<std::size_t> validate_angles(const GloveAngles& a, double bound = std::numbers::pi);

JointRotations glove_to_rotations(const GloveAngles& a);

JointSet forward_kinematics(const JointRotations& theta,
                            const HandSkeleton& skel = HandSkeleton::reference());

// Similarity-transforms a detector pose onto the skeleton's rest frame:
// root at the origin, unit root-to-middle-MCP length, and the
// (root, middle MCP, index MCP) plane matching the rest pose.
JointSet canonicalize(const JointSet& raw,
                      const HandSkeleton& skel = HandSkeleton::reference());

// True when `j` already satisfies the canonical-frame anchor constraints.
bool is_canonical(const JointSet& j, const HandSkeleton& skel = HandSkeleton::reference(),
                  double tol = 1e-6);

}  // namespace pimforce::handkin
