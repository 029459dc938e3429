#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "wip/edm.hpp"

namespace wip {

enum class LowerBodyMode { feet, knees };

// Joint layout, sensor subset, bone tree and anchor placement. The human spec
// is the 24-joint SMPL-style skeleton with six sensors (pelvis, head, hands,
// and either feet or knees) plus three fixed ground anchors.
struct SkeletonSpec {
    std::vector<std::string> joint_names;          // size J, body joints only
    std::vector<int> sparse_indices;               // size J_s, sorted
    std::vector<std::pair<int, int>> bones;        // connected tree over joints
    LowerBodyMode lower_body_mode = LowerBodyMode::feet;
    std::array<Vec3, 3> anchor_targets{Vec3{0, 0, 0}, Vec3{1, 0, 0}, Vec3{0, 1, 0}};

    static SkeletonSpec human(LowerBodyMode mode = LowerBodyMode::feet);

    int num_joints() const { return static_cast<int>(joint_names.size()); }
    int num_sparse() const { return static_cast<int>(sparse_indices.size()); }
    int num_anchors() const { return 3; }

    static const std::array<std::string, 3>& anchor_labels();

    int joint_index(const std::string& name) const;  // -1 when absent

    // Sensor nodes plus anchors, as indices into an anchored frame.
    std::vector<int> sparse_with_anchor_indices() const;

    // Head, hands and the lower-body sensor pair (feet or knees).
    std::vector<int> end_effector_indices() const;
    int root_index() const;  // pelvis

    // (heel-like, toe-like) joint pair per foot, used by the contact rule.
    std::array<std::pair<int, int>, 2> foot_contact_joints() const;

    bool bones_form_connected_tree() const;
};

}  // namespace wip
