#include "wip/skeleton.hpp"

#include <algorithm>

namespace wip {

namespace {

// SMPL joint order.
const std::vector<std::string> kHumanJoints = {
    "pelvis",        // 0
    "left_hip",      // 1
    "right_hip",     // 2
    "spine1",        // 3
    "left_knee",     // 4
    "right_knee",    // 5
    "spine2",        // 6
    "left_ankle",    // 7
    "right_ankle",   // 8
    "spine3",        // 9
    "left_foot",     // 10
    "right_foot",    // 11
    "neck",          // 12
    "left_collar",   // 13
    "right_collar",  // 14
    "head",          // 15
    "left_shoulder",   // 16
    "right_shoulder",  // 17
    "left_elbow",      // 18
    "right_elbow",     // 19
    "left_wrist",      // 20
    "right_wrist",     // 21
    "left_hand",       // 22
    "right_hand",      // 23
};

const std::vector<std::pair<int, int>> kHumanBones = {
    {0, 1},  {0, 2},  {0, 3},  {1, 4},  {2, 5},  {3, 6},  {4, 7},  {5, 8},
    {6, 9},  {7, 10}, {8, 11}, {9, 12}, {9, 13}, {9, 14}, {12, 15}, {13, 16},
    {14, 17}, {16, 18}, {17, 19}, {18, 20}, {19, 21}, {20, 22}, {21, 23},
};

}  // namespace

SkeletonSpec SkeletonSpec::human(LowerBodyMode mode) {
    SkeletonSpec s;
    s.joint_names = kHumanJoints;
    s.bones = kHumanBones;
    s.lower_body_mode = mode;
    const int lower_l = mode == LowerBodyMode::feet ? 10 : 4;
    const int lower_r = mode == LowerBodyMode::feet ? 11 : 5;
    s.sparse_indices = {0, lower_l, lower_r, 15, 22, 23};
    std::sort(s.sparse_indices.begin(), s.sparse_indices.end());
    return s;
}

const std::array<std::string, 3>& SkeletonSpec::anchor_labels() {
    static const std::array<std::string, 3> labels = {"r_o", "r_x", "r_y"};
    return labels;
}

int SkeletonSpec::joint_index(const std::string& name) const {
    for (int i = 0; i < num_joints(); ++i)
        if (joint_names[static_cast<size_t>(i)] == name) return i;
    return -1;
}

std::vector<int> SkeletonSpec::sparse_with_anchor_indices() const {
    std::vector<int> idx = sparse_indices;
    for (int a = 0; a < num_anchors(); ++a) idx.push_back(num_joints() + a);
    return idx;
}

std::vector<int> SkeletonSpec::end_effector_indices() const {
    std::vector<int> idx;
    for (int i : sparse_indices)
        if (i != root_index()) idx.push_back(i);
    return idx;
}

int SkeletonSpec::root_index() const { return joint_index("pelvis"); }

std::array<std::pair<int, int>, 2> SkeletonSpec::foot_contact_joints() const {
    return {std::make_pair(joint_index("left_ankle"), joint_index("left_foot")),
            std::make_pair(joint_index("right_ankle"), joint_index("right_foot"))};
}

bool SkeletonSpec::bones_form_connected_tree() const {
    const int j = num_joints();
    if (static_cast<int>(bones.size()) != j - 1) return false;
    std::vector<int> parent(static_cast<size_t>(j));
    for (int i = 0; i < j; ++i) parent[static_cast<size_t>(i)] = i;
    auto find = [&](int x) {
        while (parent[static_cast<size_t>(x)] != x) x = parent[static_cast<size_t>(x)];
        return x;
    };
    for (const auto& [a, b] : bones) {
        if (a < 0 || b < 0 || a >= j || b >= j) return false;
        const int ra = find(a), rb = find(b);
        if (ra == rb) return false;  // cycle
        parent[static_cast<size_t>(ra)] = rb;
    }
    return true;
}

}  // namespace wip
