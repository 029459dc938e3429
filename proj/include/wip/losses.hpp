#pragma once

#include <vector>

#include "wip/edm.hpp"
#include "wip/skeleton.hpp"

namespace wip {

struct LossWeights {
    double pd = 1.0;
    double dd = 1.0;
    double cons = 0.5;
    double refs = 0.5;
    double velo = 0.1;
    double rigidity = 1.0;
    double gravity = 0.05;
};

struct LossReport {
    double pd = 0.0, dd = 0.0, cons = 0.0, refs = 0.0, velo = 0.0, rigidity = 0.0, gravity = 0.0;
    double total = 0.0;
    int stage = 1;

    static const char* csv_header();
    std::string csv_row(int64_t step) const;
};

// MSE terms average over every matrix entry, diagonal included.
double loss_pd(const PoseFrame& pred_pose, const DistanceMatrix& target_distances);
double loss_dd(const DistanceMatrix& pred_distances, const DistanceMatrix& target_distances);
double loss_cons(const PoseFrame& pred_pose, const DistanceMatrix& pred_distances);

// Summed Euclidean norms of the three anchor-node errors (anchors = last 3 nodes).
double loss_refs(const PoseFrame& pred_pose, const std::array<Vec3, 3>& targets);

// Mean over nodes of max(0, -z).
double gravity_reg(const PoseFrame& pred_pose);

// Summed over frames (from the second one) and joints.
double loss_velo(const std::vector<PoseFrame>& pred_seq, const std::vector<PoseFrame>& target_seq);

// Sum over bone pairs of |b_ij - b^_ij|, lengths read from the two matrices.
double loss_rigidity(const DistanceMatrix& pred_distances, const DistanceMatrix& target_distances,
                     const std::vector<std::pair<int, int>>& bones);

// Weighted combination over a prediction window. MSE terms are averaged over
// frames; the summed terms (refs, velo, rigidity) are divided by the window
// length so the total is batch-size independent; gravity averages over frames
// and joints. Stage 1 reports velo as zero and leaves it out of the total.
LossReport total_loss(const std::vector<PoseFrame>& pred_poses,
                      const std::vector<DistanceMatrix>& pred_distances,
                      const std::vector<PoseFrame>& target_poses,
                      const std::vector<DistanceMatrix>& target_distances,
                      const std::vector<std::pair<int, int>>& bones,
                      const std::array<Vec3, 3>& anchor_targets, const LossWeights& weights,
                      int stage);

}  // namespace wip
