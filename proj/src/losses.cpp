#include "wip/losses.hpp"

#include <cmath>
#include <cstdio>

namespace wip {

namespace {

double mse(const DistanceMatrix& a, const DistanceMatrix& b, const char* what) {
    if (a.n != b.n) throw InvalidInputError(std::string(what) + ": matrix size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.values.size());
}

}  // namespace

const char* LossReport::csv_header() {
    return "step,pd,dd,cons,refs,velo,rigidity,gravity,total";
}

std::string LossReport::csv_row(int64_t step) const {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<long long>(step), pd, dd, cons, refs, velo, rigidity, gravity, total);
    return buf;
}

double loss_pd(const PoseFrame& pred_pose, const DistanceMatrix& target_distances) {
    if (pred_pose.size() != target_distances.n)
        throw InvalidInputError("loss_pd: pose/matrix size mismatch");
    return mse(pwd(pred_pose), target_distances, "loss_pd");
}

double loss_dd(const DistanceMatrix& pred_distances, const DistanceMatrix& target_distances) {
    return mse(pred_distances, target_distances, "loss_dd");
}

double loss_cons(const PoseFrame& pred_pose, const DistanceMatrix& pred_distances) {
    if (pred_pose.size() != pred_distances.n)
        throw InvalidInputError("loss_cons: pose/matrix size mismatch");
    return mse(pwd(pred_pose), pred_distances, "loss_cons");
}

double loss_refs(const PoseFrame& pred_pose, const std::array<Vec3, 3>& targets) {
    const int n = pred_pose.size();
    if (n < 3) throw InvalidInputError("loss_refs: anchors missing from pose");
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) {
        const Vec3& p = pred_pose.points[static_cast<size_t>(n - 3 + a)];
        const Vec3& t = targets[static_cast<size_t>(a)];
        const double dx = p[0] - t[0], dy = p[1] - t[1], dz = p[2] - t[2];
        acc += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return acc;
}

double gravity_reg(const PoseFrame& pred_pose) {
    double acc = 0.0;
    for (const auto& p : pred_pose.points) acc += std::max(0.0, -p[2]);
    return acc / static_cast<double>(pred_pose.size());
}

double loss_velo(const std::vector<PoseFrame>& pred_seq, const std::vector<PoseFrame>& target_seq) {
    if (pred_seq.size() != target_seq.size())
        throw InvalidInputError("loss_velo: sequence length mismatch");
    double acc = 0.0;
    for (size_t t = 1; t < pred_seq.size(); ++t) {
        const int n = pred_seq[t].size();
        if (n != target_seq[t].size()) throw InvalidInputError("loss_velo: frame size mismatch");
        for (int j = 0; j < n; ++j) {
            double ss = 0.0;
            for (int c = 0; c < 3; ++c) {
                const size_t sj = static_cast<size_t>(j), sc = static_cast<size_t>(c);
                const double d = (pred_seq[t].points[sj][sc] - pred_seq[t - 1].points[sj][sc]) -
                                 (target_seq[t].points[sj][sc] - target_seq[t - 1].points[sj][sc]);
                ss += d * d;
            }
            acc += std::sqrt(ss);
        }
    }
    return acc;
}

double loss_rigidity(const DistanceMatrix& pred_distances, const DistanceMatrix& target_distances,
                     const std::vector<std::pair<int, int>>& bones) {
    if (pred_distances.n != target_distances.n)
        throw InvalidInputError("loss_rigidity: matrix size mismatch");
    double acc = 0.0;
    for (const auto& [i, j] : bones)
        acc += std::abs(pred_distances.at(i, j) - target_distances.at(i, j));
    return acc;
}

LossReport total_loss(const std::vector<PoseFrame>& pred_poses,
                      const std::vector<DistanceMatrix>& pred_distances,
                      const std::vector<PoseFrame>& target_poses,
                      const std::vector<DistanceMatrix>& target_distances,
                      const std::vector<std::pair<int, int>>& bones,
                      const std::array<Vec3, 3>& anchor_targets, const LossWeights& weights,
                      int stage) {
    const size_t n = pred_poses.size();
    if (n == 0 || pred_distances.size() != n || target_poses.size() != n ||
        target_distances.size() != n)
        throw InvalidInputError("total_loss: window sizes disagree");
    if (stage != 1 && stage != 2) throw InvalidInputError("total_loss: stage must be 1 or 2");

    LossReport r;
    r.stage = stage;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (size_t t = 0; t < n; ++t) {
        r.pd += loss_pd(pred_poses[t], target_distances[t]) * inv_n;
        r.dd += loss_dd(pred_distances[t], target_distances[t]) * inv_n;
        r.cons += loss_cons(pred_poses[t], pred_distances[t]) * inv_n;
        r.refs += loss_refs(pred_poses[t], anchor_targets) * inv_n;
        r.rigidity += loss_rigidity(pred_distances[t], target_distances[t], bones) * inv_n;
        r.gravity += gravity_reg(pred_poses[t]) * inv_n;
    }
    if (stage == 2) r.velo = loss_velo(pred_poses, target_poses) * inv_n;

    r.total = weights.pd * r.pd + weights.dd * r.dd + weights.cons * r.cons +
              weights.refs * r.refs + weights.velo * r.velo + weights.rigidity * r.rigidity +
              weights.gravity * r.gravity;
    return r;
}

}  // namespace wip
