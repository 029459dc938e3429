#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "wip/losses.hpp"
#include "wip/model.hpp"
#include "wip/sequence.hpp"

namespace wip {

struct TrainConfig {
    int stage = 1;
    int warmup_steps = 500;
    int total_steps = 5000;
    double learning_rate = 1e-4;
    double weight_decay = 1e-3;
    int batch_size = 32;
    uint64_t seed = 0;
    NoiseConfig noise{0.15, 5, 0};  // applied to measurements in stage 2
    LossWeights weights;
    int snapshot_every = 500;  // divergence rollback granularity
    std::string loss_csv_path;  // empty: keep history in memory only

    void validate() const;
};

// Per-frame tensors precomputed from one anchored sequence. A sample is a
// window of `window` feedback tokens ending one frame before its target; each
// temporal position is supervised with the frame one step after its token.
struct Dataset {
    int window = 16;
    int feedback_cols = 0;
    int j_in = 9;
    int j_out = 27;
    Variant variant = Variant::wip_h;
    std::vector<nn::Tensor> token_payload;  // [1 x feedback_cols] per frame, clean
    std::vector<nn::Tensor> measurement;    // [1 x j_in^2] per frame, corrupted + clamped
    std::vector<int> sample_ends;           // usable window-end frames t
    std::vector<nn::Tensor> target_pose;    // [1 x j_out*3]
    std::vector<nn::Tensor> target_pwd;     // [1 x j_out^2]
    std::vector<std::pair<int, int>> bones;  // remapped to output node indexing
    std::array<Vec3, 3> anchor_targets{};
    std::vector<std::string> out_labels;

    int num_samples() const { return static_cast<int>(sample_ends.size()); }

    static Dataset build(const MotionSequence& anchored, const SkeletonSpec& spec,
                         const ModelConfig& cfg, const NoiseConfig& noise);
};

// Deterministic shuffled batches; a short final batch completes each epoch.
class TeacherForcingBatcher {
public:
    TeacherForcingBatcher(int num_samples, int batch_size, uint64_t seed);

    std::vector<int> next();
    int64_t epoch() const { return epoch_; }
    bool at_epoch_start() const { return cursor_ == 0; }

private:
    void reshuffle();

    int num_samples_;
    int batch_size_;
    uint64_t seed_;
    int64_t epoch_ = -1;
    size_t cursor_ = 0;
    std::vector<int> order_;
};

struct TrainResult {
    std::vector<LossReport> history;
    int steps_run = 0;
    bool diverged = false;
    bool stopped_early = false;
    double wall_seconds = 0.0;
};

// Optional periodic probe; return true to stop training early.
using EvalCallback = std::function<bool(int step, const WiPModel& model)>;

TrainResult train_stage1(WiPModel& model, const Dataset& data, const TrainConfig& cfg,
                         const EvalCallback& eval = nullptr, int eval_every = 0);

// Inserts near-identity STJ-SA layers, freezes everything outside the gated
// cross-attention and STJ-SA groups, trains with the velocity loss active and
// hard-fails if any frozen parameter changed.
TrainResult train_stage2(WiPModel& model, const Dataset& data, const TrainConfig& cfg,
                         const EvalCallback& eval = nullptr, int eval_every = 0);

struct FreezeAudit {
    int64_t total_params = 0;
    int64_t trainable_params = 0;
    double unchanged_fraction = 0.0;
    bool intact = false;
    std::vector<std::string> violations;
};

std::map<std::string, nn::Tensor> snapshot_parameters(const WiPModel& model,
                                                      bool frozen_only = true);
FreezeAudit audit_freeze(const WiPModel& model,
                         const std::map<std::string, nn::Tensor>& frozen_before);

double warmup_lr(double base, int step, int warmup_steps);

}  // namespace wip
