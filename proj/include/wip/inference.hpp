#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "wip/model.hpp"
#include "wip/sequence.hpp"

namespace wip {

struct InferenceConfig {
    double smoothing_sigma = 1.5;  // half-normal kernel width, frames
};

// Rolling state of one generation stream: the last w feedback payloads and the
// last floor(w/2) raw predictions for output smoothing.
struct GeneratorState {
    std::deque<DistanceMatrix> feedback;    // PWD variants
    std::deque<PoseFrame> geo_feedback;     // WiP-Geo
    std::deque<PoseFrame> recent_poses;     // newest at back
    std::vector<std::string> labels;        // output node labels
    int64_t frame_counter = 0;
};

// Seeds the feedback buffer with the first w measured matrices (the bootstrap
// rule; the paper leaves cold start unspecified). WiP-Geo bootstraps feedback
// poses from the classical MDS baseline instead, with uninstrumented joints
// held at the pelvis.
GeneratorState warm_start(const std::vector<DistanceMatrix>& first_w_measurements,
                          const WiPModel& model, const SkeletonSpec& spec,
                          const std::vector<std::string>& out_labels);

// One autoregressive step: forward pass, push pwd of the predicted pose (or
// the PWD-head submatrix, per config) into the feedback buffer, return the
// smoothed pose.
PoseFrame step(GeneratorState& state, const WiPModel& model, const SkeletonSpec& spec,
               const DistanceMatrix& measurement, const InferenceConfig& icfg = {});

// Half-normal weighted average over the buffered poses (newest last).
PoseFrame smooth(const std::vector<PoseFrame>& recent, double sigma_frames);
std::vector<double> smoothing_weights(int count, double sigma_frames);

// Convenience: warm start on the first w frames, then one pose per remaining
// measurement. Output index i corresponds to stream frame w + i.
std::vector<PoseFrame> run_stream(const WiPModel& model, const SkeletonSpec& spec,
                                  const std::vector<DistanceMatrix>& stream,
                                  const std::vector<std::string>& out_labels,
                                  const InferenceConfig& icfg = {});

struct BaselineState {
    std::optional<PoseFrame> previous;
    bool last_reflected = false;
    int flagged_frames = 0;
};

// Classical per-frame reconstruction: MDS embedding, rigid Procrustes onto the
// previous output for gauge coherence, rigid anchor alignment (reflection
// allowed), and the gravity rule to resolve the residual reflection about the
// anchor plane. Rank-deficient frames hold the previous pose and are flagged.
PoseFrame mds_procrustes_baseline_step(BaselineState& state, const DistanceMatrix& measurement,
                                       const SkeletonSpec& spec,
                                       const std::vector<std::string>& labels);

std::vector<PoseFrame> mds_procrustes_baseline(const std::vector<DistanceMatrix>& stream,
                                               const SkeletonSpec& spec);

}  // namespace wip
