#pragma once

#include <string>
#include <vector>

#include "wip/edm.hpp"
#include "wip/skeleton.hpp"

namespace wip {

// Timestamped pose stream. `scale` stores the original mean head-pelvis
// distance recorded at normalization time; raw sequences carry 1.0.
struct MotionSequence {
    std::vector<PoseFrame> frames;
    double fps = 60.0;
    double scale = 1.0;
    bool floor_aligned = false;

    int num_frames() const { return static_cast<int>(frames.size()); }
    int num_nodes() const { return frames.empty() ? 0 : frames.front().size(); }
    bool has_anchors() const;
    double duration_s() const { return fps > 0 ? num_frames() / fps : 0.0; }
};

// One teacher-forcing window: w clean sparse matrices up to t-1, the noisy
// sparse measurement at t, and the dense targets at t.
struct WindowedSample {
    std::vector<DistanceMatrix> past_distances;
    DistanceMatrix current_noisy;
    PoseFrame target_pose;
    DistanceMatrix target_distances;
    int frame_index = 0;  // t in the source sequence
};

// Normalize mean head-pelvis distance to 1 and shift so min z == 0 over the
// sequence. Idempotent; `scale` accumulates multiplicatively.
MotionSequence preprocess(const MotionSequence& seq, const SkeletonSpec& spec);

// Append the three fixed anchor nodes to every frame. Requires a preprocessed
// sequence without anchors.
MotionSequence attach_anchors(const MotionSequence& seq, const SkeletonSpec& spec);

// Sliding teacher-forcing windows (stride 1) over an anchored sequence.
// current_noisy comes from corrupt() on the sparse stream, and frames whose
// noise window would be truncated at the sequence boundary are skipped.
std::vector<WindowedSample> make_samples(const MotionSequence& seq, const SkeletonSpec& spec,
                                         const NoiseConfig& noise, int w);

// Restrict an anchored frame or matrix to the sensor nodes plus anchors.
PoseFrame sparse_subframe(const PoseFrame& frame, const SkeletonSpec& spec);
DistanceMatrix sparse_submatrix(const DistanceMatrix& d, const SkeletonSpec& spec);

// Text format: "WIPSEQ v1" header, fps/J/anchors/scale line, joint-name line,
// then one line of 3*N decimals per frame (>= 15 significant digits).
void save_sequence(const MotionSequence& seq, const std::string& path);
MotionSequence load_sequence(const std::string& path);
MotionSequence load_sequence(const std::string& path, const SkeletonSpec& expect_spec);

}  // namespace wip
