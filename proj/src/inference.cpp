#include "wip/inference.hpp"

#include <cmath>

namespace wip {

std::vector<double> smoothing_weights(int count, double sigma_frames) {
    std::vector<double> w(static_cast<size_t>(count));
    double sum = 0.0;
    for (int k = 0; k < count; ++k) {
        w[static_cast<size_t>(k)] =
            std::exp(-0.5 * static_cast<double>(k) * static_cast<double>(k) /
                     (sigma_frames * sigma_frames));
        sum += w[static_cast<size_t>(k)];
    }
    for (double& v : w) v /= sum;
    return w;
}

PoseFrame smooth(const std::vector<PoseFrame>& recent, double sigma_frames) {
    if (recent.empty()) throw InvalidInputError("smooth: no poses buffered");
    const auto w = smoothing_weights(static_cast<int>(recent.size()), sigma_frames);
    PoseFrame out = recent.back();
    for (auto& p : out.points) p = {0, 0, 0};
    // lag k = 0 is the newest pose (back of the buffer)
    for (size_t k = 0; k < recent.size(); ++k) {
        const PoseFrame& f = recent[recent.size() - 1 - k];
        const double wk = w[k];
        for (size_t j = 0; j < out.points.size(); ++j)
            for (int c = 0; c < 3; ++c)
                out.points[j][static_cast<size_t>(c)] +=
                    wk * f.points[j][static_cast<size_t>(c)];
    }
    return out;
}

namespace {

DistanceMatrix feedback_from_prediction(const WiPModel::StepOutput& pred,
                                        const SkeletonSpec& spec, const ModelConfig& cfg) {
    if (cfg.feedback_from_pwd_head) {
        if (cfg.j_out == cfg.j_in) return pred.pred_distances;
        return sparse_submatrix(pred.pred_distances, spec);
    }
    const DistanceMatrix full = pwd(pred.pose);
    if (cfg.j_out == cfg.j_in) return full;
    return sparse_submatrix(full, spec);
}

}  // namespace

GeneratorState warm_start(const std::vector<DistanceMatrix>& first_w_measurements,
                          const WiPModel& model, const SkeletonSpec& spec,
                          const std::vector<std::string>& out_labels) {
    const ModelConfig& cfg = model.config();
    if (static_cast<int>(first_w_measurements.size()) < cfg.window)
        throw InvalidInputError("warm_start: need at least w measurements");

    GeneratorState state;
    const size_t begin = first_w_measurements.size() - static_cast<size_t>(cfg.window);
    if (cfg.variant == Variant::wip_geo) {
        BaselineState bs;
        std::vector<std::string> sparse_labels;
        for (int i : spec.sparse_indices)
            sparse_labels.push_back(spec.joint_names[static_cast<size_t>(i)]);
        for (const auto& l : SkeletonSpec::anchor_labels()) sparse_labels.push_back(l);
        const auto sparse_slots = spec.sparse_with_anchor_indices();
        for (size_t i = begin; i < first_w_measurements.size(); ++i) {
            const PoseFrame sp =
                mds_procrustes_baseline_step(bs, first_w_measurements[i], spec, sparse_labels);
            PoseFrame dense;
            dense.node_labels = out_labels;
            dense.points.assign(static_cast<size_t>(cfg.j_out),
                                sp.points.front());  // pelvis placeholder
            for (size_t s = 0; s < sparse_slots.size(); ++s)
                dense.points[static_cast<size_t>(sparse_slots[s])] = sp.points[s];
            state.geo_feedback.push_back(std::move(dense));
        }
    } else {
        for (size_t i = begin; i < first_w_measurements.size(); ++i) {
            if (first_w_measurements[i].n != cfg.j_in)
                throw InvalidInputError("warm_start: measurement size mismatch");
            state.feedback.push_back(first_w_measurements[i]);
        }
    }
    state.labels = out_labels;
    state.frame_counter = cfg.window;
    return state;
}

PoseFrame step(GeneratorState& state, const WiPModel& model, const SkeletonSpec& spec,
               const DistanceMatrix& measurement, const InferenceConfig& icfg) {
    const ModelConfig& cfg = model.config();
    WiPModel::StepOutput pred;
    if (cfg.variant == Variant::wip_geo) {
        if (static_cast<int>(state.geo_feedback.size()) != cfg.window)
            throw InvalidInputError("step: state not warmed");
        nn::Tensor tokens(cfg.window, cfg.feedback_cols());
        for (int t = 0; t < cfg.window; ++t) {
            const nn::Tensor row = flatten_pose(state.geo_feedback[static_cast<size_t>(t)]);
            std::copy(row.data.begin(), row.data.end(), tokens.row(t));
        }
        nn::Tensor meas = flatten_matrix(measurement, true);
        nn::Graph g(false);
        const ForwardOutput out = model.forward(g, tokens, meas, 1, false);
        const int64_t last = cfg.window - 1;
        pred.pose.node_labels = state.labels;
        pred.pose.points.resize(static_cast<size_t>(cfg.j_out));
        const double* pr = out.pose->val().row(last);
        for (int j = 0; j < cfg.j_out; ++j)
            pred.pose.points[static_cast<size_t>(j)] = {pr[3 * j], pr[3 * j + 1], pr[3 * j + 2]};
        pred.pred_distances = DistanceMatrix(cfg.j_out);
        const double* dr = out.pwdm->val().row(last);
        std::copy(dr, dr + static_cast<int64_t>(cfg.j_out) * cfg.j_out,
                  pred.pred_distances.values.begin());
        state.geo_feedback.pop_front();
        state.geo_feedback.push_back(pred.pose);
    } else {
        if (static_cast<int>(state.feedback.size()) != cfg.window)
            throw InvalidInputError("step: state not warmed");
        std::vector<DistanceMatrix> past(state.feedback.begin(), state.feedback.end());
        pred = model.predict(past, measurement, state.labels);
        state.feedback.pop_front();
        state.feedback.push_back(feedback_from_prediction(pred, spec, cfg));
    }

    state.recent_poses.push_back(pred.pose);
    const size_t keep = static_cast<size_t>(std::max(1, cfg.window / 2));
    while (state.recent_poses.size() > keep) state.recent_poses.pop_front();
    ++state.frame_counter;

    const std::vector<PoseFrame> buf(state.recent_poses.begin(), state.recent_poses.end());
    return smooth(buf, icfg.smoothing_sigma);
}

std::vector<PoseFrame> run_stream(const WiPModel& model, const SkeletonSpec& spec,
                                  const std::vector<DistanceMatrix>& stream,
                                  const std::vector<std::string>& out_labels,
                                  const InferenceConfig& icfg) {
    const int w = model.config().window;
    if (static_cast<int>(stream.size()) <= w)
        throw InvalidInputError("run_stream: stream shorter than warm-up window");
    std::vector<DistanceMatrix> head(stream.begin(), stream.begin() + w);
    GeneratorState state = warm_start(head, model, spec, out_labels);

    std::vector<PoseFrame> out;
    for (size_t t = static_cast<size_t>(w); t < stream.size(); ++t) {
        PoseFrame p = step(state, model, spec, stream[t], icfg);
        p.node_labels = out_labels;
        out.push_back(std::move(p));
    }
    return out;
}

PoseFrame mds_procrustes_baseline_step(BaselineState& state, const DistanceMatrix& measurement,
                                       const SkeletonSpec& spec,
                                       const std::vector<std::string>& labels) {
    const DistanceMatrix m = measurement.clamped_nonnegative();
    const int n = m.n;
    const int num_anchors = spec.num_anchors();
    if (n <= num_anchors)
        throw InvalidInputError("baseline: matrix too small for anchor alignment");

    if (gram_rank(m, 1e-9) < 3) {
        ++state.flagged_frames;
        if (state.previous) return *state.previous;
        throw DegenerateGeometryError("baseline: rank-deficient first frame", gram_rank(m, 1e-9));
    }

    PoseFrame embedded = classical_mds(m, 3);
    embedded.node_labels = labels;

    // Gauge coherence with the previous output (rigid, reflection allowed;
    // harmless on clean input since the anchor fit below is exact).
    if (state.previous) {
        const ProcrustesResult temporal = procrustes_align(embedded, *state.previous, false, true);
        embedded = temporal.aligned;
    }

    // Anchor subset onto its fixed targets.
    PoseFrame anchors_src, anchors_tgt;
    for (int a = 0; a < num_anchors; ++a) {
        anchors_src.points.push_back(embedded.points[static_cast<size_t>(n - num_anchors + a)]);
        anchors_tgt.points.push_back(spec.anchor_targets[static_cast<size_t>(a)]);
    }
    const ProcrustesResult anchor_fit = procrustes_align(anchors_src, anchors_tgt, false, true);
    PoseFrame aligned = anchor_fit.transform.apply(embedded);

    // The anchors span z = 0, so a reflection about that plane also fits them;
    // resolve with the gravity rule, tie-breaking with the previous choice.
    PoseFrame reflected = aligned;
    for (auto& p : reflected.points) p[2] = -p[2];
    double mean_z = 0.0;
    for (int j = 0; j < n - num_anchors; ++j) mean_z += aligned.points[static_cast<size_t>(j)][2];
    mean_z /= static_cast<double>(n - num_anchors);

    bool reflect;
    if (std::abs(mean_z) < 1e-9) {
        reflect = state.last_reflected;
    } else {
        reflect = mean_z < 0.0;
    }
    PoseFrame out = reflect ? reflected : aligned;
    out.node_labels = labels;
    state.last_reflected = reflect;
    state.previous = out;
    return out;
}

std::vector<PoseFrame> mds_procrustes_baseline(const std::vector<DistanceMatrix>& stream,
                                               const SkeletonSpec& spec) {
    std::vector<std::string> labels;
    for (int i : spec.sparse_indices) labels.push_back(spec.joint_names[static_cast<size_t>(i)]);
    for (const auto& l : SkeletonSpec::anchor_labels()) labels.push_back(l);

    BaselineState state;
    std::vector<PoseFrame> out;
    out.reserve(stream.size());
    for (const auto& d : stream)
        out.push_back(mds_procrustes_baseline_step(state, d, spec, labels));
    return out;
}

}  // namespace wip
