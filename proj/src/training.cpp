#include "wip/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace wip {

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw InvalidInputError("TrainConfig: stage must be 1 or 2");
    if (total_steps < 0 || warmup_steps < 0) throw InvalidInputError("TrainConfig: bad step counts");
    if (batch_size < 1) throw InvalidInputError("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw InvalidInputError("TrainConfig: bad learning rate");
    noise.validate();
}

double warmup_lr(double base, int step, int warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return base;
    return base * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

Dataset Dataset::build(const MotionSequence& anchored, const SkeletonSpec& spec,
                       const ModelConfig& cfg, const NoiseConfig& noise) {
    noise.validate();
    if (!anchored.has_anchors()) throw InvalidInputError("Dataset: anchors not attached");
    const int frames = anchored.num_frames();
    if (frames <= cfg.window + noise.window)
        throw InvalidInputError("Dataset: sequence too short for window");
    if (anchored.num_nodes() != spec.num_joints() + spec.num_anchors())
        throw InvalidInputError("Dataset: node count mismatch against spec");

    Dataset d;
    d.window = cfg.window;
    d.feedback_cols = cfg.feedback_cols();
    d.j_in = cfg.j_in;
    d.j_out = cfg.j_out;
    d.variant = cfg.variant;
    d.anchor_targets = spec.anchor_targets;

    std::vector<DistanceMatrix> dense(static_cast<size_t>(frames));
    std::vector<DistanceMatrix> sparse(static_cast<size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        dense[static_cast<size_t>(t)] = pwd(anchored.frames[static_cast<size_t>(t)]);
        sparse[static_cast<size_t>(t)] = sparse_submatrix(dense[static_cast<size_t>(t)], spec);
        if (sparse[static_cast<size_t>(t)].n != cfg.j_in)
            throw InvalidInputError("Dataset: sparse node count != j_in");
    }
    const std::vector<DistanceMatrix> noisy = corrupt(sparse, noise);

    const bool sparse_targets = cfg.variant == Variant::wip_si;
    if (!sparse_targets && cfg.j_out != anchored.num_nodes())
        throw InvalidInputError("Dataset: j_out must match dense node count");

    for (int t = 0; t < frames; ++t) {
        const auto st = static_cast<size_t>(t);
        if (cfg.variant == Variant::wip_geo) {
            d.token_payload.push_back(flatten_pose(anchored.frames[st]));
        } else {
            d.token_payload.push_back(flatten_matrix(sparse[st], false));
        }
        d.measurement.push_back(flatten_matrix(noisy[st], true));
        if (sparse_targets) {
            const PoseFrame sp = sparse_subframe(anchored.frames[st], spec);
            d.target_pose.push_back(flatten_pose(sp));
            d.target_pwd.push_back(flatten_matrix(sparse[st], false));
        } else {
            d.target_pose.push_back(flatten_pose(anchored.frames[st]));
            d.target_pwd.push_back(flatten_matrix(dense[st], false));
        }
    }

    if (sparse_targets) {
        // Bones whose endpoints both carry sensors, remapped to sparse slots.
        const auto& si = spec.sparse_indices;
        auto slot = [&](int j) {
            const auto it = std::find(si.begin(), si.end(), j);
            return it == si.end() ? -1 : static_cast<int>(it - si.begin());
        };
        for (const auto& [a, b] : spec.bones) {
            const int sa = slot(a), sb = slot(b);
            if (sa >= 0 && sb >= 0) d.bones.emplace_back(std::min(sa, sb), std::max(sa, sb));
        }
        d.out_labels = sparse_subframe(anchored.frames.front(), spec).node_labels;
    } else {
        d.bones = spec.bones;
        d.out_labels = anchored.frames.front().node_labels;
    }

    const int guard = noise.window / 2;
    for (int t = guard + cfg.window; t <= frames - 1 - guard; ++t) d.sample_ends.push_back(t);
    return d;
}

TeacherForcingBatcher::TeacherForcingBatcher(int num_samples, int batch_size, uint64_t seed)
    : num_samples_(num_samples), batch_size_(batch_size), seed_(seed) {
    if (num_samples < 1) throw InvalidInputError("batcher: empty dataset");
    if (batch_size < 1) throw InvalidInputError("batcher: bad batch size");
    order_.resize(static_cast<size_t>(num_samples));
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
}

void TeacherForcingBatcher::reshuffle() {
    ++epoch_;
    cursor_ = 0;
    std::mt19937_64 rng(seed_ + 0x2545f4914f6cdd1dull * static_cast<uint64_t>(epoch_ + 1));
    std::shuffle(order_.begin(), order_.end(), rng);
}

std::vector<int> TeacherForcingBatcher::next() {
    if (cursor_ >= order_.size()) reshuffle();
    const size_t take = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
    std::vector<int> batch(order_.begin() + static_cast<int64_t>(cursor_),
                           order_.begin() + static_cast<int64_t>(cursor_ + take));
    cursor_ += take;
    return batch;
}

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    return x;
}

// Node permutation over the sensor slots (anchors stay put), applied to every
// tensor of one sample consistently.
struct SamplePermutation {
    std::vector<int> map;  // size j_in (or j_out == j_in for WiP-SI)

    void permute_matrix(const double* in, double* out, int n) const {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out[static_cast<int64_t>(i) * n + j] =
                    in[static_cast<int64_t>(map[static_cast<size_t>(i)]) * n +
                       map[static_cast<size_t>(j)]];
    }
    void permute_pose(const double* in, double* out, int n) const {
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c)
                out[3 * i + c] = in[3 * map[static_cast<size_t>(i)] + c];
    }
};

struct StepTensors {
    nn::Tensor tokens, meas, tgt_pose, tgt_pwd;
};

StepTensors assemble_batch(const Dataset& data, const std::vector<int>& batch,
                           bool permute_nodes, std::mt19937_64& perm_rng) {
    const int B = static_cast<int>(batch.size());
    const int w = data.window;
    StepTensors st{nn::Tensor(static_cast<int64_t>(B) * w, data.feedback_cols),
                   nn::Tensor(B, static_cast<int64_t>(data.j_in) * data.j_in),
                   nn::Tensor(static_cast<int64_t>(B) * w, static_cast<int64_t>(data.j_out) * 3),
                   nn::Tensor(static_cast<int64_t>(B) * w,
                              static_cast<int64_t>(data.j_out) * data.j_out)};
    for (int b = 0; b < B; ++b) {
        const int t_end = data.sample_ends[static_cast<size_t>(batch[static_cast<size_t>(b)])];
        SamplePermutation sp;
        if (permute_nodes) {
            // Sensors occupy the leading slots; the three anchors are excluded
            // so the global frame stays identifiable.
            sp.map.resize(static_cast<size_t>(data.j_in));
            std::iota(sp.map.begin(), sp.map.end(), 0);
            std::shuffle(sp.map.begin(), sp.map.end() - 3, perm_rng);
        }
        for (int i = 0; i < w; ++i) {
            const auto src = static_cast<size_t>(t_end - w + i);
            const auto tgt = static_cast<size_t>(t_end - w + i + 1);
            double* tok_row = st.tokens.row(static_cast<int64_t>(b) * w + i);
            double* pose_row = st.tgt_pose.row(static_cast<int64_t>(b) * w + i);
            double* pwd_row = st.tgt_pwd.row(static_cast<int64_t>(b) * w + i);
            if (permute_nodes) {
                sp.permute_matrix(data.token_payload[src].data.data(), tok_row, data.j_in);
                sp.permute_pose(data.target_pose[tgt].data.data(), pose_row, data.j_out);
                sp.permute_matrix(data.target_pwd[tgt].data.data(), pwd_row, data.j_out);
            } else {
                std::memcpy(tok_row, data.token_payload[src].data.data(),
                            sizeof(double) * static_cast<size_t>(st.tokens.cols));
                std::memcpy(pose_row, data.target_pose[tgt].data.data(),
                            sizeof(double) * static_cast<size_t>(st.tgt_pose.cols));
                std::memcpy(pwd_row, data.target_pwd[tgt].data.data(),
                            sizeof(double) * static_cast<size_t>(st.tgt_pwd.cols));
            }
        }
        double* meas_row = st.meas.row(b);
        if (permute_nodes) {
            sp.permute_matrix(data.measurement[static_cast<size_t>(t_end)].data.data(), meas_row,
                              data.j_in);
        } else {
            std::memcpy(meas_row, data.measurement[static_cast<size_t>(t_end)].data.data(),
                        sizeof(double) * static_cast<size_t>(st.meas.cols));
        }
    }
    return st;
}

TrainResult run_training(WiPModel& model, const Dataset& data, const TrainConfig& cfg, int stage,
                         const EvalCallback& eval, int eval_every) {
    cfg.validate();
    const ModelConfig& mc = model.config();
    if (mc.window != data.window || mc.j_in != data.j_in || mc.j_out != data.j_out ||
        mc.feedback_cols() != data.feedback_cols || mc.variant != data.variant)
        throw InvalidInputError("train: model/dataset configuration mismatch");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    auto params = model.parameters();
    nn::AdamW opt;
    opt.lr = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;

    TeacherForcingBatcher batcher(data.num_samples(), cfg.batch_size, cfg.seed);
    std::mt19937_64 perm_rng(cfg.seed ^ 0x7f4a7c159e3779b9ull);
    const bool permute_nodes = mc.variant == Variant::wip_si;

    std::ofstream csv;
    if (!cfg.loss_csv_path.empty()) {
        csv.open(cfg.loss_csv_path);
        if (!csv) throw ParseError("train: cannot open loss log " + cfg.loss_csv_path);
        csv << LossReport::csv_header() << "\n";
    }

    // Rollback snapshot for divergence aborts.
    auto take_snapshot = [&]() {
        std::vector<nn::Tensor> snap;
        snap.reserve(params.size());
        for (auto* p : params) snap.push_back(p->value);
        return snap;
    };
    std::vector<nn::Tensor> last_good = take_snapshot();
    int last_good_step = 0;

    for (int step = 1; step <= cfg.total_steps; ++step) {
        const std::vector<int> batch = batcher.next();
        const int B = static_cast<int>(batch.size());
        const StepTensors st = assemble_batch(data, batch, permute_nodes, perm_rng);

        nn::Graph g(true);
        g.set_dropout_seed(mix(cfg.seed, static_cast<uint64_t>(step)));
        const ForwardOutput out = model.forward(g, st.tokens, st.meas, B, true);

        nn::Node* tgt_pwd = g.input(&st.tgt_pwd);
        nn::Node* tgt_pose = g.input(&st.tgt_pose);
        nn::Node* pwd_of_pose = g.pwd_from_points(out.pose, data.j_out);
        nn::Node* pd = g.mse(pwd_of_pose, tgt_pwd);
        nn::Node* dd = g.mse(out.pwdm, tgt_pwd);
        nn::Node* cons = g.mse(pwd_of_pose, out.pwdm);
        const double inv_bw = 1.0 / static_cast<double>(B * data.window);
        nn::Node* refs =
            g.scale(g.anchor_refs_loss(out.pose, data.j_out, data.anchor_targets), inv_bw);
        nn::Node* rig = g.scale(
            g.rigidity_loss(out.pwdm, tgt_pwd, data.bones, data.j_out), inv_bw);
        nn::Node* grav = g.gravity_loss(out.pose, data.j_out);

        std::vector<std::pair<double, nn::Node*>> terms = {
            {cfg.weights.pd, pd},     {cfg.weights.dd, dd},       {cfg.weights.cons, cons},
            {cfg.weights.refs, refs}, {cfg.weights.rigidity, rig}, {cfg.weights.gravity, grav}};
        nn::Node* velo = nullptr;
        if (stage == 2) {
            velo = g.scale(g.velocity_loss(out.pose, tgt_pose, B, data.window, data.j_out), inv_bw);
            terms.emplace_back(cfg.weights.velo, velo);
        }
        nn::Node* total = g.weighted_sum(terms);

        LossReport rep;
        rep.stage = stage;
        rep.pd = pd->val().data[0];
        rep.dd = dd->val().data[0];
        rep.cons = cons->val().data[0];
        rep.refs = refs->val().data[0];
        rep.rigidity = rig->val().data[0];
        rep.gravity = grav->val().data[0];
        rep.velo = velo ? velo->val().data[0] : 0.0;
        rep.total = total->val().data[0];

        if (!std::isfinite(rep.total)) {
            // Divergence: restore the last good snapshot and stop.
            for (size_t i = 0; i < params.size(); ++i) params[i]->value = last_good[i];
            result.diverged = true;
            result.steps_run = last_good_step;
            break;
        }

        nn::AdamW::zero_grad(params);
        g.backward(total);
        opt.step(params, warmup_lr(cfg.learning_rate, step, cfg.warmup_steps));

        result.history.push_back(rep);
        result.steps_run = step;
        if (csv.is_open()) csv << rep.csv_row(step) << "\n";

        if (cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0) {
            last_good = take_snapshot();
            last_good_step = step;
        }
        if (eval && eval_every > 0 && step % eval_every == 0 && eval(step, model)) {
            result.stopped_early = true;
            break;
        }
    }

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace

TrainResult train_stage1(WiPModel& model, const Dataset& data, const TrainConfig& cfg,
                         const EvalCallback& eval, int eval_every) {
    if (model.has_stjsa())
        throw InvalidInputError("train_stage1: model already carries STJ-SA layers");
    model.set_all_trainable();
    TrainResult r = run_training(model, data, cfg, 1, eval, eval_every);
    model.set_stage("stage1");
    return r;
}

TrainResult train_stage2(WiPModel& model, const Dataset& data, const TrainConfig& cfg,
                         const EvalCallback& eval, int eval_every) {
    if (model.stage() != "stage1")
        throw InvalidInputError("train_stage2: needs a stage-1 model");
    if (!model.has_stjsa()) model.insert_stjsa_layers(cfg.seed);
    model.set_trainable_groups({nn::ParamGroup::gated_ca, nn::ParamGroup::stjsa});

    const auto frozen_before = snapshot_parameters(model, true);
    TrainResult r = run_training(model, data, cfg, 2, eval, eval_every);
    const FreezeAudit audit = audit_freeze(model, frozen_before);
    if (!audit.intact)
        throw NumericError("train_stage2: freeze audit failed, first violation: " +
                           (audit.violations.empty() ? std::string("?") : audit.violations.front()));
    model.set_stage("stage2");
    return r;
}

std::map<std::string, nn::Tensor> snapshot_parameters(const WiPModel& model, bool frozen_only) {
    std::map<std::string, nn::Tensor> snap;
    for (const auto* p : model.parameters())
        if (!frozen_only || !p->trainable) snap[p->name] = p->value;
    return snap;
}

FreezeAudit audit_freeze(const WiPModel& model, const std::map<std::string, nn::Tensor>& before) {
    FreezeAudit a;
    for (const auto* p : model.parameters()) {
        a.total_params += p->value.numel();
        if (p->trainable) {
            a.trainable_params += p->value.numel();
            continue;
        }
        const auto it = before.find(p->name);
        if (it == before.end()) {
            a.violations.push_back(p->name + " (missing from snapshot)");
            continue;
        }
        if (std::memcmp(it->second.data.data(), p->value.data.data(),
                        sizeof(double) * p->value.data.size()) != 0)
            a.violations.push_back(p->name);
    }
    a.unchanged_fraction =
        static_cast<double>(a.total_params - a.trainable_params) / static_cast<double>(a.total_params);
    a.intact = a.violations.empty();
    return a;
}

}  // namespace wip
