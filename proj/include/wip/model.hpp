#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wip/edm.hpp"
#include "wip/nn.hpp"

namespace wip {

enum class Variant { wip_h, wip_si, wip_geo };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
    int num_blocks = 4;
    int channels = 32;  // c, per-node embedding width
    int heads = 4;
    double dropout = 0.1;
    Variant variant = Variant::wip_h;
    int window = 16;  // w past feedback matrices per forward
    int j_in = 9;     // sparse sensor nodes + anchors
    int j_out = 27;   // output nodes (dense + anchors; == j_in for WiP-SI)
    int ff_mult = 4;
    // Cross-attention roles: queries/keys from the measurement embedding and
    // values from the hidden state; false flips queries to the hidden state.
    bool query_from_measurement = true;
    // Autoregressive feedback: pwd of the predicted pose (default) or the
    // sparse submatrix of the PWD head output.
    bool feedback_from_pwd_head = false;

    int d() const { return j_in * channels; }           // block width
    int lifted() const { return j_out * channels; }     // head/STJ-SA width
    int ff_width() const { return d() * ff_mult; }
    int pose_dim() const { return j_out * 3; }
    int pwd_tri() const { return j_out * (j_out - 1) / 2; }
    int feedback_cols() const;  // token payload size (j_in^2 or j_out*3 for geo)

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct ForwardOutput {
    // One row per (batch, temporal position): position t carries the
    // prediction for the frame one step after feedback token t.
    nn::Node* pose = nullptr;   // [B*T, j_out*3]
    nn::Node* pwdm = nullptr;   // [B*T, j_out*j_out], symmetric, zero diagonal
    // Per STJ-SA layer, per head: (T*j_out)^2 softmax maps of batch entry 0.
    std::vector<std::vector<nn::Tensor>> stjsa_attention;
};

class WiPModel {
public:
    explicit WiPModel(const ModelConfig& cfg, uint64_t init_seed = 1);

    const ModelConfig& config() const { return cfg_; }
    const std::string& stage() const { return stage_; }
    void set_stage(const std::string& s) { stage_ = s; }
    bool has_stjsa() const { return !stjsa_.empty(); }

    // Fresh near-identity STJ-SA layers (zero output projection), one per block.
    void insert_stjsa_layers(uint64_t seed);

    // tokens: [B*T, feedback_cols] raw feedback payloads (clamped upstream);
    // measurement: [B, j_in^2]. Both stay alive for the graph's lifetime.
    ForwardOutput forward(nn::Graph& g, const nn::Tensor& tokens, const nn::Tensor& measurement,
                          int64_t batch, bool train, bool capture_attention = false) const;

    // Single-window convenience used by inference; returns the final position.
    struct StepOutput {
        PoseFrame pose;
        DistanceMatrix pred_distances;
    };
    StepOutput predict(const std::vector<DistanceMatrix>& past, const DistanceMatrix& measurement,
                       const std::vector<std::string>& out_labels) const;

    // Spec-level embedding probe: one matrix row-embedded to [N, c].
    nn::Tensor embed_pwd(const DistanceMatrix& d) const;

    std::vector<nn::Param*> parameters();
    std::vector<const nn::Param*> parameters() const;
    int64_t parameter_count() const;
    void set_trainable_groups(const std::vector<nn::ParamGroup>& groups);
    void set_all_trainable();

    void save(const std::string& path) const;
    static WiPModel load(const std::string& path);
    static WiPModel load(const std::string& path, const ModelConfig& expect);

private:
    struct Block {
        nn::Param ln1_g, ln1_b;
        nn::Param wq, wk, wv, wo, bq, bk, bv, bo;
        nn::Param ln_ca_g, ln_ca_b;
        nn::Param ca_wq, ca_wk, ca_wv, ca_wo, ca_bq, ca_bk, ca_bv, ca_bo;
        nn::Param ca_wg;
        nn::Param ln2_g, ln2_b;
        nn::Param ff_w1, ff_b1, ff_w2, ff_b2;
    };
    struct StjLayer {
        nn::Param ln_in_g, ln_in_b;
        nn::Param wq, wk, wv, wo, bq, bk, bv, bo;
        nn::Param ln_post_g, ln_post_b;
    };

    void collect_params();

    ModelConfig cfg_;
    std::string stage_ = "stage1";

    nn::Param tok_w_, tok_b_;      // feedback embedding (c x j_in, or c x 3 for geo)
    nn::Param geo_w_, geo_b_;      // geo only: j_out*c -> d
    nn::Param meas_w_, meas_b_;    // measurement embedding (c x j_in)
    nn::Param pos_;                // [window+1, d]
    std::vector<Block> blocks_;
    nn::Param lift_w_, lift_b_;    // d -> j_out*c
    nn::Param ln_f_g_, ln_f_b_;
    nn::Param pose_w_, pose_b_;
    nn::Param pwd_w_, pwd_b_;
    std::vector<StjLayer> stjsa_;

    std::vector<nn::Param*> params_;
};

nn::Tensor flatten_matrix(const DistanceMatrix& d, bool clamp);
nn::Tensor flatten_pose(const PoseFrame& f);

}  // namespace wip
