#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wip/edm.hpp"

namespace wip::nn {

struct Tensor {
    int64_t rows = 0, cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0) {}

    static Tensor zeros(int64_t r, int64_t c) { return Tensor(r, c); }

    int64_t numel() const { return rows * cols; }
    double* row(int64_t r) { return data.data() + r * cols; }
    const double* row(int64_t r) const { return data.data() + r * cols; }
    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
    bool finite() const;
};

enum class ParamGroup {
    embedding,
    positions,
    lift,
    temporal_sa,
    gated_ca,
    feed_forward,
    layer_norm,
    stjsa,
    heads,
};

const char* to_string(ParamGroup g);

struct Param {
    std::string name;
    ParamGroup group = ParamGroup::embedding;
    Tensor value;
    Tensor grad;
    Tensor adam_m, adam_v;
    bool trainable = true;

    void init_state() {
        grad = Tensor(value.rows, value.cols);
        adam_m = Tensor(value.rows, value.cols);
        adam_v = Tensor(value.rows, value.cols);
    }
};

struct Node {
    const Tensor* vptr = nullptr;
    Tensor owned;
    Tensor grad;
    bool requires_grad = false;
    Param* bound = nullptr;
    std::function<void()> backfn;

    const Tensor& val() const { return *vptr; }
    int64_t rows() const { return vptr->rows; }
    int64_t cols() const { return vptr->cols; }
};

// Reverse-mode tape over 2-D tensors. Ops run through wip::kernels, each
// output element has a fixed accumulation order, so results are identical in
// serial and parallel mode. Heads/batch live in op arguments; tensors stay 2-D.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_(grad_enabled) {}

    bool grad_enabled() const { return grad_; }
    void set_dropout_seed(uint64_t s) { dropout_seed_ = s; }

    Node* input(const Tensor* t);  // external constant; caller keeps it alive
    Node* constant(Tensor t);
    Node* param(Param& p);

    Node* matmul(Node* a, Node* b, bool trans_a, bool trans_b);
    // x [R,in] * W[out,in]^T (+ bias[1,out])
    Node* linear(Node* x, Param& w, Param* b);
    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* mul(Node* a, Node* b);
    Node* scale(Node* a, double s);
    Node* add_bias(Node* x, Node* bias);
    Node* layer_norm(Node* x, Node* gamma, Node* beta, double eps = 1e-5);
    Node* gelu(Node* x);
    Node* sigmoid(Node* x);
    Node* softplus(Node* x);
    Node* dropout(Node* x, double p, bool train);
    Node* reshape(Node* x, int64_t rows, int64_t cols);
    // row b*T+t of x gains pos[t]; `extra_row` adds pos[index] to every row instead.
    Node* add_positions(Node* x, Node* pos, int64_t batch, int64_t tokens);
    Node* add_position_row(Node* x, Node* pos, int64_t index);

    // Multi-head attention over `tokens` positions per batch entry.
    // q,k,v: [batch*tokens, width]; optional capture of softmax maps per head.
    Node* mha(Node* q, Node* k, Node* v, int64_t batch, int64_t tokens, int heads,
              bool causal, std::vector<Tensor>* captured_probs = nullptr);

    // Node-mixing cross attention: queries/keys from the measurement embedding
    // (one per batch entry), values from every temporal position of the hidden
    // state. q_m,k_m: [batch, J*c]; v_h: [batch*tokens, J*c].
    Node* measurement_node_attention(Node* q_m, Node* k_m, Node* v_h, int64_t batch,
                                     int64_t tokens, int num_nodes, int channels, int heads);
    // Conventional variant: queries from the hidden state, keys/values from the
    // measurement. q_h: [batch*tokens, J*c]; k_m,v_m: [batch, J*c].
    Node* hidden_query_node_attention(Node* q_h, Node* k_m, Node* v_m, int64_t batch,
                                      int64_t tokens, int num_nodes, int channels, int heads);

    Node* pwd_from_points(Node* pts, int num_nodes);        // [R,J*3] -> [R,J*J]
    Node* pwd_head_postprocess(Node* x, int num_nodes);     // [R,J(J-1)/2] -> [R,J*J]
    Node* mse(Node* a, Node* b);
    Node* anchor_refs_loss(Node* pose, int num_nodes, const std::array<Vec3, 3>& targets);
    Node* velocity_loss(Node* pose, Node* target, int64_t batch, int64_t tokens, int num_nodes);
    Node* gravity_loss(Node* pose, int num_nodes);
    Node* rigidity_loss(Node* pred, Node* target, const std::vector<std::pair<int, int>>& bones,
                        int num_nodes);
    Node* weighted_sum(const std::vector<std::pair<double, Node*>>& terms);

    void backward(Node* loss);

private:
    Node* make(Tensor value, bool requires_grad);
    uint64_t next_op_seed();

    std::deque<Node> nodes_;
    std::unordered_map<const Param*, Node*> param_leaves_;
    bool grad_;
    uint64_t dropout_seed_ = 0;
    uint64_t op_counter_ = 0;
};

// Decoupled weight-decay Adam. lr warmup is handled by the caller.
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;
    int64_t t = 0;

    void step(const std::vector<Param*>& params, double lr_now);
    static void zero_grad(const std::vector<Param*>& params);
};

}  // namespace wip::nn
