#include "wip/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace wip {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::wip_h: return "wip_h";
        case Variant::wip_si: return "wip_si";
        case Variant::wip_geo: return "wip_geo";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "wip_h") return Variant::wip_h;
    if (s == "wip_si") return Variant::wip_si;
    if (s == "wip_geo") return Variant::wip_geo;
    throw InvalidInputError("unknown variant '" + s + "'");
}

int ModelConfig::feedback_cols() const {
    return variant == Variant::wip_geo ? j_out * 3 : j_in * j_in;
}

void ModelConfig::validate() const {
    if (num_blocks < 1) throw InvalidInputError("ModelConfig: num_blocks must be >= 1");
    if (channels < 1 || heads < 1) throw InvalidInputError("ModelConfig: bad widths");
    if (d() % heads != 0) throw InvalidInputError("ModelConfig: d not divisible by heads");
    if (channels % heads != 0) throw InvalidInputError("ModelConfig: channels not divisible by heads");
    if (window < 1) throw InvalidInputError("ModelConfig: window must be >= 1");
    if (j_out < j_in && variant == Variant::wip_h)
        throw InvalidInputError("ModelConfig: WiP-H requires j_out >= j_in");
    if (variant == Variant::wip_si && j_out != j_in)
        throw InvalidInputError("ModelConfig: WiP-SI requires j_out == j_in");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidInputError("ModelConfig: bad dropout");
}

namespace {

enum class Init { xavier, zeros, ones, pos_normal };

void init_param(nn::Param& p, const std::string& name, nn::ParamGroup group, int64_t rows,
                int64_t cols, Init how, std::mt19937_64& rng) {
    p.name = name;
    p.group = group;
    p.value = nn::Tensor(rows, cols);
    switch (how) {
        case Init::xavier: {
            const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
            std::uniform_real_distribution<double> u(-lim, lim);
            for (double& v : p.value.data) v = u(rng);
            break;
        }
        case Init::zeros:
            break;
        case Init::ones:
            std::fill(p.value.data.begin(), p.value.data.end(), 1.0);
            break;
        case Init::pos_normal: {
            std::normal_distribution<double> n(0.0, 0.02);
            for (double& v : p.value.data) v = n(rng);
            break;
        }
    }
    p.init_state();
}

}  // namespace

WiPModel::WiPModel(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed ^ 0x5851f42d4c957f2dull);
    const int c = cfg_.channels;
    const int d = cfg_.d();
    const int lifted = cfg_.lifted();

    const int tok_in = cfg_.variant == Variant::wip_geo ? 3 : cfg_.j_in;
    init_param(tok_w_, "tok_embed.w", nn::ParamGroup::embedding, c, tok_in, Init::xavier, rng);
    init_param(tok_b_, "tok_embed.b", nn::ParamGroup::embedding, 1, c, Init::zeros, rng);
    if (cfg_.variant == Variant::wip_geo) {
        init_param(geo_w_, "geo_lift.w", nn::ParamGroup::embedding, d, cfg_.j_out * c, Init::xavier, rng);
        init_param(geo_b_, "geo_lift.b", nn::ParamGroup::embedding, 1, d, Init::zeros, rng);
    }
    init_param(meas_w_, "meas_embed.w", nn::ParamGroup::embedding, c, cfg_.j_in, Init::xavier, rng);
    init_param(meas_b_, "meas_embed.b", nn::ParamGroup::embedding, 1, c, Init::zeros, rng);
    init_param(pos_, "pos", nn::ParamGroup::positions, cfg_.window + 1, d, Init::pos_normal, rng);

    blocks_.resize(static_cast<size_t>(cfg_.num_blocks));
    for (int i = 0; i < cfg_.num_blocks; ++i) {
        Block& b = blocks_[static_cast<size_t>(i)];
        const std::string pre = "block" + std::to_string(i) + ".";
        init_param(b.ln1_g, pre + "ln1.g", nn::ParamGroup::layer_norm, 1, d, Init::ones, rng);
        init_param(b.ln1_b, pre + "ln1.b", nn::ParamGroup::layer_norm, 1, d, Init::zeros, rng);
        init_param(b.wq, pre + "sa.wq", nn::ParamGroup::temporal_sa, d, d, Init::xavier, rng);
        init_param(b.wk, pre + "sa.wk", nn::ParamGroup::temporal_sa, d, d, Init::xavier, rng);
        init_param(b.wv, pre + "sa.wv", nn::ParamGroup::temporal_sa, d, d, Init::xavier, rng);
        init_param(b.wo, pre + "sa.wo", nn::ParamGroup::temporal_sa, d, d, Init::xavier, rng);
        init_param(b.bq, pre + "sa.bq", nn::ParamGroup::temporal_sa, 1, d, Init::zeros, rng);
        init_param(b.bk, pre + "sa.bk", nn::ParamGroup::temporal_sa, 1, d, Init::zeros, rng);
        init_param(b.bv, pre + "sa.bv", nn::ParamGroup::temporal_sa, 1, d, Init::zeros, rng);
        init_param(b.bo, pre + "sa.bo", nn::ParamGroup::temporal_sa, 1, d, Init::zeros, rng);
        init_param(b.ln_ca_g, pre + "gca.ln.g", nn::ParamGroup::gated_ca, 1, d, Init::ones, rng);
        init_param(b.ln_ca_b, pre + "gca.ln.b", nn::ParamGroup::gated_ca, 1, d, Init::zeros, rng);
        init_param(b.ca_wq, pre + "gca.wq", nn::ParamGroup::gated_ca, c, c, Init::xavier, rng);
        init_param(b.ca_wk, pre + "gca.wk", nn::ParamGroup::gated_ca, c, c, Init::xavier, rng);
        init_param(b.ca_wv, pre + "gca.wv", nn::ParamGroup::gated_ca, c, c, Init::xavier, rng);
        init_param(b.ca_wo, pre + "gca.wo", nn::ParamGroup::gated_ca, c, c, Init::xavier, rng);
        init_param(b.ca_bq, pre + "gca.bq", nn::ParamGroup::gated_ca, 1, c, Init::zeros, rng);
        init_param(b.ca_bk, pre + "gca.bk", nn::ParamGroup::gated_ca, 1, c, Init::zeros, rng);
        init_param(b.ca_bv, pre + "gca.bv", nn::ParamGroup::gated_ca, 1, c, Init::zeros, rng);
        init_param(b.ca_bo, pre + "gca.bo", nn::ParamGroup::gated_ca, 1, c, Init::zeros, rng);
        init_param(b.ca_wg, pre + "gca.wg", nn::ParamGroup::gated_ca, d, d, Init::zeros, rng);
        init_param(b.ln2_g, pre + "ln2.g", nn::ParamGroup::layer_norm, 1, d, Init::ones, rng);
        init_param(b.ln2_b, pre + "ln2.b", nn::ParamGroup::layer_norm, 1, d, Init::zeros, rng);
        init_param(b.ff_w1, pre + "ff.w1", nn::ParamGroup::feed_forward, cfg_.ff_width(), d, Init::xavier, rng);
        init_param(b.ff_b1, pre + "ff.b1", nn::ParamGroup::feed_forward, 1, cfg_.ff_width(), Init::zeros, rng);
        init_param(b.ff_w2, pre + "ff.w2", nn::ParamGroup::feed_forward, d, cfg_.ff_width(), Init::xavier, rng);
        init_param(b.ff_b2, pre + "ff.b2", nn::ParamGroup::feed_forward, 1, d, Init::zeros, rng);
    }

    init_param(lift_w_, "lift.w", nn::ParamGroup::lift, lifted, d, Init::xavier, rng);
    init_param(lift_b_, "lift.b", nn::ParamGroup::lift, 1, lifted, Init::zeros, rng);
    init_param(ln_f_g_, "ln_f.g", nn::ParamGroup::layer_norm, 1, lifted, Init::ones, rng);
    init_param(ln_f_b_, "ln_f.b", nn::ParamGroup::layer_norm, 1, lifted, Init::zeros, rng);
    init_param(pose_w_, "pose_head.w", nn::ParamGroup::heads, cfg_.pose_dim(), lifted, Init::xavier, rng);
    init_param(pose_b_, "pose_head.b", nn::ParamGroup::heads, 1, cfg_.pose_dim(), Init::zeros, rng);
    init_param(pwd_w_, "pwd_head.w", nn::ParamGroup::heads, cfg_.pwd_tri(), lifted, Init::xavier, rng);
    init_param(pwd_b_, "pwd_head.b", nn::ParamGroup::heads, 1, cfg_.pwd_tri(), Init::zeros, rng);

    collect_params();
}

void WiPModel::insert_stjsa_layers(uint64_t seed) {
    if (!stjsa_.empty()) throw InvalidInputError("insert_stjsa_layers: already present");
    std::mt19937_64 rng(seed ^ 0xda3e39cb94b95bdbull);
    const int c = cfg_.channels;
    stjsa_.resize(static_cast<size_t>(cfg_.num_blocks));
    for (int i = 0; i < cfg_.num_blocks; ++i) {
        StjLayer& s = stjsa_[static_cast<size_t>(i)];
        const std::string pre = "stjsa" + std::to_string(i) + ".";
        init_param(s.ln_in_g, pre + "ln_in.g", nn::ParamGroup::stjsa, 1, c, Init::ones, rng);
        init_param(s.ln_in_b, pre + "ln_in.b", nn::ParamGroup::stjsa, 1, c, Init::zeros, rng);
        init_param(s.wq, pre + "wq", nn::ParamGroup::stjsa, c, c, Init::xavier, rng);
        init_param(s.wk, pre + "wk", nn::ParamGroup::stjsa, c, c, Init::xavier, rng);
        init_param(s.wv, pre + "wv", nn::ParamGroup::stjsa, c, c, Init::xavier, rng);
        // Zero output projection: inserting the layer is a no-op until trained.
        init_param(s.wo, pre + "wo", nn::ParamGroup::stjsa, c, c, Init::zeros, rng);
        init_param(s.bq, pre + "bq", nn::ParamGroup::stjsa, 1, c, Init::zeros, rng);
        init_param(s.bk, pre + "bk", nn::ParamGroup::stjsa, 1, c, Init::zeros, rng);
        init_param(s.bv, pre + "bv", nn::ParamGroup::stjsa, 1, c, Init::zeros, rng);
        init_param(s.bo, pre + "bo", nn::ParamGroup::stjsa, 1, c, Init::zeros, rng);
        init_param(s.ln_post_g, pre + "ln_post.g", nn::ParamGroup::stjsa, 1, c, Init::ones, rng);
        init_param(s.ln_post_b, pre + "ln_post.b", nn::ParamGroup::stjsa, 1, c, Init::zeros, rng);
    }
    collect_params();
}

void WiPModel::collect_params() {
    params_.clear();
    auto push = [&](nn::Param& p) { params_.push_back(&p); };
    push(tok_w_);
    push(tok_b_);
    if (cfg_.variant == Variant::wip_geo) {
        push(geo_w_);
        push(geo_b_);
    }
    push(meas_w_);
    push(meas_b_);
    push(pos_);
    for (auto& b : blocks_) {
        push(b.ln1_g); push(b.ln1_b);
        push(b.wq); push(b.wk); push(b.wv); push(b.wo);
        push(b.bq); push(b.bk); push(b.bv); push(b.bo);
        push(b.ln_ca_g); push(b.ln_ca_b);
        push(b.ca_wq); push(b.ca_wk); push(b.ca_wv); push(b.ca_wo);
        push(b.ca_bq); push(b.ca_bk); push(b.ca_bv); push(b.ca_bo);
        push(b.ca_wg);
        push(b.ln2_g); push(b.ln2_b);
        push(b.ff_w1); push(b.ff_b1); push(b.ff_w2); push(b.ff_b2);
    }
    push(lift_w_); push(lift_b_);
    push(ln_f_g_); push(ln_f_b_);
    push(pose_w_); push(pose_b_);
    push(pwd_w_); push(pwd_b_);
    for (auto& s : stjsa_) {
        push(s.ln_in_g); push(s.ln_in_b);
        push(s.wq); push(s.wk); push(s.wv); push(s.wo);
        push(s.bq); push(s.bk); push(s.bv); push(s.bo);
        push(s.ln_post_g); push(s.ln_post_b);
    }
}

ForwardOutput WiPModel::forward(nn::Graph& g, const nn::Tensor& tokens,
                                const nn::Tensor& measurement, int64_t batch, bool train,
                                bool capture_attention) const {
    auto* self = const_cast<WiPModel*>(this);
    const int64_t T = cfg_.window;
    const int c = cfg_.channels;
    const int d = cfg_.d();
    if (tokens.rows != batch * T || tokens.cols != cfg_.feedback_cols())
        throw InvalidInputError("forward: token tensor shape mismatch");
    if (measurement.rows != batch || measurement.cols != cfg_.j_in * cfg_.j_in)
        throw InvalidInputError("forward: measurement tensor shape mismatch");

    nn::Node* tok = g.input(&tokens);
    nn::Node* x = nullptr;
    if (cfg_.variant == Variant::wip_geo) {
        nn::Node* e = g.reshape(tok, batch * T * cfg_.j_out, 3);
        e = g.linear(e, self->tok_w_, &self->tok_b_);
        e = g.reshape(e, batch * T, static_cast<int64_t>(cfg_.j_out) * c);
        x = g.linear(e, self->geo_w_, &self->geo_b_);
    } else {
        nn::Node* e = g.reshape(tok, batch * T * cfg_.j_in, cfg_.j_in);
        e = g.linear(e, self->tok_w_, &self->tok_b_);
        x = g.reshape(e, batch * T, d);
    }
    nn::Node* pos = g.param(self->pos_);
    x = g.add_positions(x, pos, batch, T);

    nn::Node* m = g.input(&measurement);
    m = g.reshape(m, batch * cfg_.j_in, cfg_.j_in);
    m = g.linear(m, self->meas_w_, &self->meas_b_);
    m = g.reshape(m, batch, d);
    m = g.add_position_row(m, pos, cfg_.window);

    int block_index = 0;
    for (auto& bc : blocks_) {
        auto& b = const_cast<Block&>(bc);
        // temporal self-attention, causal
        nn::Node* a = g.layer_norm(x, g.param(b.ln1_g), g.param(b.ln1_b));
        nn::Node* sa = g.mha(g.linear(a, b.wq, &b.bq), g.linear(a, b.wk, &b.bk),
                             g.linear(a, b.wv, &b.bv), batch, T, cfg_.heads, true);
        sa = g.linear(sa, b.wo, &b.bo);
        x = g.add(x, g.dropout(sa, cfg_.dropout, train));

        // gated cross-attention against the measurement
        nn::Node* gate = g.sigmoid(g.matmul(x, g.param(b.ca_wg), false, true));
        nn::Node* hn = g.layer_norm(x, g.param(b.ln_ca_g), g.param(b.ln_ca_b));
        nn::Node* ctx = nullptr;
        if (cfg_.query_from_measurement) {
            nn::Node* qm = g.reshape(m, batch * cfg_.j_in, c);
            nn::Node* km = qm;
            qm = g.reshape(g.linear(qm, b.ca_wq, &b.ca_bq), batch, d);
            km = g.reshape(g.linear(km, b.ca_wk, &b.ca_bk), batch, d);
            nn::Node* vh = g.reshape(hn, batch * T * cfg_.j_in, c);
            vh = g.reshape(g.linear(vh, b.ca_wv, &b.ca_bv), batch * T, d);
            ctx = g.measurement_node_attention(qm, km, vh, batch, T, cfg_.j_in, c, cfg_.heads);
        } else {
            nn::Node* qh = g.reshape(hn, batch * T * cfg_.j_in, c);
            qh = g.reshape(g.linear(qh, b.ca_wq, &b.ca_bq), batch * T, d);
            nn::Node* mm = g.reshape(m, batch * cfg_.j_in, c);
            nn::Node* km = g.reshape(g.linear(mm, b.ca_wk, &b.ca_bk), batch, d);
            nn::Node* vm = g.reshape(g.linear(mm, b.ca_wv, &b.ca_bv), batch, d);
            ctx = g.hidden_query_node_attention(qh, km, vm, batch, T, cfg_.j_in, c, cfg_.heads);
        }
        ctx = g.reshape(ctx, batch * T * cfg_.j_in, c);
        nn::Node* a_ca = g.reshape(g.linear(ctx, b.ca_wo, &b.ca_bo), batch * T, d);
        nn::Node* a_gate = g.mul(a_ca, gate);
        x = g.add(a_gate, g.dropout(x, cfg_.dropout, train));

        // feed-forward
        nn::Node* f = g.layer_norm(x, g.param(b.ln2_g), g.param(b.ln2_b));
        f = g.linear(f, b.ff_w1, &b.ff_b1);
        f = g.gelu(f);
        f = g.linear(f, b.ff_w2, &b.ff_b2);
        x = g.add(x, g.dropout(f, cfg_.dropout, train));

        if (!x->val().finite())
            throw NumericError("forward: non-finite hidden state after block " +
                               std::to_string(block_index));
        ++block_index;
    }

    nn::Node* lifted = g.linear(x, self->lift_w_, &self->lift_b_);

    ForwardOutput out;
    int stj_index = 0;
    for (auto& sc : stjsa_) {
        auto& s = const_cast<StjLayer&>(sc);
        nn::Node* flat = g.reshape(lifted, batch * T * cfg_.j_out, c);
        nn::Node* a = g.layer_norm(flat, g.param(s.ln_in_g), g.param(s.ln_in_b));
        std::vector<nn::Tensor>* cap = nullptr;
        if (capture_attention) {
            out.stjsa_attention.emplace_back();
            cap = &out.stjsa_attention.back();
        }
        nn::Node* attn = g.mha(g.linear(a, s.wq, &s.bq), g.linear(a, s.wk, &s.bk),
                               g.linear(a, s.wv, &s.bv), batch, T * cfg_.j_out, cfg_.heads,
                               false, cap);
        attn = g.linear(attn, s.wo, &s.bo);
        nn::Node* branch = g.layer_norm(attn, g.param(s.ln_post_g), g.param(s.ln_post_b));
        flat = g.add(flat, g.dropout(branch, cfg_.dropout, train));
        lifted = g.reshape(flat, batch * T, static_cast<int64_t>(cfg_.j_out) * c);
        if (!lifted->val().finite())
            throw NumericError("forward: non-finite hidden state after STJ-SA layer " +
                               std::to_string(stj_index));
        ++stj_index;
    }

    nn::Node* y = g.layer_norm(lifted, g.param(self->ln_f_g_), g.param(self->ln_f_b_));
    out.pose = g.linear(y, self->pose_w_, &self->pose_b_);
    nn::Node* raw = g.linear(y, self->pwd_w_, &self->pwd_b_);
    out.pwdm = g.pwd_head_postprocess(raw, cfg_.j_out);
    if (!out.pose->val().finite() || !out.pwdm->val().finite())
        throw NumericError("forward: non-finite head output");
    return out;
}

nn::Tensor flatten_matrix(const DistanceMatrix& d, bool clamp) {
    nn::Tensor t(1, static_cast<int64_t>(d.n) * d.n);
    for (int64_t i = 0; i < t.cols; ++i) {
        double v = d.values[static_cast<size_t>(i)];
        if (clamp && v < 0.0) v = 0.0;
        t.data[static_cast<size_t>(i)] = v;
    }
    return t;
}

nn::Tensor flatten_pose(const PoseFrame& f) {
    nn::Tensor t(1, static_cast<int64_t>(f.size()) * 3);
    for (int i = 0; i < f.size(); ++i)
        for (int c = 0; c < 3; ++c)
            t.data[static_cast<size_t>(3 * i + c)] = f.points[static_cast<size_t>(i)][static_cast<size_t>(c)];
    return t;
}

WiPModel::StepOutput WiPModel::predict(const std::vector<DistanceMatrix>& past,
                                       const DistanceMatrix& measurement,
                                       const std::vector<std::string>& out_labels) const {
    if (static_cast<int>(past.size()) != cfg_.window)
        throw InvalidInputError("predict: need exactly w past matrices");
    nn::Tensor tokens(cfg_.window, cfg_.feedback_cols());
    for (int t = 0; t < cfg_.window; ++t) {
        const nn::Tensor row = flatten_matrix(past[static_cast<size_t>(t)], true);
        if (row.cols != tokens.cols) throw InvalidInputError("predict: feedback size mismatch");
        std::memcpy(tokens.row(t), row.data.data(), sizeof(double) * static_cast<size_t>(tokens.cols));
    }
    nn::Tensor meas = flatten_matrix(measurement, true);

    nn::Graph g(false);
    const ForwardOutput out = forward(g, tokens, meas, 1, false);
    const int64_t last = cfg_.window - 1;

    StepOutput res;
    res.pose.points.resize(static_cast<size_t>(cfg_.j_out));
    res.pose.node_labels = out_labels;
    const double* pr = out.pose->val().row(last);
    for (int j = 0; j < cfg_.j_out; ++j)
        res.pose.points[static_cast<size_t>(j)] = {pr[3 * j], pr[3 * j + 1], pr[3 * j + 2]};
    res.pred_distances = DistanceMatrix(cfg_.j_out, false);
    const double* dr = out.pwdm->val().row(last);
    std::copy(dr, dr + static_cast<int64_t>(cfg_.j_out) * cfg_.j_out, res.pred_distances.values.begin());
    if (!res.pose.finite()) throw NumericError("predict: non-finite pose output");
    return res;
}

nn::Tensor WiPModel::embed_pwd(const DistanceMatrix& d) const {
    if (d.n != cfg_.j_in) throw InvalidInputError("embed_pwd: matrix size mismatch");
    const nn::Param& w = cfg_.variant == Variant::wip_geo ? meas_w_ : tok_w_;
    const nn::Param& b = cfg_.variant == Variant::wip_geo ? meas_b_ : tok_b_;
    nn::Tensor out(d.n, cfg_.channels);
    for (int j = 0; j < d.n; ++j)
        for (int cc = 0; cc < cfg_.channels; ++cc) {
            double acc = b.value.data[static_cast<size_t>(cc)];
            for (int q = 0; q < d.n; ++q) {
                double v = d.at(j, q);
                if (d.is_measured && v < 0.0) v = 0.0;
                acc += w.value.at(cc, q) * v;
            }
            out.at(j, cc) = acc;
        }
    return out;
}

std::vector<nn::Param*> WiPModel::parameters() { return params_; }

std::vector<const nn::Param*> WiPModel::parameters() const {
    std::vector<const nn::Param*> out(params_.begin(), params_.end());
    return out;
}

int64_t WiPModel::parameter_count() const {
    int64_t n = 0;
    for (const auto* p : params_) n += p->value.numel();
    return n;
}

void WiPModel::set_trainable_groups(const std::vector<nn::ParamGroup>& groups) {
    for (auto* p : params_) {
        bool on = false;
        for (auto gr : groups) on = on || p->group == gr;
        p->trainable = on;
    }
}

void WiPModel::set_all_trainable() {
    for (auto* p : params_) p->trainable = true;
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ofstream& out, int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
int64_t read_i64(std::ifstream& in) {
    int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

}  // namespace

void WiPModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("checkpoint save: cannot open " + path);
    out << "WIPCKPT v1\n";
    out << "stage=" << stage_ << "\n";
    out << "config num_blocks=" << cfg_.num_blocks << " channels=" << cfg_.channels
        << " heads=" << cfg_.heads << " dropout=" << cfg_.dropout
        << " variant=" << to_string(cfg_.variant) << " window=" << cfg_.window
        << " j_in=" << cfg_.j_in << " j_out=" << cfg_.j_out << " ff_mult=" << cfg_.ff_mult
        << " qfm=" << (cfg_.query_from_measurement ? 1 : 0)
        << " fph=" << (cfg_.feedback_from_pwd_head ? 1 : 0) << "\n";
    out << "params=" << params_.size() << "\n";
    for (const auto* p : params_) {
        write_u32(out, static_cast<uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_i64(out, p->value.rows);
        write_i64(out, p->value.cols);
        out.write(reinterpret_cast<const char*>(p->value.data.data()),
                  static_cast<std::streamsize>(sizeof(double) * p->value.data.size()));
    }
}

WiPModel WiPModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("checkpoint load: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "WIPCKPT v1")
        throw ParseError("checkpoint load: bad magic in " + path);
    if (!std::getline(in, line) || line.rfind("stage=", 0) != 0)
        throw ParseError("checkpoint load: missing stage line");
    const std::string stage = line.substr(6);
    if (!std::getline(in, line) || line.rfind("config ", 0) != 0)
        throw ParseError("checkpoint load: missing config line");

    ModelConfig cfg;
    {
        std::istringstream cs(line.substr(7));
        std::string tok;
        while (cs >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) throw ParseError("checkpoint load: bad config token");
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            if (key == "num_blocks") cfg.num_blocks = std::stoi(val);
            else if (key == "channels") cfg.channels = std::stoi(val);
            else if (key == "heads") cfg.heads = std::stoi(val);
            else if (key == "dropout") cfg.dropout = std::stod(val);
            else if (key == "variant") cfg.variant = variant_from_string(val);
            else if (key == "window") cfg.window = std::stoi(val);
            else if (key == "j_in") cfg.j_in = std::stoi(val);
            else if (key == "j_out") cfg.j_out = std::stoi(val);
            else if (key == "ff_mult") cfg.ff_mult = std::stoi(val);
            else if (key == "qfm") cfg.query_from_measurement = val == "1";
            else if (key == "fph") cfg.feedback_from_pwd_head = val == "1";
            else throw ParseError("checkpoint load: unknown config key '" + key + "'");
        }
    }
    if (!std::getline(in, line) || line.rfind("params=", 0) != 0)
        throw ParseError("checkpoint load: missing params line");
    const size_t count = static_cast<size_t>(std::stoul(line.substr(7)));

    WiPModel model(cfg, 1);
    model.stage_ = stage;
    if (stage == "stage2") model.insert_stjsa_layers(1);
    if (count != model.params_.size())
        throw InvalidInputError("checkpoint load: parameter count mismatch against config");

    for (size_t i = 0; i < count; ++i) {
        const uint32_t len = read_u32(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const int64_t rows = read_i64(in);
        const int64_t cols = read_i64(in);
        nn::Param* p = model.params_[i];
        if (p->name != name)
            throw InvalidInputError("checkpoint load: parameter order mismatch at '" + name + "'");
        if (p->value.rows != rows || p->value.cols != cols)
            throw InvalidInputError("checkpoint load: shape mismatch for '" + name + "'");
        in.read(reinterpret_cast<char*>(p->value.data.data()),
                static_cast<std::streamsize>(sizeof(double) * p->value.data.size()));
        if (!in) throw ParseError("checkpoint load: truncated tensor data for '" + name + "'");
    }
    return model;
}

WiPModel WiPModel::load(const std::string& path, const ModelConfig& expect) {
    WiPModel m = load(path);
    if (!(m.config() == expect))
        throw InvalidInputError("checkpoint load: config mismatch against expected config");
    return m;
}

}  // namespace wip
