#include "wip/nn.hpp"

#include <cmath>
#include <cstring>
#include <memory>

#include "wip/kernels.hpp"

namespace wip::nn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double uniform01(uint64_t h) {
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

}  // namespace

bool Tensor::finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::embedding: return "embedding";
        case ParamGroup::positions: return "positions";
        case ParamGroup::lift: return "lift";
        case ParamGroup::temporal_sa: return "temporal_sa";
        case ParamGroup::gated_ca: return "gated_ca";
        case ParamGroup::feed_forward: return "feed_forward";
        case ParamGroup::layer_norm: return "layer_norm";
        case ParamGroup::stjsa: return "stjsa";
        case ParamGroup::heads: return "heads";
    }
    return "?";
}

Node* Graph::make(Tensor value, bool requires_grad) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.owned = std::move(value);
    n.vptr = &n.owned;
    n.requires_grad = requires_grad && grad_;
    if (n.requires_grad) n.grad = Tensor(n.owned.rows, n.owned.cols);
    return &n;
}

Node* Graph::input(const Tensor* t) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.vptr = t;
    n.requires_grad = false;
    return &n;
}

Node* Graph::constant(Tensor t) { return make(std::move(t), false); }

Node* Graph::param(Param& p) {
    auto it = param_leaves_.find(&p);
    if (it != param_leaves_.end()) return it->second;
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.vptr = &p.value;
    n.bound = &p;
    n.requires_grad = grad_ && p.trainable;
    if (n.requires_grad) n.grad = Tensor(p.value.rows, p.value.cols);
    param_leaves_[&p] = &n;
    return &n;
}

uint64_t Graph::next_op_seed() { return splitmix64(dropout_seed_ ^ (0xa076bc93ull + ++op_counter_)); }

Node* Graph::matmul(Node* a, Node* b, bool trans_a, bool trans_b) {
    const int64_t m = trans_a ? a->cols() : a->rows();
    const int64_t kk = trans_a ? a->rows() : a->cols();
    const int64_t kb = trans_b ? b->cols() : b->rows();
    const int64_t n = trans_b ? b->rows() : b->cols();
    if (kk != kb) throw InvalidInputError("matmul: inner dimensions disagree");

    Tensor out(m, n);
    kernels::matmul(trans_a, trans_b, m, n, kk, a->val().data.data(), b->val().data.data(),
                    out.data.data(), false);
    Node* o = make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad) {
        o->backfn = [a, b, o, trans_a, trans_b, m, n, kk]() {
            const double* dc = o->grad.data.data();
            if (a->requires_grad) {
                double* da = a->grad.data.data();
                if (!trans_a && !trans_b)
                    kernels::matmul(false, true, m, kk, n, dc, b->val().data.data(), da, true);
                else if (!trans_a && trans_b)
                    kernels::matmul(false, false, m, kk, n, dc, b->val().data.data(), da, true);
                else if (trans_a && !trans_b)
                    kernels::matmul(false, true, kk, m, n, b->val().data.data(), dc, da, true);
                else
                    kernels::matmul(true, true, kk, m, n, b->val().data.data(), dc, da, true);
            }
            if (b->requires_grad) {
                double* db = b->grad.data.data();
                if (!trans_a && !trans_b)
                    kernels::matmul(true, false, kk, n, m, a->val().data.data(), dc, db, true);
                else if (!trans_a && trans_b)
                    kernels::matmul(true, false, n, kk, m, dc, a->val().data.data(), db, true);
                else if (trans_a && !trans_b)
                    kernels::matmul(false, false, kk, n, m, a->val().data.data(), dc, db, true);
                else
                    kernels::matmul(true, true, n, kk, m, dc, a->val().data.data(), db, true);
            }
        };
    }
    return o;
}

Node* Graph::linear(Node* x, Param& w, Param* b) {
    Node* y = matmul(x, param(w), false, true);
    if (b) y = add_bias(y, param(*b));
    return y;
}

Node* Graph::add(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw InvalidInputError("add: shape mismatch");
    Tensor out = a->val();
    const double* bd = b->val().data.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] += bd[i];
    Node* o = make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad) {
        o->backfn = [a, b, o]() {
            for (Node* p : {a, b})
                if (p->requires_grad)
                    for (int64_t i = 0; i < o->grad.numel(); ++i)
                        p->grad.data[static_cast<size_t>(i)] += o->grad.data[static_cast<size_t>(i)];
        };
    }
    return o;
}

Node* Graph::sub(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw InvalidInputError("sub: shape mismatch");
    Tensor out = a->val();
    const double* bd = b->val().data.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] -= bd[i];
    Node* o = make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad) {
        o->backfn = [a, b, o]() {
            if (a->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i)
                    a->grad.data[static_cast<size_t>(i)] += o->grad.data[static_cast<size_t>(i)];
            if (b->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i)
                    b->grad.data[static_cast<size_t>(i)] -= o->grad.data[static_cast<size_t>(i)];
        };
    }
    return o;
}

Node* Graph::mul(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw InvalidInputError("mul: shape mismatch");
    Tensor out = a->val();
    const double* bd = b->val().data.data();
    for (int64_t i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] *= bd[i];
    Node* o = make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad) {
        o->backfn = [a, b, o]() {
            if (a->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i)
                    a->grad.data[static_cast<size_t>(i)] +=
                        o->grad.data[static_cast<size_t>(i)] * b->val().data[static_cast<size_t>(i)];
            if (b->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i)
                    b->grad.data[static_cast<size_t>(i)] +=
                        o->grad.data[static_cast<size_t>(i)] * a->val().data[static_cast<size_t>(i)];
        };
    }
    return o;
}

Node* Graph::scale(Node* a, double s) {
    Tensor out = a->val();
    for (double& v : out.data) v *= s;
    Node* o = make(std::move(out), a->requires_grad);
    if (o->requires_grad) {
        o->backfn = [a, o, s]() {
            for (int64_t i = 0; i < o->grad.numel(); ++i)
                a->grad.data[static_cast<size_t>(i)] += s * o->grad.data[static_cast<size_t>(i)];
        };
    }
    return o;
}

Node* Graph::add_bias(Node* x, Node* bias) {
    if (bias->rows() != 1 || bias->cols() != x->cols())
        throw InvalidInputError("add_bias: bias shape mismatch");
    Tensor out(x->rows(), x->cols());
    kernels::add_bias_rows(x->val().data.data(), bias->val().data.data(), out.data.data(),
                           x->rows(), x->cols());
    Node* o = make(std::move(out), x->requires_grad || bias->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, bias, o]() {
            const int64_t rows = o->grad.rows, cols = o->grad.cols;
            if (x->requires_grad)
                for (int64_t i = 0; i < rows * cols; ++i)
                    x->grad.data[static_cast<size_t>(i)] += o->grad.data[static_cast<size_t>(i)];
            if (bias->requires_grad)
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c)
                        bias->grad.data[static_cast<size_t>(c)] += o->grad.at(r, c);
        };
    }
    return o;
}

Node* Graph::layer_norm(Node* x, Node* gamma, Node* beta, double eps) {
    const int64_t rows = x->rows(), cols = x->cols();
    Tensor out(rows, cols);
    auto mean = std::make_shared<Tensor>(rows, 1);
    auto inv_std = std::make_shared<Tensor>(rows, 1);
    kernels::layer_norm_rows(x->val().data.data(), gamma->val().data.data(),
                             beta->val().data.data(), out.data.data(), mean->data.data(),
                             inv_std->data.data(), rows, cols, eps);
    Node* o = make(std::move(out), x->requires_grad || gamma->requires_grad || beta->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, gamma, beta, o, mean, inv_std, rows, cols]() {
            const double* g = gamma->val().data.data();
            if (x->requires_grad) {
                const bool par = kernels::mode() == kernels::Mode::parallel;
#pragma omp parallel for schedule(static) if (par)
                for (int64_t r = 0; r < rows; ++r) {
                    const double mu = mean->data[static_cast<size_t>(r)];
                    const double is = inv_std->data[static_cast<size_t>(r)];
                    const double* xr = x->val().row(r);
                    const double* dyr = o->grad.row(r);
                    double* dxr = x->grad.row(r);
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t c = 0; c < cols; ++c) {
                        const double xh = (xr[c] - mu) * is;
                        const double dxh = dyr[c] * g[c];
                        s1 += dxh;
                        s2 += dxh * xh;
                    }
                    const double inv_n = 1.0 / static_cast<double>(cols);
                    for (int64_t c = 0; c < cols; ++c) {
                        const double xh = (xr[c] - mu) * is;
                        const double dxh = dyr[c] * g[c];
                        dxr[c] += is * (dxh - inv_n * s1 - xh * inv_n * s2);
                    }
                }
            }
            if (gamma->requires_grad || beta->requires_grad) {
                for (int64_t r = 0; r < rows; ++r) {
                    const double mu = mean->data[static_cast<size_t>(r)];
                    const double is = inv_std->data[static_cast<size_t>(r)];
                    const double* xr = x->val().row(r);
                    const double* dyr = o->grad.row(r);
                    for (int64_t c = 0; c < cols; ++c) {
                        if (gamma->requires_grad)
                            gamma->grad.data[static_cast<size_t>(c)] += dyr[c] * (xr[c] - mu) * is;
                        if (beta->requires_grad) beta->grad.data[static_cast<size_t>(c)] += dyr[c];
                    }
                }
            }
        };
    }
    return o;
}

Node* Graph::gelu(Node* x) {
    Tensor out = x->val();
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    Node* o = make(std::move(out), x->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, o]() {
            for (int64_t i = 0; i < o->grad.numel(); ++i) {
                const double v = x->val().data[static_cast<size_t>(i)];
                const double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
                                 v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
                x->grad.data[static_cast<size_t>(i)] += d * o->grad.data[static_cast<size_t>(i)];
            }
        };
    }
    return o;
}

Node* Graph::sigmoid(Node* x) {
    Tensor out = x->val();
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Node* o = make(std::move(out), x->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, o]() {
            for (int64_t i = 0; i < o->grad.numel(); ++i) {
                const double s = o->val().data[static_cast<size_t>(i)];
                x->grad.data[static_cast<size_t>(i)] +=
                    s * (1.0 - s) * o->grad.data[static_cast<size_t>(i)];
            }
        };
    }
    return o;
}

Node* Graph::softplus(Node* x) {
    Tensor out = x->val();
    for (double& v : out.data) v = v > 30.0 ? v : std::log1p(std::exp(v));
    Node* o = make(std::move(out), x->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, o]() {
            for (int64_t i = 0; i < o->grad.numel(); ++i) {
                const double v = x->val().data[static_cast<size_t>(i)];
                const double s = 1.0 / (1.0 + std::exp(-v));
                x->grad.data[static_cast<size_t>(i)] += s * o->grad.data[static_cast<size_t>(i)];
            }
        };
    }
    return o;
}

Node* Graph::dropout(Node* x, double p, bool train) {
    if (!train || p <= 0.0) return x;
    const uint64_t seed = next_op_seed();
    const double keep = 1.0 - p;
    Tensor out = x->val();
    for (int64_t i = 0; i < out.numel(); ++i) {
        const bool drop = uniform01(splitmix64(seed ^ static_cast<uint64_t>(i))) < p;
        out.data[static_cast<size_t>(i)] = drop ? 0.0 : out.data[static_cast<size_t>(i)] / keep;
    }
    Node* o = make(std::move(out), x->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, o, seed, p, keep]() {
            for (int64_t i = 0; i < o->grad.numel(); ++i) {
                const bool drop = uniform01(splitmix64(seed ^ static_cast<uint64_t>(i))) < p;
                if (!drop)
                    x->grad.data[static_cast<size_t>(i)] +=
                        o->grad.data[static_cast<size_t>(i)] / keep;
            }
        };
    }
    return o;
}

Node* Graph::reshape(Node* x, int64_t rows, int64_t cols) {
    if (rows * cols != x->rows() * x->cols()) throw InvalidInputError("reshape: element count mismatch");
    Tensor out = x->val();
    out.rows = rows;
    out.cols = cols;
    Node* o = make(std::move(out), x->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, o]() {
            for (int64_t i = 0; i < o->grad.numel(); ++i)
                x->grad.data[static_cast<size_t>(i)] += o->grad.data[static_cast<size_t>(i)];
        };
    }
    return o;
}

Node* Graph::add_positions(Node* x, Node* pos, int64_t batch, int64_t tokens) {
    if (x->rows() != batch * tokens || pos->cols() != x->cols() || pos->rows() < tokens)
        throw InvalidInputError("add_positions: shape mismatch");
    Tensor out = x->val();
    for (int64_t r = 0; r < out.rows; ++r) {
        const double* pr = pos->val().row(r % tokens);
        double* orow = out.row(r);
        for (int64_t c = 0; c < out.cols; ++c) orow[c] += pr[c];
    }
    Node* o = make(std::move(out), x->requires_grad || pos->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, pos, o, tokens]() {
            if (x->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i)
                    x->grad.data[static_cast<size_t>(i)] += o->grad.data[static_cast<size_t>(i)];
            if (pos->requires_grad)
                for (int64_t r = 0; r < o->grad.rows; ++r) {
                    double* pg = pos->grad.row(r % tokens);
                    const double* gr = o->grad.row(r);
                    for (int64_t c = 0; c < o->grad.cols; ++c) pg[c] += gr[c];
                }
        };
    }
    return o;
}

Node* Graph::add_position_row(Node* x, Node* pos, int64_t index) {
    if (pos->cols() != x->cols() || index >= pos->rows())
        throw InvalidInputError("add_position_row: shape mismatch");
    Tensor out = x->val();
    for (int64_t r = 0; r < out.rows; ++r) {
        const double* pr = pos->val().row(index);
        double* orow = out.row(r);
        for (int64_t c = 0; c < out.cols; ++c) orow[c] += pr[c];
    }
    Node* o = make(std::move(out), x->requires_grad || pos->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, pos, o, index]() {
            if (x->requires_grad)
                for (int64_t i = 0; i < o->grad.numel(); ++i)
                    x->grad.data[static_cast<size_t>(i)] += o->grad.data[static_cast<size_t>(i)];
            if (pos->requires_grad)
                for (int64_t r = 0; r < o->grad.rows; ++r) {
                    double* pg = pos->grad.row(index);
                    const double* gr = o->grad.row(r);
                    for (int64_t c = 0; c < o->grad.cols; ++c) pg[c] += gr[c];
                }
        };
    }
    return o;
}

Node* Graph::mha(Node* q, Node* k, Node* v, int64_t batch, int64_t tokens, int heads,
                 bool causal, std::vector<Tensor>* captured_probs) {
    const int64_t width = q->cols();
    if (width % heads != 0) throw InvalidInputError("mha: width not divisible by heads");
    if (q->rows() != batch * tokens || k->rows() != q->rows() || v->rows() != q->rows())
        throw InvalidInputError("mha: row count mismatch");
    const int64_t dh = width / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<Tensor>(batch * heads, tokens * tokens);
    Tensor out(batch * tokens, width);
    const bool par = kernels::mode() == kernels::Mode::parallel;

#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            double* pb = probs->row(b * heads + h);
            // scores + softmax
            for (int64_t t = 0; t < tokens; ++t) {
                const double* qt = q->val().row(b * tokens + t) + h * dh;
                const int64_t valid = causal ? t + 1 : tokens;
                double mx = -1e300;
                double* prow = pb + t * tokens;
                for (int64_t s = 0; s < valid; ++s) {
                    const double* ks = k->val().row(b * tokens + s) + h * dh;
                    double dotv = 0.0;
#pragma omp simd reduction(+ : dotv)
                    for (int64_t c = 0; c < dh; ++c) dotv += qt[c] * ks[c];
                    prow[s] = dotv * inv_scale;
                    mx = std::max(mx, prow[s]);
                }
                double sum = 0.0;
                for (int64_t s = 0; s < valid; ++s) {
                    prow[s] = std::exp(prow[s] - mx);
                    sum += prow[s];
                }
                const double inv = 1.0 / sum;
                for (int64_t s = 0; s < valid; ++s) prow[s] *= inv;
                for (int64_t s = valid; s < tokens; ++s) prow[s] = 0.0;
                // context
                double* ot = out.row(b * tokens + t) + h * dh;
                std::memset(ot, 0, sizeof(double) * static_cast<size_t>(dh));
                for (int64_t s = 0; s < valid; ++s) {
                    const double w = prow[s];
                    const double* vs = v->val().row(b * tokens + s) + h * dh;
#pragma omp simd
                    for (int64_t c = 0; c < dh; ++c) ot[c] += w * vs[c];
                }
            }
        }
    }

    if (captured_probs) {
        captured_probs->clear();
        for (int h = 0; h < heads; ++h) {
            Tensor m(tokens, tokens);
            std::memcpy(m.data.data(), probs->row(0 * heads + h),
                        sizeof(double) * static_cast<size_t>(tokens * tokens));
            captured_probs->push_back(std::move(m));
        }
    }

    Node* o = make(std::move(out), q->requires_grad || k->requires_grad || v->requires_grad);
    if (o->requires_grad) {
        o->backfn = [q, k, v, o, probs, batch, tokens, heads, dh, causal, inv_scale]() {
            const bool par2 = kernels::mode() == kernels::Mode::parallel;
#pragma omp parallel for schedule(static) collapse(2) if (par2)
            for (int64_t b = 0; b < batch; ++b) {
                for (int64_t h = 0; h < heads; ++h) {
                    const double* pb = probs->row(b * heads + h);
                    std::vector<double> dp(static_cast<size_t>(tokens));
                    for (int64_t t = 0; t < tokens; ++t) {
                        const int64_t valid = causal ? t + 1 : tokens;
                        const double* prow = pb + t * tokens;
                        const double* go = o->grad.row(b * tokens + t) + h * dh;
                        // dP and dV
                        double dsum = 0.0;
                        for (int64_t s = 0; s < valid; ++s) {
                            const double* vs = v->val().row(b * tokens + s) + h * dh;
                            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                            for (int64_t c = 0; c < dh; ++c) acc += go[c] * vs[c];
                            dp[static_cast<size_t>(s)] = acc;
                            dsum += acc * prow[s];
                        }
                        if (v->requires_grad) {
                            for (int64_t s = 0; s < valid; ++s) {
                                double* dvs = v->grad.row(b * tokens + s) + h * dh;
                                const double w = prow[s];
#pragma omp simd
                                for (int64_t c = 0; c < dh; ++c) dvs[c] += w * go[c];
                            }
                        }
                        // softmax backward, then dQ / dK
                        const double* qt = q->val().row(b * tokens + t) + h * dh;
                        double* dqt = q->requires_grad ? q->grad.row(b * tokens + t) + h * dh : nullptr;
                        for (int64_t s = 0; s < valid; ++s) {
                            const double dl = prow[s] * (dp[static_cast<size_t>(s)] - dsum) * inv_scale;
                            const double* ks = k->val().row(b * tokens + s) + h * dh;
                            if (dqt) {
#pragma omp simd
                                for (int64_t c = 0; c < dh; ++c) dqt[c] += dl * ks[c];
                            }
                            if (k->requires_grad) {
                                double* dks = k->grad.row(b * tokens + s) + h * dh;
#pragma omp simd
                                for (int64_t c = 0; c < dh; ++c) dks[c] += dl * qt[c];
                            }
                        }
                    }
                }
            }
        };
    }
    return o;
}

Node* Graph::measurement_node_attention(Node* q_m, Node* k_m, Node* v_h, int64_t batch,
                                        int64_t tokens, int num_nodes, int channels, int heads) {
    const int64_t jc = static_cast<int64_t>(num_nodes) * channels;
    if (q_m->rows() != batch || k_m->rows() != batch || q_m->cols() != jc || k_m->cols() != jc)
        throw InvalidInputError("measurement_node_attention: bad measurement shape");
    if (v_h->rows() != batch * tokens || v_h->cols() != jc)
        throw InvalidInputError("measurement_node_attention: bad hidden shape");
    if (channels % heads != 0)
        throw InvalidInputError("measurement_node_attention: channels not divisible by heads");
    const int ch = channels / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(ch));
    const int J = num_nodes;

    auto probs = std::make_shared<Tensor>(batch * heads, static_cast<int64_t>(J) * J);
    Tensor out(batch * tokens, jc);
    const bool par = kernels::mode() == kernels::Mode::parallel;

    auto col = [channels, ch](int j, int h, int c) { return static_cast<int64_t>(j) * channels + h * ch + c; };

#pragma omp parallel for schedule(static) if (par)
    for (int64_t b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            double* pb = probs->row(b * heads + h);
            const double* qb = q_m->val().row(b);
            const double* kb = k_m->val().row(b);
            for (int j = 0; j < J; ++j) {
                double* prow = pb + static_cast<int64_t>(j) * J;
                double mx = -1e300;
                for (int jp = 0; jp < J; ++jp) {
                    double dotv = 0.0;
                    for (int c = 0; c < ch; ++c) dotv += qb[col(j, h, c)] * kb[col(jp, h, c)];
                    prow[jp] = dotv * inv_scale;
                    mx = std::max(mx, prow[jp]);
                }
                double sum = 0.0;
                for (int jp = 0; jp < J; ++jp) {
                    prow[jp] = std::exp(prow[jp] - mx);
                    sum += prow[jp];
                }
                const double inv = 1.0 / sum;
                for (int jp = 0; jp < J; ++jp) prow[jp] *= inv;
            }
            for (int64_t t = 0; t < tokens; ++t) {
                const double* vr = v_h->val().row(b * tokens + t);
                double* orow = out.row(b * tokens + t);
                for (int j = 0; j < J; ++j) {
                    const double* prow = pb + static_cast<int64_t>(j) * J;
                    for (int c = 0; c < ch; ++c) {
                        double acc = 0.0;
                        for (int jp = 0; jp < J; ++jp) acc += prow[jp] * vr[col(jp, h, c)];
                        orow[col(j, h, c)] = acc;
                    }
                }
            }
        }
    }

    Node* o = make(std::move(out), q_m->requires_grad || k_m->requires_grad || v_h->requires_grad);
    if (o->requires_grad) {
        o->backfn = [q_m, k_m, v_h, o, probs, batch, tokens, J, channels, ch, heads, inv_scale,
                     col]() {
            const bool par2 = kernels::mode() == kernels::Mode::parallel;
#pragma omp parallel for schedule(static) if (par2)
            for (int64_t b = 0; b < batch; ++b) {
                for (int h = 0; h < heads; ++h) {
                    const double* pb = probs->row(b * heads + h);
                    std::vector<double> dp(static_cast<size_t>(J) * J, 0.0);
                    // dV and dP
                    for (int64_t t = 0; t < tokens; ++t) {
                        const double* go = o->grad.row(b * tokens + t);
                        const double* vr = v_h->val().row(b * tokens + t);
                        double* dvr = v_h->requires_grad ? v_h->grad.row(b * tokens + t) : nullptr;
                        for (int j = 0; j < J; ++j) {
                            const double* prow = pb + static_cast<int64_t>(j) * J;
                            double* dprow = dp.data() + static_cast<int64_t>(j) * J;
                            for (int c = 0; c < ch; ++c) {
                                const double g = go[col(j, h, c)];
                                if (g == 0.0) continue;
                                for (int jp = 0; jp < J; ++jp) {
                                    dprow[jp] += g * vr[col(jp, h, c)];
                                    if (dvr) dvr[col(jp, h, c)] += g * prow[jp];
                                }
                            }
                        }
                    }
                    // softmax backward + dQ/dK
                    const double* qb = q_m->val().row(b);
                    const double* kb = k_m->val().row(b);
                    double* dqb = q_m->requires_grad ? q_m->grad.row(b) : nullptr;
                    double* dkb = k_m->requires_grad ? k_m->grad.row(b) : nullptr;
                    for (int j = 0; j < J; ++j) {
                        const double* prow = pb + static_cast<int64_t>(j) * J;
                        const double* dprow = dp.data() + static_cast<int64_t>(j) * J;
                        double dsum = 0.0;
                        for (int jp = 0; jp < J; ++jp) dsum += dprow[jp] * prow[jp];
                        for (int jp = 0; jp < J; ++jp) {
                            const double dl = prow[jp] * (dprow[jp] - dsum) * inv_scale;
                            for (int c = 0; c < ch; ++c) {
                                if (dqb) dqb[col(j, h, c)] += dl * kb[col(jp, h, c)];
                                if (dkb) dkb[col(jp, h, c)] += dl * qb[col(j, h, c)];
                            }
                        }
                    }
                }
            }
        };
    }
    return o;
}

Node* Graph::hidden_query_node_attention(Node* q_h, Node* k_m, Node* v_m, int64_t batch,
                                         int64_t tokens, int num_nodes, int channels, int heads) {
    const int64_t jc = static_cast<int64_t>(num_nodes) * channels;
    if (q_h->rows() != batch * tokens || q_h->cols() != jc)
        throw InvalidInputError("hidden_query_node_attention: bad hidden shape");
    if (k_m->rows() != batch || v_m->rows() != batch || k_m->cols() != jc || v_m->cols() != jc)
        throw InvalidInputError("hidden_query_node_attention: bad measurement shape");
    if (channels % heads != 0)
        throw InvalidInputError("hidden_query_node_attention: channels not divisible by heads");
    const int ch = channels / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(ch));
    const int J = num_nodes;

    auto probs = std::make_shared<Tensor>(batch * tokens * heads, static_cast<int64_t>(J) * J);
    Tensor out(batch * tokens, jc);
    const bool par = kernels::mode() == kernels::Mode::parallel;

    auto col = [channels, ch](int j, int h, int c) { return static_cast<int64_t>(j) * channels + h * ch + c; };

#pragma omp parallel for schedule(static) if (par)
    for (int64_t r = 0; r < batch * tokens; ++r) {
        const int64_t b = r / tokens;
        const double* qr = q_h->val().row(r);
        const double* kb = k_m->val().row(b);
        const double* vb = v_m->val().row(b);
        double* orow = out.row(r);
        for (int h = 0; h < heads; ++h) {
            double* pr = probs->row(r * heads + h);
            for (int j = 0; j < J; ++j) {
                double* prow = pr + static_cast<int64_t>(j) * J;
                double mx = -1e300;
                for (int jp = 0; jp < J; ++jp) {
                    double dotv = 0.0;
                    for (int c = 0; c < ch; ++c) dotv += qr[col(j, h, c)] * kb[col(jp, h, c)];
                    prow[jp] = dotv * inv_scale;
                    mx = std::max(mx, prow[jp]);
                }
                double sum = 0.0;
                for (int jp = 0; jp < J; ++jp) {
                    prow[jp] = std::exp(prow[jp] - mx);
                    sum += prow[jp];
                }
                const double inv = 1.0 / sum;
                for (int jp = 0; jp < J; ++jp) prow[jp] *= inv;
                for (int c = 0; c < ch; ++c) {
                    double acc = 0.0;
                    for (int jp = 0; jp < J; ++jp) acc += prow[jp] * vb[col(jp, h, c)];
                    orow[col(j, h, c)] = acc;
                }
            }
        }
    }

    Node* o = make(std::move(out), q_h->requires_grad || k_m->requires_grad || v_m->requires_grad);
    if (o->requires_grad) {
        o->backfn = [q_h, k_m, v_m, o, probs, batch, tokens, J, channels, ch, heads, inv_scale,
                     col]() {
            const bool par2 = kernels::mode() == kernels::Mode::parallel;
            // Parallel over batch entries: k/v grads are per-batch rows.
#pragma omp parallel for schedule(static) if (par2)
            for (int64_t b = 0; b < batch; ++b) {
                const double* kb = k_m->val().row(b);
                const double* vb = v_m->val().row(b);
                double* dkb = k_m->requires_grad ? k_m->grad.row(b) : nullptr;
                double* dvb = v_m->requires_grad ? v_m->grad.row(b) : nullptr;
                std::vector<double> dp(static_cast<size_t>(J) * J);
                for (int64_t t = 0; t < tokens; ++t) {
                    const int64_t r = b * tokens + t;
                    const double* go = o->grad.row(r);
                    const double* qr = q_h->val().row(r);
                    double* dqr = q_h->requires_grad ? q_h->grad.row(r) : nullptr;
                    for (int h = 0; h < heads; ++h) {
                        const double* pr = probs->row(r * heads + h);
                        std::fill(dp.begin(), dp.end(), 0.0);
                        for (int j = 0; j < J; ++j) {
                            const double* prow = pr + static_cast<int64_t>(j) * J;
                            double* dprow = dp.data() + static_cast<int64_t>(j) * J;
                            for (int c = 0; c < ch; ++c) {
                                const double g = go[col(j, h, c)];
                                if (g == 0.0) continue;
                                for (int jp = 0; jp < J; ++jp) {
                                    dprow[jp] += g * vb[col(jp, h, c)];
                                    if (dvb) dvb[col(jp, h, c)] += g * prow[jp];
                                }
                            }
                        }
                        for (int j = 0; j < J; ++j) {
                            const double* prow = pr + static_cast<int64_t>(j) * J;
                            const double* dprow = dp.data() + static_cast<int64_t>(j) * J;
                            double dsum = 0.0;
                            for (int jp = 0; jp < J; ++jp) dsum += dprow[jp] * prow[jp];
                            for (int jp = 0; jp < J; ++jp) {
                                const double dl = prow[jp] * (dprow[jp] - dsum) * inv_scale;
                                for (int c = 0; c < ch; ++c) {
                                    if (dqr) dqr[col(j, h, c)] += dl * kb[col(jp, h, c)];
                                    if (dkb) dkb[col(jp, h, c)] += dl * qr[col(j, h, c)];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return o;
}

Node* Graph::pwd_from_points(Node* pts, int num_nodes) {
    const int J = num_nodes;
    if (pts->cols() != static_cast<int64_t>(J) * 3)
        throw InvalidInputError("pwd_from_points: column count != 3*J");
    const int64_t rows = pts->rows();
    Tensor out(rows, static_cast<int64_t>(J) * J);
    const bool par = kernels::mode() == kernels::Mode::parallel;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = pts->val().row(r);
        double* d = out.row(r);
        for (int i = 0; i < J; ++i)
            for (int j = i + 1; j < J; ++j) {
                const double dx = p[3 * i] - p[3 * j];
                const double dy = p[3 * i + 1] - p[3 * j + 1];
                const double dz = p[3 * i + 2] - p[3 * j + 2];
                const double v = std::sqrt(dx * dx + dy * dy + dz * dz);
                d[static_cast<int64_t>(i) * J + j] = v;
                d[static_cast<int64_t>(j) * J + i] = v;
            }
    }
    Node* o = make(std::move(out), pts->requires_grad);
    if (o->requires_grad) {
        o->backfn = [pts, o, J, rows]() {
            const bool par2 = kernels::mode() == kernels::Mode::parallel;
#pragma omp parallel for schedule(static) if (par2)
            for (int64_t r = 0; r < rows; ++r) {
                const double* p = pts->val().row(r);
                const double* gd = o->grad.row(r);
                const double* dv = o->val().row(r);
                double* gp = pts->grad.row(r);
                for (int i = 0; i < J; ++i)
                    for (int j = i + 1; j < J; ++j) {
                        const double dist = dv[static_cast<int64_t>(i) * J + j];
                        if (dist < 1e-12) continue;
                        const double g = gd[static_cast<int64_t>(i) * J + j] +
                                         gd[static_cast<int64_t>(j) * J + i];
                        const double s = g / dist;
                        for (int c = 0; c < 3; ++c) {
                            const double diff = p[3 * i + c] - p[3 * j + c];
                            gp[3 * i + c] += s * diff;
                            gp[3 * j + c] -= s * diff;
                        }
                    }
            }
        };
    }
    return o;
}

Node* Graph::pwd_head_postprocess(Node* x, int num_nodes) {
    const int J = num_nodes;
    const int64_t tri = static_cast<int64_t>(J) * (J - 1) / 2;
    if (x->cols() != tri) throw InvalidInputError("pwd_head_postprocess: column count mismatch");
    const int64_t rows = x->rows();
    Tensor out(rows, static_cast<int64_t>(J) * J);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x->val().row(r);
        double* d = out.row(r);
        int64_t u = 0;
        for (int i = 0; i < J; ++i)
            for (int j = i + 1; j < J; ++j, ++u) {
                const double raw = xr[u];
                const double v = raw > 30.0 ? raw : std::log1p(std::exp(raw));
                d[static_cast<int64_t>(i) * J + j] = v;
                d[static_cast<int64_t>(j) * J + i] = v;
            }
    }
    Node* o = make(std::move(out), x->requires_grad);
    if (o->requires_grad) {
        o->backfn = [x, o, J, rows]() {
            for (int64_t r = 0; r < rows; ++r) {
                const double* xr = x->val().row(r);
                const double* gd = o->grad.row(r);
                double* gx = x->grad.row(r);
                int64_t u = 0;
                for (int i = 0; i < J; ++i)
                    for (int j = i + 1; j < J; ++j, ++u) {
                        const double s = 1.0 / (1.0 + std::exp(-xr[u]));
                        gx[u] += s * (gd[static_cast<int64_t>(i) * J + j] +
                                      gd[static_cast<int64_t>(j) * J + i]);
                    }
            }
        };
    }
    return o;
}

Node* Graph::mse(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw InvalidInputError("mse: shape mismatch");
    const int64_t n = a->val().numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a->val().data[static_cast<size_t>(i)] - b->val().data[static_cast<size_t>(i)];
        acc += d * d;
    }
    Tensor out(1, 1);
    out.data[0] = acc / static_cast<double>(n);
    Node* o = make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad) {
        o->backfn = [a, b, o, n]() {
            const double g = 2.0 * o->grad.data[0] / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) {
                const double d =
                    a->val().data[static_cast<size_t>(i)] - b->val().data[static_cast<size_t>(i)];
                if (a->requires_grad) a->grad.data[static_cast<size_t>(i)] += g * d;
                if (b->requires_grad) b->grad.data[static_cast<size_t>(i)] -= g * d;
            }
        };
    }
    return o;
}

Node* Graph::anchor_refs_loss(Node* pose, int num_nodes, const std::array<Vec3, 3>& targets) {
    if (pose->cols() != static_cast<int64_t>(num_nodes) * 3)
        throw InvalidInputError("anchor_refs_loss: bad pose shape");
    if (num_nodes < 3) throw InvalidInputError("anchor_refs_loss: anchors missing");
    const int64_t rows = pose->rows();
    double acc = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = pose->val().row(r);
        for (int a = 0; a < 3; ++a) {
            const int j = num_nodes - 3 + a;
            const double dx = p[3 * j] - targets[static_cast<size_t>(a)][0];
            const double dy = p[3 * j + 1] - targets[static_cast<size_t>(a)][1];
            const double dz = p[3 * j + 2] - targets[static_cast<size_t>(a)][2];
            acc += std::sqrt(dx * dx + dy * dy + dz * dz);
        }
    }
    Tensor out(1, 1);
    out.data[0] = acc;
    Node* o = make(std::move(out), pose->requires_grad);
    if (o->requires_grad) {
        o->backfn = [pose, o, rows, num_nodes, targets]() {
            const double g = o->grad.data[0];
            for (int64_t r = 0; r < rows; ++r) {
                const double* p = pose->val().row(r);
                double* gp = pose->grad.row(r);
                for (int a = 0; a < 3; ++a) {
                    const int j = num_nodes - 3 + a;
                    const double dx = p[3 * j] - targets[static_cast<size_t>(a)][0];
                    const double dy = p[3 * j + 1] - targets[static_cast<size_t>(a)][1];
                    const double dz = p[3 * j + 2] - targets[static_cast<size_t>(a)][2];
                    const double norm = std::sqrt(dx * dx + dy * dy + dz * dz);
                    if (norm < 1e-12) continue;
                    gp[3 * j] += g * dx / norm;
                    gp[3 * j + 1] += g * dy / norm;
                    gp[3 * j + 2] += g * dz / norm;
                }
            }
        };
    }
    return o;
}

Node* Graph::velocity_loss(Node* pose, Node* target, int64_t batch, int64_t tokens, int num_nodes) {
    if (pose->rows() != batch * tokens || target->rows() != pose->rows() ||
        pose->cols() != static_cast<int64_t>(num_nodes) * 3 || target->cols() != pose->cols())
        throw InvalidInputError("velocity_loss: shape mismatch");
    double acc = 0.0;
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t t = 1; t < tokens; ++t) {
            const double* pc = pose->val().row(b * tokens + t);
            const double* pp = pose->val().row(b * tokens + t - 1);
            const double* gc = target->val().row(b * tokens + t);
            const double* gp = target->val().row(b * tokens + t - 1);
            for (int j = 0; j < num_nodes; ++j) {
                double ss = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = (pc[3 * j + c] - pp[3 * j + c]) - (gc[3 * j + c] - gp[3 * j + c]);
                    ss += d * d;
                }
                acc += std::sqrt(ss);
            }
        }
    Tensor out(1, 1);
    out.data[0] = acc;
    Node* o = make(std::move(out), pose->requires_grad);
    if (o->requires_grad) {
        o->backfn = [pose, target, o, batch, tokens, num_nodes]() {
            const double g = o->grad.data[0];
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t t = 1; t < tokens; ++t) {
                    const double* pc = pose->val().row(b * tokens + t);
                    const double* pp = pose->val().row(b * tokens + t - 1);
                    const double* gc = target->val().row(b * tokens + t);
                    const double* gp = target->val().row(b * tokens + t - 1);
                    double* dc = pose->grad.row(b * tokens + t);
                    double* dp = pose->grad.row(b * tokens + t - 1);
                    for (int j = 0; j < num_nodes; ++j) {
                        double diff[3];
                        double ss = 0.0;
                        for (int c = 0; c < 3; ++c) {
                            diff[c] =
                                (pc[3 * j + c] - pp[3 * j + c]) - (gc[3 * j + c] - gp[3 * j + c]);
                            ss += diff[c] * diff[c];
                        }
                        const double norm = std::sqrt(ss);
                        if (norm < 1e-12) continue;
                        for (int c = 0; c < 3; ++c) {
                            const double u = g * diff[c] / norm;
                            dc[3 * j + c] += u;
                            dp[3 * j + c] -= u;
                        }
                    }
                }
        };
    }
    return o;
}

Node* Graph::gravity_loss(Node* pose, int num_nodes) {
    if (pose->cols() != static_cast<int64_t>(num_nodes) * 3)
        throw InvalidInputError("gravity_loss: bad pose shape");
    const int64_t rows = pose->rows();
    const double inv = 1.0 / static_cast<double>(rows * num_nodes);
    double acc = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = pose->val().row(r);
        for (int j = 0; j < num_nodes; ++j) acc += std::max(0.0, -p[3 * j + 2]);
    }
    Tensor out(1, 1);
    out.data[0] = acc * inv;
    Node* o = make(std::move(out), pose->requires_grad);
    if (o->requires_grad) {
        o->backfn = [pose, o, rows, num_nodes, inv]() {
            const double g = o->grad.data[0] * inv;
            for (int64_t r = 0; r < rows; ++r) {
                const double* p = pose->val().row(r);
                double* gp = pose->grad.row(r);
                for (int j = 0; j < num_nodes; ++j)
                    if (p[3 * j + 2] < 0.0) gp[3 * j + 2] -= g;
            }
        };
    }
    return o;
}

Node* Graph::rigidity_loss(Node* pred, Node* target, const std::vector<std::pair<int, int>>& bones,
                           int num_nodes) {
    const int J = num_nodes;
    if (pred->cols() != static_cast<int64_t>(J) * J || target->cols() != pred->cols() ||
        target->rows() != pred->rows())
        throw InvalidInputError("rigidity_loss: shape mismatch");
    const int64_t rows = pred->rows();
    double acc = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const double* pp = pred->val().row(r);
        const double* tt = target->val().row(r);
        for (const auto& [i, j] : bones)
            acc += std::abs(pp[static_cast<int64_t>(i) * J + j] - tt[static_cast<int64_t>(i) * J + j]);
    }
    Tensor out(1, 1);
    out.data[0] = acc;
    Node* o = make(std::move(out), pred->requires_grad);
    if (o->requires_grad) {
        auto bones_copy = std::make_shared<std::vector<std::pair<int, int>>>(bones);
        o->backfn = [pred, target, o, rows, J, bones_copy]() {
            const double g = o->grad.data[0];
            for (int64_t r = 0; r < rows; ++r) {
                const double* pp = pred->val().row(r);
                const double* tt = target->val().row(r);
                double* gp = pred->grad.row(r);
                for (const auto& [i, j] : *bones_copy) {
                    const double d =
                        pp[static_cast<int64_t>(i) * J + j] - tt[static_cast<int64_t>(i) * J + j];
                    if (d > 0.0)
                        gp[static_cast<int64_t>(i) * J + j] += g;
                    else if (d < 0.0)
                        gp[static_cast<int64_t>(i) * J + j] -= g;
                }
            }
        };
    }
    return o;
}

Node* Graph::weighted_sum(const std::vector<std::pair<double, Node*>>& terms) {
    if (terms.empty()) throw InvalidInputError("weighted_sum: no terms");
    bool rg = false;
    double acc = 0.0;
    for (const auto& [w, node] : terms) {
        if (node->rows() != 1 || node->cols() != 1)
            throw InvalidInputError("weighted_sum: inputs must be scalars");
        acc += w * node->val().data[0];
        rg = rg || node->requires_grad;
    }
    Tensor out(1, 1);
    out.data[0] = acc;
    Node* o = make(std::move(out), rg);
    if (o->requires_grad) {
        auto copy = std::make_shared<std::vector<std::pair<double, Node*>>>(terms);
        o->backfn = [o, copy]() {
            for (auto& [w, node] : *copy)
                if (node->requires_grad) node->grad.data[0] += w * o->grad.data[0];
        };
    }
    return o;
}

void Graph::backward(Node* loss) {
    if (!grad_) throw InvalidInputError("backward: graph built with gradients disabled");
    if (loss->rows() != 1 || loss->cols() != 1)
        throw InvalidInputError("backward: loss must be scalar");
    if (!loss->requires_grad) return;
    loss->grad.data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (it->requires_grad && it->backfn) it->backfn();
    for (auto& [p, node] : param_leaves_) {
        if (!node->requires_grad) continue;
        Param* pp = node->bound;
        for (int64_t i = 0; i < node->grad.numel(); ++i)
            pp->grad.data[static_cast<size_t>(i)] += node->grad.data[static_cast<size_t>(i)];
    }
}

void AdamW::step(const std::vector<Param*>& params, double lr_now) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Param* p : params) {
        if (!p->trainable) continue;
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const size_t s = static_cast<size_t>(i);
            const double g = p->grad.data[s];
            p->adam_m.data[s] = beta1 * p->adam_m.data[s] + (1.0 - beta1) * g;
            p->adam_v.data[s] = beta2 * p->adam_v.data[s] + (1.0 - beta2) * g * g;
            const double mh = p->adam_m.data[s] / bc1;
            const double vh = p->adam_v.data[s] / bc2;
            p->value.data[s] -= lr_now * (mh / (std::sqrt(vh) + eps) + weight_decay * p->value.data[s]);
        }
    }
}

void AdamW::zero_grad(const std::vector<Param*>& params) {
    for (Param* p : params) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

}  // namespace wip::nn
