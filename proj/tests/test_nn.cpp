#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "wip/kernels.hpp"
#include "wip/nn.hpp"

using namespace wip;
using nn::Graph;
using nn::Node;
using nn::Param;
using nn::Tensor;

namespace {

Param make_param(const char* name, int64_t rows, int64_t cols, uint64_t seed, double span = 0.8) {
    Param p;
    p.name = name;
    p.value = test::random_tensor(rows, cols, seed, span);
    p.init_state();
    return p;
}

// Finite-difference check of a scalar graph expression built by `build`.
void check_op(std::vector<Param*> params, const std::function<Node*(Graph&)>& build,
              double tol = 1e-4) {
    auto eval = [&](bool with_grad) {
        Graph g(with_grad);
        g.set_dropout_seed(7);
        Node* loss = build(g);
        const double v = loss->val().data[0];
        if (with_grad) g.backward(loss);
        return v;
    };
    const auto res = test::grad_check(params, eval);
    CAPTURE(res.worst_param);
    REQUIRE(res.max_rel_err < tol);
}

}  // namespace

TEST_CASE("autograd: matmul gradients, all transpose combinations") {
    for (int variant = 0; variant < 4; ++variant) {
        const bool ta = variant & 1, tb = variant & 2;
        Param a = make_param("a", ta ? 5 : 4, ta ? 4 : 5, 10 + variant);
        Param b = make_param("b", tb ? 6 : 5, tb ? 5 : 6, 20 + variant);
        Tensor tgt = test::random_tensor(4, 6, 30 + variant);
        check_op({&a, &b}, [&](Graph& g) {
            Node* c = g.matmul(g.param(a), g.param(b), ta, tb);
            return g.mse(c, g.input(&tgt));
        });
    }
}

TEST_CASE("autograd: bias, layer norm, activations") {
    Param w = make_param("w", 6, 5, 1);
    Param bias = make_param("bias", 1, 5, 2);
    Param gamma = make_param("gamma", 1, 5, 3, 0.3);
    for (double& v : gamma.value.data) v += 1.0;
    Param beta = make_param("beta", 1, 5, 4, 0.3);
    Tensor tgt = test::random_tensor(6, 5, 5);

    check_op({&w, &bias, &gamma, &beta}, [&](Graph& g) {
        Node* x = g.add_bias(g.param(w), g.param(bias));
        x = g.layer_norm(x, g.param(gamma), g.param(beta));
        x = g.gelu(x);
        return g.mse(x, g.input(&tgt));
    });
}

TEST_CASE("autograd: sigmoid, softplus, mul, scale, sub") {
    Param a = make_param("a", 4, 7, 11);
    Param b = make_param("b", 4, 7, 12);
    Tensor tgt = test::random_tensor(4, 7, 13);
    check_op({&a, &b}, [&](Graph& g) {
        Node* x = g.mul(g.sigmoid(g.param(a)), g.softplus(g.param(b)));
        x = g.sub(g.scale(x, 1.7), g.param(b));
        return g.mse(x, g.input(&tgt));
    });
}

TEST_CASE("autograd: dropout is consistent between value and gradient") {
    Param a = make_param("a", 8, 10, 21);
    Tensor tgt = test::random_tensor(8, 10, 22);
    check_op({&a}, [&](Graph& g) {
        Node* x = g.dropout(g.param(a), 0.3, true);
        return g.mse(x, g.input(&tgt));
    });
}

TEST_CASE("autograd: causal multi-head attention gradients") {
    const int64_t B = 2, T = 5;
    const int heads = 2;
    Param q = make_param("q", B * T, 8, 31);
    Param k = make_param("k", B * T, 8, 32);
    Param v = make_param("v", B * T, 8, 33);
    Tensor tgt = test::random_tensor(B * T, 8, 34);
    for (bool causal : {true, false}) {
        check_op({&q, &k, &v}, [&](Graph& g) {
            Node* c = g.mha(g.param(q), g.param(k), g.param(v), B, T, heads, causal);
            return g.mse(c, g.input(&tgt));
        });
    }
}

TEST_CASE("autograd: mha causal mask never reads future keys or values") {
    const int64_t B = 1, T = 6;
    Tensor q = test::random_tensor(T, 8, 41);
    Tensor k = test::random_tensor(T, 8, 42);
    Tensor v = test::random_tensor(T, 8, 43);

    Graph g(false);
    Node* out = g.mha(g.input(&q), g.input(&k), g.input(&v), B, T, 2, true);
    Tensor k2 = k, v2 = v;
    for (int64_t c = 0; c < 8; ++c) {
        k2.at(T - 1, c) = 123.0;
        v2.at(T - 1, c) = -55.0;
    }
    Graph g2(false);
    Node* out2 = g2.mha(g2.input(&q), g2.input(&k2), g2.input(&v2), B, T, 2, true);
    for (int64_t t = 0; t < T - 1; ++t)
        for (int64_t c = 0; c < 8; ++c) REQUIRE(out->val().at(t, c) == out2->val().at(t, c));
}

TEST_CASE("autograd: measurement-node attention gradients") {
    const int64_t B = 2, T = 3;
    const int J = 4, c = 4, heads = 2;
    Param qm = make_param("qm", B, J * c, 51);
    Param km = make_param("km", B, J * c, 52);
    Param vh = make_param("vh", B * T, J * c, 53);
    Tensor tgt = test::random_tensor(B * T, J * c, 54);
    check_op({&qm, &km, &vh}, [&](Graph& g) {
        Node* out =
            g.measurement_node_attention(g.param(qm), g.param(km), g.param(vh), B, T, J, c, heads);
        return g.mse(out, g.input(&tgt));
    });
}

TEST_CASE("autograd: hidden-query node attention gradients") {
    const int64_t B = 2, T = 3;
    const int J = 4, c = 4, heads = 2;
    Param qh = make_param("qh", B * T, J * c, 61);
    Param km = make_param("km", B, J * c, 62);
    Param vm = make_param("vm", B, J * c, 63);
    Tensor tgt = test::random_tensor(B * T, J * c, 64);
    check_op({&qh, &km, &vm}, [&](Graph& g) {
        Node* out =
            g.hidden_query_node_attention(g.param(qh), g.param(km), g.param(vm), B, T, J, c, heads);
        return g.mse(out, g.input(&tgt));
    });
}

TEST_CASE("autograd: pwd_from_points values and gradients") {
    const int J = 5;
    Param pts = make_param("pts", 3, J * 3, 71);
    Tensor tgt = test::random_tensor(3, J * J, 72, 0.5);
    for (double& v : tgt.data) v = std::abs(v);
    check_op({&pts}, [&](Graph& g) {
        Node* d = g.pwd_from_points(g.param(pts), J);
        return g.mse(d, g.input(&tgt));
    });
    Graph g(false);
    Node* d = g.pwd_from_points(g.param(pts), J);
    PoseFrame f;
    for (int j = 0; j < J; ++j) {
        f.points.push_back(
            {pts.value.at(0, 3 * j), pts.value.at(0, 3 * j + 1), pts.value.at(0, 3 * j + 2)});
        f.node_labels.push_back("x");
    }
    const DistanceMatrix ref = pwd(f);
    for (int i = 0; i < J * J; ++i)
        REQUIRE(d->val().at(0, i) ==
                doctest::Approx(ref.values[static_cast<size_t>(i)]).epsilon(1e-13));
}

TEST_CASE("autograd: pwd head postprocess yields a clean symmetric matrix for any input") {
    const int J = 6;
    Param raw = make_param("raw", 2, J * (J - 1) / 2, 81, 3.0);
    Graph g(false);
    Node* d = g.pwd_head_postprocess(g.param(raw), J);
    for (int r = 0; r < 2; ++r)
        for (int i = 0; i < J; ++i)
            for (int j = 0; j < J; ++j) {
                const double v = d->val().at(r, i * J + j);
                REQUIRE(v == d->val().at(r, j * J + i));
                if (i == j)
                    REQUIRE(v == 0.0);
                else
                    REQUIRE(v >= 0.0);
            }
    Tensor tgt = test::random_tensor(2, J * J, 82, 0.5);
    check_op({&raw}, [&](Graph& g2) {
        Node* dd = g2.pwd_head_postprocess(g2.param(raw), J);
        return g2.mse(dd, g2.input(&tgt));
    });
}

TEST_CASE("autograd: loss op gradients away from non-smooth points") {
    const int J = 4;
    const int64_t B = 2, T = 3;
    Param pose = make_param("pose", B * T, J * 3, 91);
    Tensor tgt_pose = test::random_tensor(B * T, J * 3, 92);
    Tensor tgt_pwd = test::random_tensor(B * T, J * J, 93, 0.5);
    std::vector<std::pair<int, int>> bones = {{0, 1}, {1, 2}, {2, 3}};
    const std::array<Vec3, 3> anchors = {Vec3{0, 0, 0}, Vec3{1, 0, 0}, Vec3{0, 1, 0}};

    check_op({&pose}, [&](Graph& g) { return g.anchor_refs_loss(g.param(pose), J, anchors); });
    check_op({&pose},
             [&](Graph& g) { return g.velocity_loss(g.param(pose), g.input(&tgt_pose), B, T, J); });
    check_op({&pose}, [&](Graph& g) { return g.gravity_loss(g.param(pose), J); });
    check_op({&pose}, [&](Graph& g) {
        Node* d = g.pwd_from_points(g.param(pose), J);
        return g.rigidity_loss(d, g.input(&tgt_pwd), bones, J);
    });
    check_op({&pose}, [&](Graph& g) {
        Node* d = g.pwd_from_points(g.param(pose), J);
        Node* pd = g.mse(d, g.input(&tgt_pwd));
        Node* grav = g.gravity_loss(g.param(pose), J);
        return g.weighted_sum({{1.0, pd}, {0.05, grav}});
    });
}

TEST_CASE("autograd: reshape and position embedding gradients") {
    const int64_t B = 2, T = 3;
    Param x = make_param("x", B * T, 6, 101);
    Param pos = make_param("pos", T + 1, 6, 102);
    Tensor tgt = test::random_tensor(B * T, 6, 103);
    check_op({&x, &pos}, [&](Graph& g) {
        Node* y = g.add_positions(g.param(x), g.param(pos), B, T);
        y = g.reshape(y, B * T * 2, 3);
        y = g.reshape(y, B * T, 6);
        return g.mse(y, g.input(&tgt));
    });
    Param m = make_param("m", B, 6, 104);
    Tensor tgt2 = test::random_tensor(B, 6, 105);
    check_op({&m, &pos}, [&](Graph& g) {
        Node* y = g.add_position_row(g.param(m), g.param(pos), T);
        return g.mse(y, g.input(&tgt2));
    });
}

TEST_CASE("autograd: graphs are bitwise deterministic across kernel modes") {
    Param a = make_param("a", 33, 17, 111);
    Param b = make_param("b", 17, 29, 112);
    Tensor tgt = test::random_tensor(33, 29, 113);
    auto run = [&](kernels::Mode m) {
        kernels::set_mode(m);
        std::fill(a.grad.data.begin(), a.grad.data.end(), 0.0);
        std::fill(b.grad.data.begin(), b.grad.data.end(), 0.0);
        Graph g(true);
        Node* c = g.matmul(g.param(a), g.param(b), false, false);
        Node* l = g.mse(c, g.input(&tgt));
        g.backward(l);
        return std::make_pair(l->val().data[0], a.grad.data);
    };
    const auto serial = run(kernels::Mode::serial);
    const auto parallel = run(kernels::Mode::parallel);
    kernels::set_mode(kernels::Mode::parallel);
    REQUIRE(serial.first == parallel.first);
    REQUIRE(serial.second == parallel.second);
}

TEST_CASE("adamw: decoupled decay shrinks weights with zero gradient") {
    Param p = make_param("p", 2, 2, 121);
    std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
    const double before = p.value.data[0];
    nn::AdamW opt;
    opt.weight_decay = 0.5;
    opt.step({&p}, 0.1);
    REQUIRE(p.value.data[0] == doctest::Approx(before * (1.0 - 0.1 * 0.5)));
}
