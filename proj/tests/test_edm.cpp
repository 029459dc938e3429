#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "wip/edm.hpp"

using namespace wip;

TEST_CASE("pwd: unit right triangle") {
    PoseFrame f;
    f.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    f.node_labels = {"a", "b", "c"};
    const DistanceMatrix d = pwd(f);
    const double s2 = std::sqrt(2.0);
    REQUIRE(d.at(0, 0) == 0.0);
    REQUIRE(d.at(0, 1) == doctest::Approx(1.0));
    REQUIRE(d.at(0, 2) == doctest::Approx(1.0));
    REQUIRE(d.at(1, 2) == doctest::Approx(s2));
    REQUIRE(d.at(2, 1) == d.at(1, 2));
}

TEST_CASE("pwd: single point gives a 1x1 zero matrix") {
    PoseFrame f;
    f.points = {{3, 4, 5}};
    f.node_labels = {"a"};
    const DistanceMatrix d = pwd(f);
    REQUIRE(d.n == 1);
    REQUIRE(d.values[0] == 0.0);
}

TEST_CASE("pwd: non-finite coordinates rejected") {
    PoseFrame f;
    f.points = {{0, 0, 0}, {std::nan(""), 0, 0}};
    f.node_labels = {"a", "b"};
    REQUIRE_THROWS_AS(pwd(f), InvalidInputError);
}

TEST_CASE("pwd: centered Gram spectrum of a random 24-point frame has exactly 3 positive eigenvalues") {
    const PoseFrame f = test::random_frame(24, 42);
    const DistanceMatrix d = pwd(f);

    // independent double-centering oracle: (-1/2) Jc (D.*D) Jc
    const EigenReport rep = eigen_report(d);
    int positive = 0;
    double max_mag = 0.0;
    for (double lam : rep.eigenvalues_by_magnitude) max_mag = std::max(max_mag, std::abs(lam));
    for (double lam : rep.eigenvalues_by_value)
        if (lam > 1e-9 * max_mag) ++positive;
    REQUIRE(positive == 3);
    for (size_t i = 3; i < rep.eigenvalues_by_magnitude.size(); ++i)
        REQUIRE(std::abs(rep.eigenvalues_by_magnitude[i]) < 1e-9 * max_mag);
    REQUIRE(gram_rank(d) == 3);
}

TEST_CASE("pwd: translation and rotation invariance") {
    const PoseFrame f = test::random_frame(12, 7);
    const double a = 0.83;
    PoseFrame g = f;
    for (auto& p : g.points) {
        const double x = p[0] * std::cos(a) - p[1] * std::sin(a);
        const double y = p[0] * std::sin(a) + p[1] * std::cos(a);
        p = {x + 1.5, y - 2.0, p[2] + 0.25};
    }
    const DistanceMatrix da = pwd(f), db = pwd(g);
    for (size_t i = 0; i < da.values.size(); ++i)
        REQUIRE(std::abs(da.values[i] - db.values[i]) < 1e-12);
}

TEST_CASE("corrupt: sigma=0, window=1 is the identity") {
    std::vector<DistanceMatrix> seq;
    for (int t = 0; t < 5; ++t) seq.push_back(pwd(test::random_frame(6, 100 + t)));
    const auto out = corrupt(seq, NoiseConfig{0.0, 1, 9});
    for (size_t t = 0; t < seq.size(); ++t) {
        REQUIRE(out[t].is_measured);
        REQUIRE(out[t].values == seq[t].values);
    }
}

TEST_CASE("corrupt: sigma=0 averaging of a constant sequence is the identity") {
    const DistanceMatrix d = pwd(test::random_frame(5, 3));
    std::vector<DistanceMatrix> seq(20, d);
    const auto out = corrupt(seq, NoiseConfig{0.0, 5, 9});
    for (const auto& m : out)
        for (size_t i = 0; i < m.values.size(); ++i)
            REQUIRE(m.values[i] == doctest::Approx(d.values[i]).epsilon(1e-15));
}

TEST_CASE("corrupt: window larger than sequence rejected") {
    std::vector<DistanceMatrix> seq(3, DistanceMatrix(4));
    REQUIRE_THROWS_AS(corrupt(seq, NoiseConfig{0.1, 5, 0}), InvalidInputError);
}

TEST_CASE("corrupt: per-entry variance of the averaged noise is sigma^2/w") {
    // constant 2x2 sequence with unit off-diagonal
    DistanceMatrix base(2);
    base.at(0, 1) = base.at(1, 0) = 1.0;
    const int frames = 10000 + 4;
    std::vector<DistanceMatrix> seq(static_cast<size_t>(frames), base);
    const NoiseConfig cfg{0.15, 5, 2024};
    const auto out = corrupt(seq, cfg);

    double sum = 0.0, sum2 = 0.0;
    int64_t count = 0;
    for (int t = 2; t < frames - 2; ++t) {  // full windows only
        const double v = out[static_cast<size_t>(t)].at(0, 1);
        sum += v;
        sum2 += v * v;
        ++count;
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sum2 / static_cast<double>(count) - mean * mean;
    const double expected = cfg.sigma * cfg.sigma / static_cast<double>(cfg.window);  // 0.0045
    REQUIRE(var == doctest::Approx(expected).epsilon(0.05));
    // symmetric draws: both triangle entries identical
    REQUIRE(out[100].at(0, 1) == out[100].at(1, 0));
    REQUIRE(out[100].at(0, 0) == 0.0);
}

TEST_CASE("corrupt: boundary frames use truncated renormalized windows") {
    DistanceMatrix base(2);
    base.at(0, 1) = base.at(1, 0) = 1.0;
    std::vector<DistanceMatrix> seq(9, base);
    const auto out = corrupt(seq, NoiseConfig{0.0, 5, 1});
    REQUIRE(out.front().at(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
    REQUIRE(out.back().at(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("classical_mds: exact embedding of a planar unit square") {
    PoseFrame square;
    square.points = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    square.node_labels = {"a", "b", "c", "d"};
    const DistanceMatrix d = pwd(square);
    const PoseFrame emb = classical_mds(d, 3);
    const DistanceMatrix d2 = pwd(emb);
    for (size_t i = 0; i < d.values.size(); ++i)
        REQUIRE(std::abs(d.values[i] - d2.values[i]) < 1e-9);
}

TEST_CASE("classical_mds: 1x1 matrix maps to the origin") {
    const PoseFrame emb = classical_mds(DistanceMatrix(1), 3);
    REQUIRE(emb.size() == 1);
    REQUIRE(emb.points[0][0] == 0.0);
}

TEST_CASE("classical_mds: dim bound honored") {
    const DistanceMatrix d = pwd(test::random_frame(4, 8));
    REQUIRE_THROWS_AS(classical_mds(d, 4), InvalidInputError);
}

TEST_CASE("classical_mds: round trip through pwd is near exact for a 9-point frame") {
    const PoseFrame f = test::random_frame(9, 55);
    const DistanceMatrix d = pwd(f);
    const PoseFrame emb = classical_mds(d, 3);
    const DistanceMatrix d2 = pwd(emb);
    double frob = 0.0;
    for (size_t i = 0; i < d.values.size(); ++i) {
        const double e = d.values[i] - d2.values[i];
        frob += e * e;
    }
    REQUIRE(std::sqrt(frob) < 1e-8);
}

TEST_CASE("classical_mds then procrustes recovers the frame up to rigid motion") {
    const PoseFrame f = test::random_frame(10, 99);
    const PoseFrame emb = classical_mds(pwd(f), 3);
    const ProcrustesResult res = procrustes_align(emb, f, false, true);
    REQUIRE(res.residual < 1e-8);
}

TEST_CASE("procrustes: identity when target equals source") {
    const PoseFrame f = test::random_frame(6, 11);
    const ProcrustesResult res = procrustes_align(f, f, false, false);
    REQUIRE(res.residual < 1e-10);
    REQUIRE(res.transform.scale == doctest::Approx(1.0));
    REQUIRE(res.transform.rotation[0] == doctest::Approx(1.0));
    REQUIRE(res.transform.rotation[4] == doctest::Approx(1.0));
}

TEST_CASE("procrustes: recovers a rigid 90-degree rotation plus translation") {
    const PoseFrame f = test::random_frame(7, 12);
    PoseFrame g = f;
    for (auto& p : g.points) p = {-p[1] + 1.0, p[0] + 2.0, p[2] + 3.0};
    const ProcrustesResult res = procrustes_align(f, g, false, false);
    REQUIRE(res.residual < 1e-10);
    // rotation about z by 90 degrees
    REQUIRE(res.transform.rotation[1] == doctest::Approx(-1.0));
    REQUIRE(res.transform.rotation[3] == doctest::Approx(1.0));
}

TEST_CASE("procrustes: mirrored cloud needs reflection") {
    const PoseFrame f = test::random_frame(6, 13);
    PoseFrame mirror = f;
    for (auto& p : mirror.points) p[0] = -p[0];
    const ProcrustesResult rigid = procrustes_align(f, mirror, false, false);
    REQUIRE(rigid.residual > 1e-3);
    const ProcrustesResult refl = procrustes_align(f, mirror, false, true);
    REQUIRE(refl.residual < 1e-10);
}

TEST_CASE("procrustes: collinear points rejected with rank") {
    PoseFrame line;
    for (int i = 0; i < 5; ++i) {
        line.points.push_back({static_cast<double>(i), 0, 0});
        line.node_labels.push_back("p");
    }
    try {
        procrustes_align(line, line, false, false);
        REQUIRE(false);
    } catch (const DegenerateGeometryError& e) {
        REQUIRE(e.rank() == 1);
    }
}

TEST_CASE("procrustes: scale recovery") {
    const PoseFrame f = test::random_frame(8, 21);
    PoseFrame g = f;
    for (auto& p : g.points)
        for (auto& c : p) c *= 2.5;
    const ProcrustesResult res = procrustes_align(f, g, true, false);
    REQUIRE(res.transform.scale == doctest::Approx(2.5));
    REQUIRE(res.residual < 1e-10);
}

TEST_CASE("permute: identity leaves the matrix unchanged") {
    const DistanceMatrix d = pwd(test::random_frame(5, 31));
    const DistanceMatrix p = permute(d, Permutation::identity(5));
    REQUIRE(p.values == d.values);
}

TEST_CASE("permute: swapping rows 0 and 1 of the unit triangle") {
    PoseFrame f;
    f.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    f.node_labels = {"a", "b", "c"};
    const DistanceMatrix d = pwd(f);
    Permutation swap{{1, 0, 2}};
    const DistanceMatrix p = permute(d, swap);
    REQUIRE(p.at(0, 1) == d.at(1, 0));
    REQUIRE(p.at(0, 2) == d.at(1, 2));
    REQUIRE(p.at(1, 2) == d.at(0, 2));
    // involution
    const DistanceMatrix back = permute(p, swap.inverse());
    REQUIRE(back.values == d.values);
}

TEST_CASE("permute: spectrum and TI score are invariant") {
    const DistanceMatrix d = pwd(test::random_frame(8, 67));
    std::mt19937_64 rng(5);
    Permutation p = Permutation::identity(8);
    std::shuffle(p.mapping.begin(), p.mapping.end(), rng);
    const DistanceMatrix dp = permute(d, p);
    const EigenReport ra = eigen_report(d), rb = eigen_report(dp);
    for (size_t i = 0; i < ra.eigenvalues_by_value.size(); ++i)
        REQUIRE(ra.eigenvalues_by_value[i] ==
                doctest::Approx(rb.eigenvalues_by_value[i]).epsilon(1e-9));
    REQUIRE(ra.ti_score == rb.ti_score);
}

TEST_CASE("permute: size mismatch rejected") {
    const DistanceMatrix d = pwd(test::random_frame(5, 1));
    REQUIRE_THROWS_AS(permute(d, Permutation::identity(4)), InvalidInputError);
}

TEST_CASE("eigen_report: clean pwd of a 3D frame has CEV(3)=1 and TIS=1") {
    const DistanceMatrix d = pwd(test::random_frame(14, 123));
    const EigenReport rep = eigen_report(d);
    REQUIRE(std::abs(rep.cev_at(3) - 1.0) < 1e-9);
    REQUIRE(rep.ti_score == 1.0);
}

TEST_CASE("eigen_report: constructed triangle-inequality violation lowers TIS") {
    // 3 nodes on a line with an inflated long edge
    DistanceMatrix d(3);
    d.at(0, 1) = d.at(1, 0) = 1.0;
    d.at(1, 2) = d.at(2, 1) = 1.0;
    d.at(0, 2) = d.at(2, 0) = 1.0 + 1.0 + 1.0;  // D01 + D12 + 1
    const EigenReport rep = eigen_report(d);
    REQUIRE(rep.ti_score < 1.0);
}

TEST_CASE("eigen_report: Gaussian noise degrades CEV(3) and TIS") {
    const DistanceMatrix clean = pwd(test::random_frame(9, 300, 0.8));
    std::vector<DistanceMatrix> seq(6, clean);
    const auto noisy = corrupt(seq, NoiseConfig{0.15, 1, 17});
    const EigenReport rep = eigen_report(noisy[3]);
    REQUIRE(rep.cev_at(3) < 1.0);
    REQUIRE(rep.ti_score < 1.0);
    REQUIRE(rep.cev_at(3) > 0.0);
}

TEST_CASE("eigen_report: both eigenvalue orderings exposed") {
    const DistanceMatrix d = pwd(test::random_frame(6, 400));
    const EigenReport rep = eigen_report(d);
    REQUIRE(rep.eigenvalues_by_value.size() == 6);
    REQUIRE(rep.eigenvalues_by_magnitude.size() == 6);
    for (size_t i = 1; i < 6; ++i) {
        REQUIRE(rep.eigenvalues_by_value[i - 1] >= rep.eigenvalues_by_value[i]);
        REQUIRE(std::abs(rep.eigenvalues_by_magnitude[i - 1]) >=
                std::abs(rep.eigenvalues_by_magnitude[i]));
    }
}
