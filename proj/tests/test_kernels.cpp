#include "doctest.h"
#include "test_util.hpp"
#include "wip/kernels.hpp"

using namespace wip;
using nn::Tensor;

namespace {

struct ModeGuard {
    kernels::Mode saved;
    explicit ModeGuard(kernels::Mode m) : saved(kernels::mode()) { kernels::set_mode(m); }
    ~ModeGuard() { kernels::set_mode(saved); }
};

Tensor run_gemm(bool ta, bool tb, const Tensor& a, const Tensor& b, kernels::Mode mode) {
    ModeGuard guard(mode);
    const int64_t m = ta ? a.cols : a.rows;
    const int64_t k = ta ? a.rows : a.cols;
    const int64_t n = tb ? b.rows : b.cols;
    Tensor c(m, n);
    kernels::matmul(ta, tb, m, n, k, a.data.data(), b.data.data(), c.data.data(), false);
    return c;
}

}  // namespace

TEST_CASE("gemm: serial and parallel results are bitwise identical") {
    for (int variant = 0; variant < 4; ++variant) {
        const bool ta = variant & 1, tb = variant & 2;
        const Tensor a = test::random_tensor(ta ? 37 : 53, ta ? 53 : 37, 11 + variant);
        const Tensor b = test::random_tensor(tb ? 29 : 37, tb ? 37 : 29, 99 + variant);
        const Tensor cs = run_gemm(ta, tb, a, b, kernels::Mode::serial);
        const Tensor cp = run_gemm(ta, tb, a, b, kernels::Mode::parallel);
        REQUIRE(cs.data == cp.data);
    }
}

TEST_CASE("gemm: matches a naive triple loop") {
    const Tensor a = test::random_tensor(7, 5, 1);
    const Tensor b = test::random_tensor(5, 9, 2);
    const Tensor c = run_gemm(false, false, a, b, kernels::Mode::parallel);
    for (int64_t i = 0; i < 7; ++i)
        for (int64_t j = 0; j < 9; ++j) {
            double ref = 0.0;
            for (int64_t k = 0; k < 5; ++k) ref += a.at(i, k) * b.at(k, j);
            REQUIRE(c.at(i, j) == doctest::Approx(ref).epsilon(1e-13));
        }
}

TEST_CASE("gemm: transpose flags agree with explicit transposition") {
    const Tensor a = test::random_tensor(6, 4, 3);
    const Tensor b = test::random_tensor(6, 5, 4);
    // a^T * b
    const Tensor c = run_gemm(true, false, a, b, kernels::Mode::parallel);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 5; ++j) {
            double ref = 0.0;
            for (int64_t k = 0; k < 6; ++k) ref += a.at(k, i) * b.at(k, j);
            REQUIRE(c.at(i, j) == doctest::Approx(ref).epsilon(1e-13));
        }
}

TEST_CASE("softmax rows: valid-prefix masking and normalization") {
    const int64_t rows = 8, cols = 8;
    const Tensor x = test::random_tensor(rows, cols, 77, 3.0);
    std::vector<int64_t> valid(rows);
    for (int64_t r = 0; r < rows; ++r) valid[static_cast<size_t>(r)] = r + 1;

    Tensor ys(rows, cols), yp(rows, cols);
    {
        ModeGuard g(kernels::Mode::serial);
        kernels::softmax_rows(x.data.data(), ys.data.data(), rows, cols, valid.data());
    }
    {
        ModeGuard g(kernels::Mode::parallel);
        kernels::softmax_rows(x.data.data(), yp.data.data(), rows, cols, valid.data());
    }
    REQUIRE(ys.data == yp.data);
    for (int64_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            if (c > r) REQUIRE(ys.at(r, c) == 0.0);
            sum += ys.at(r, c);
        }
        REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer norm rows: serial/parallel identical, rows normalized") {
    const int64_t rows = 16, cols = 24;
    const Tensor x = test::random_tensor(rows, cols, 5);
    Tensor gamma(1, cols), beta(1, cols);
    std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
    Tensor ys(rows, cols), yp(rows, cols), mean(rows, 1), istd(rows, 1);
    {
        ModeGuard g(kernels::Mode::serial);
        kernels::layer_norm_rows(x.data.data(), gamma.data.data(), beta.data.data(), ys.data.data(),
                                 mean.data.data(), istd.data.data(), rows, cols, 1e-5);
    }
    {
        ModeGuard g(kernels::Mode::parallel);
        kernels::layer_norm_rows(x.data.data(), gamma.data.data(), beta.data.data(), yp.data.data(),
                                 mean.data.data(), istd.data.data(), rows, cols, 1e-5);
    }
    REQUIRE(ys.data == yp.data);
    for (int64_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (int64_t c = 0; c < cols; ++c) mu += ys.at(r, c);
        REQUIRE(std::abs(mu / static_cast<double>(cols)) < 1e-12);
    }
}
