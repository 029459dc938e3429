#include "wip/edm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace wip {

bool PoseFrame::finite() const {
    for (const auto& p : points)
        for (double c : p)
            if (!std::isfinite(c)) return false;
    return true;
}

DistanceMatrix DistanceMatrix::clamped_nonnegative() const {
    DistanceMatrix out = *this;
    for (double& v : out.values) v = std::max(v, 0.0);
    return out;
}

void NoiseConfig::validate() const {
    if (sigma < 0.0) throw InvalidInputError("NoiseConfig: sigma must be >= 0");
    if (window < 1 || window % 2 == 0)
        throw InvalidInputError("NoiseConfig: window must be odd and >= 1");
}

bool Permutation::is_bijection() const {
    std::vector<bool> seen(mapping.size(), false);
    for (int v : mapping) {
        if (v < 0 || v >= size() || seen[static_cast<size_t>(v)]) return false;
        seen[static_cast<size_t>(v)] = true;
    }
    return true;
}

Permutation Permutation::inverse() const {
    Permutation inv;
    inv.mapping.resize(mapping.size());
    for (int i = 0; i < size(); ++i) inv.mapping[static_cast<size_t>(mapping[static_cast<size_t>(i)])] = i;
    return inv;
}

Permutation Permutation::identity(int n) {
    Permutation p;
    p.mapping.resize(static_cast<size_t>(n));
    std::iota(p.mapping.begin(), p.mapping.end(), 0);
    return p;
}

Vec3 SimilarityTransform::apply(const Vec3& p) const {
    Vec3 q;
    for (int r = 0; r < 3; ++r) {
        q[static_cast<size_t>(r)] =
            scale * (rotation[static_cast<size_t>(3 * r)] * p[0] +
                     rotation[static_cast<size_t>(3 * r + 1)] * p[1] +
                     rotation[static_cast<size_t>(3 * r + 2)] * p[2]) +
            translation[static_cast<size_t>(r)];
    }
    return q;
}

PoseFrame SimilarityTransform::apply(const PoseFrame& f) const {
    PoseFrame out = f;
    for (auto& p : out.points) p = apply(p);
    return out;
}

DistanceMatrix pwd(const PoseFrame& frame) {
    if (!frame.finite()) throw InvalidInputError("pwd: non-finite coordinates");
    const int n = frame.size();
    DistanceMatrix d(n, false);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const Vec3& a = frame.points[static_cast<size_t>(i)];
            const Vec3& b = frame.points[static_cast<size_t>(j)];
            const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
            const double v = std::sqrt(dx * dx + dy * dy + dz * dz);
            d.at(i, j) = v;
            d.at(j, i) = v;
        }
    }
    return d;
}

std::vector<DistanceMatrix> corrupt(const std::vector<DistanceMatrix>& sequence,
                                    const NoiseConfig& cfg) {
    cfg.validate();
    if (sequence.empty()) throw InvalidInputError("corrupt: empty sequence");
    if (static_cast<int>(sequence.size()) < cfg.window)
        throw InvalidInputError("corrupt: window larger than sequence");
    const int n = sequence.front().n;
    for (const auto& d : sequence)
        if (d.n != n) throw InvalidInputError("corrupt: matrices differ in size");

    const int frames = static_cast<int>(sequence.size());
    const int half = cfg.window / 2;

    // Per-frame raw measurements: one standard-normal draw per unordered pair,
    // scaled by sigma, so identical seeds stay coupled across sigma values.
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<DistanceMatrix> raw(sequence.begin(), sequence.end());
    for (int t = 0; t < frames; ++t) {
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const double eps = cfg.sigma * unit(rng);
                raw[static_cast<size_t>(t)].at(i, j) += eps;
                raw[static_cast<size_t>(t)].at(j, i) += eps;
            }
        }
    }

    std::vector<DistanceMatrix> out(static_cast<size_t>(frames), DistanceMatrix(n, true));
    for (int t = 0; t < frames; ++t) {
        const int lo = std::max(0, t - half);
        const int hi = std::min(frames - 1, t + half);
        DistanceMatrix& acc = out[static_cast<size_t>(t)];
        for (int s = lo; s <= hi; ++s)
            for (size_t e = 0; e < acc.values.size(); ++e)
                acc.values[e] += raw[static_cast<size_t>(s)].values[e];
        const double inv = 1.0 / static_cast<double>(hi - lo + 1);
        for (double& v : acc.values) v *= inv;
    }
    return out;
}

namespace {

Eigen::MatrixXd centered_gram(const DistanceMatrix& d) {
    const int n = d.n;
    Eigen::MatrixXd sq(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sq(i, j) = d.at(i, j) * d.at(i, j);
    Eigen::MatrixXd jc = Eigen::MatrixXd::Identity(n, n) -
                         Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    return -0.5 * jc * sq * jc;
}

}  // namespace

PoseFrame classical_mds(const DistanceMatrix& d, int dim) {
    const int n = d.n;
    if (n < 1) throw InvalidInputError("classical_mds: empty matrix");
    if (dim < 1 || (n > 1 && dim > n - 1) || (n == 1 && dim > 3))
        throw InvalidInputError("classical_mds: dim must be in [1, N-1]");

    PoseFrame out;
    out.points.assign(static_cast<size_t>(n), Vec3{0, 0, 0});
    if (n == 1) return out;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered_gram(d));
    const auto& evals = es.eigenvalues();    // ascending
    const auto& evecs = es.eigenvectors();
    const int use = std::min(dim, 3);
    for (int a = 0; a < use; ++a) {
        const int idx = n - 1 - a;  // a-th largest
        const double lam = std::max(evals(idx), 0.0);
        const double s = std::sqrt(lam);
        for (int i = 0; i < n; ++i)
            out.points[static_cast<size_t>(i)][static_cast<size_t>(a)] = s * evecs(i, idx);
    }
    // Double centering already centers the embedding; make it exact.
    Vec3 mean{0, 0, 0};
    for (const auto& p : out.points)
        for (int a = 0; a < 3; ++a) mean[static_cast<size_t>(a)] += p[static_cast<size_t>(a)];
    for (int a = 0; a < 3; ++a) mean[static_cast<size_t>(a)] /= static_cast<double>(n);
    for (auto& p : out.points)
        for (int a = 0; a < 3; ++a) p[static_cast<size_t>(a)] -= mean[static_cast<size_t>(a)];
    return out;
}

int gram_rank(const DistanceMatrix& d, double tol) {
    if (d.n <= 1) return 0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered_gram(d), Eigen::EigenvaluesOnly);
    const auto& evals = es.eigenvalues();
    double mx = 0.0;
    for (int i = 0; i < d.n; ++i) mx = std::max(mx, std::abs(evals(i)));
    if (mx == 0.0) return 0;
    int r = 0;
    for (int i = 0; i < d.n; ++i)
        if (evals(i) > tol * mx) ++r;
    return r;
}

ProcrustesResult procrustes_align(const PoseFrame& source, const PoseFrame& target,
                                  bool allow_scale, bool allow_reflection) {
    const int n = source.size();
    if (n != target.size()) throw InvalidInputError("procrustes_align: point counts differ");
    if (n < 3) throw DegenerateGeometryError("procrustes_align: need at least 3 points", n > 1 ? 1 : 0);

    Eigen::MatrixXd x(n, 3), y(n, 3);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) {
            x(i, a) = source.points[static_cast<size_t>(i)][static_cast<size_t>(a)];
            y(i, a) = target.points[static_cast<size_t>(i)][static_cast<size_t>(a)];
        }
    const Eigen::RowVector3d xm = x.colwise().mean();
    const Eigen::RowVector3d ym = y.colwise().mean();
    x.rowwise() -= xm;
    y.rowwise() -= ym;

    // A unique rotation needs a planar (rank >= 2) spread on both sides.
    auto spread_rank = [](const Eigen::MatrixXd& m) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        const double smax = svd.singularValues()(0);
        if (smax < 1e-12) return 0;
        int r = 0;
        for (int i = 0; i < 3; ++i)
            if (svd.singularValues()(i) > 1e-9 * smax) ++r;
        return r;
    };
    const int rank = std::min(spread_rank(x), spread_rank(y));
    if (rank < 2)
        throw DegenerateGeometryError("procrustes_align: degenerate point set", rank);

    const Eigen::Matrix3d cov = x.transpose() * y;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    Eigen::Vector3d sing = svd.singularValues();
    Eigen::Matrix3d r = v * u.transpose();
    double trace_ds = sing.sum();
    if (!allow_reflection && r.determinant() < 0.0) {
        Eigen::Vector3d flip(1, 1, -1);
        r = v * flip.asDiagonal() * u.transpose();
        trace_ds = sing(0) + sing(1) - sing(2);
    }

    double scale = 1.0;
    if (allow_scale) {
        const double sx = x.squaredNorm();
        if (sx < 1e-300) throw DegenerateGeometryError("procrustes_align: zero spread", 0);
        scale = trace_ds / sx;
    }

    ProcrustesResult res;
    Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(res.transform.rotation.data()) = r;
    const Eigen::Vector3d t = ym.transpose() - scale * r * xm.transpose();
    res.transform.translation = {t(0), t(1), t(2)};
    res.transform.scale = scale;
    res.aligned = res.transform.apply(source);

    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const Vec3& a = res.aligned.points[static_cast<size_t>(i)];
        const Vec3& b = target.points[static_cast<size_t>(i)];
        for (int c = 0; c < 3; ++c) {
            const double dd = a[static_cast<size_t>(c)] - b[static_cast<size_t>(c)];
            ss += dd * dd;
        }
    }
    res.residual = std::sqrt(ss);
    return res;
}

DistanceMatrix permute(const DistanceMatrix& d, const Permutation& p) {
    if (p.size() != d.n) throw InvalidInputError("permute: size mismatch");
    if (!p.is_bijection()) throw InvalidInputError("permute: mapping is not a bijection");
    DistanceMatrix out(d.n, d.is_measured);
    for (int i = 0; i < d.n; ++i)
        for (int j = 0; j < d.n; ++j)
            out.at(i, j) = d.at(p.mapping[static_cast<size_t>(i)], p.mapping[static_cast<size_t>(j)]);
    return out;
}

EigenReport eigen_report(const DistanceMatrix& d) {
    const int n = d.n;
    EigenReport rep;
    if (n >= 1) {
        if (n == 1) {
            rep.eigenvalues_by_value = {0.0};
            rep.eigenvalues_by_magnitude = {0.0};
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered_gram(d), Eigen::EigenvaluesOnly);
            rep.eigenvalues_by_value.resize(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) rep.eigenvalues_by_value[static_cast<size_t>(i)] = es.eigenvalues()(n - 1 - i);
            rep.eigenvalues_by_magnitude = rep.eigenvalues_by_value;
            std::sort(rep.eigenvalues_by_magnitude.begin(), rep.eigenvalues_by_magnitude.end(),
                      [](double a, double b) { return std::abs(a) > std::abs(b); });
        }
    }

    double total = 0.0;
    for (double lam : rep.eigenvalues_by_magnitude) total += std::abs(lam);
    double cum = 0.0;
    for (int k = 1; k <= 5; ++k) {
        if (k <= n) cum += std::abs(rep.eigenvalues_by_magnitude[static_cast<size_t>(k - 1)]);
        rep.cev[static_cast<size_t>(k - 1)] = total > 0.0 ? cum / total : 1.0;
    }

    // Ordered triples (i, j, k), all distinct, tested as D_ij + D_jk >= D_ik.
    if (n < 3) {
        rep.ti_score = 1.0;
    } else {
        int64_t good = 0;
        int64_t count = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                for (int k = 0; k < n; ++k) {
                    if (k == i || k == j) continue;
                    ++count;
                    if (d.at(i, j) + d.at(j, k) - d.at(i, k) >= 0.0) ++good;
                }
            }
        rep.ti_score = static_cast<double>(good) / static_cast<double>(count);
    }
    return rep;
}

}  // namespace wip
