#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wip/errors.hpp"

namespace wip {

using Vec3 = std::array<double, 3>;

// Ordered 3D point set of one timestamp: body joints first, then any anchors.
struct PoseFrame {
    std::vector<Vec3> points;
    std::vector<std::string> node_labels;

    int size() const { return static_cast<int>(points.size()); }
    bool finite() const;
};

// Symmetric nonnegative inter-node distance matrix. `is_measured` marks raw
// (possibly noisy) data; clean matrices have an exactly zero diagonal and no
// negative entries.
struct DistanceMatrix {
    int n = 0;
    std::vector<double> values;  // row-major n x n
    bool is_measured = false;

    DistanceMatrix() = default;
    explicit DistanceMatrix(int size, bool measured = false)
        : n(size), values(static_cast<size_t>(size) * size, 0.0), is_measured(measured) {}

    double& at(int i, int j) { return values[static_cast<size_t>(i) * n + j]; }
    double at(int i, int j) const { return values[static_cast<size_t>(i) * n + j]; }

    // Noisy entries can dip below zero; model-side ingest clamps them here.
    DistanceMatrix clamped_nonnegative() const;
};

struct NoiseConfig {
    double sigma = 0.15;  // std-dev of the additive Gaussian, distance units
    int window = 5;       // moving-average width w (odd)
    uint64_t seed = 0;

    void validate() const;
};

struct Permutation {
    std::vector<int> mapping;  // image of each index; bijective

    int size() const { return static_cast<int>(mapping.size()); }
    bool is_bijection() const;
    Permutation inverse() const;
    static Permutation identity(int n);
};

// Spectral diagnostics of one distance matrix (Gram spectrum, CEV, TI score).
struct EigenReport {
    std::vector<double> eigenvalues_by_value;      // descending by signed value
    std::vector<double> eigenvalues_by_magnitude;  // descending by |lambda|
    std::array<double, 5> cev{};                   // CEV(1)..CEV(5), magnitude order
    double ti_score = 0.0;

    double cev_at(int k) const { return cev[static_cast<size_t>(k - 1)]; }
};

struct SimilarityTransform {
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    Vec3 translation{0, 0, 0};
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const;
    PoseFrame apply(const PoseFrame& f) const;
};

// D[i][j] = ||p_i - p_j||_2. Throws InvalidInputError on non-finite input.
DistanceMatrix pwd(const PoseFrame& frame);

// UWB-style corruption: per-frame additive symmetric Gaussian (one draw per
// unordered pair, zero diagonal) followed by a w-frame moving average.
// Boundary frames average over the truncated window, renormalized by the
// actual frame count. Negative entries are kept.
std::vector<DistanceMatrix> corrupt(const std::vector<DistanceMatrix>& sequence,
                                    const NoiseConfig& cfg);

// Classical MDS: double-center -0.5 * Jc * (D.*D) * Jc, embed with the top-dim
// eigenpairs (negative eigenvalues clamped to zero). Output is origin-centered.
PoseFrame classical_mds(const DistanceMatrix& d, int dim);

// Rank of the double-centered Gram matrix (eigenvalues above tol * max).
int gram_rank(const DistanceMatrix& d, double tol = 1e-9);

struct ProcrustesResult {
    PoseFrame aligned;
    SimilarityTransform transform;
    double residual = 0.0;  // sqrt of the summed squared distances
};

// Least-squares similarity transform mapping source onto target. With
// allow_reflection=false the rotation determinant is forced to +1.
ProcrustesResult procrustes_align(const PoseFrame& source, const PoseFrame& target,
                                  bool allow_scale, bool allow_reflection);

// D'[i][j] = D[pi(i)][pi(j)]
DistanceMatrix permute(const DistanceMatrix& d, const Permutation& p);

EigenReport eigen_report(const DistanceMatrix& d);

}  // namespace wip
