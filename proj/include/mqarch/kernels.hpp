#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mqarch/errors.hpp"

namespace mqarch {

enum class KernelKind { Linear, Zumbach, Leverage };

/// Parametric exponential kernel. Tabulation on the integer lag grid 1..q:
///   Linear   : norm * rate * exp(-rate * tau)
///   Zumbach  : sqrt(2 * norm * rate) * exp(-rate * tau)
///   Leverage : norm * exp(-rate * tau)   (amplitude may be signed)
struct ExponentialKernelParams {
    double norm = 0.0;
    double rate = 1.0;
    KernelKind kind = KernelKind::Linear;

    void validate() const;
    std::vector<double> tabulate(int q) const;

    /// Discrete l1 norm of the tabulated kernel summed to q lags
    /// (q < 0 means the closed-form geometric limit q -> infinity).
    double discrete_norm(int q = -1) const;
};

/// Non-parametric kernel values on the lag grid tau = 1..q.
/// values[0] corresponds to tau = 1.
struct KernelGrid {
    std::vector<double> values;

    KernelGrid() = default;
    explicit KernelGrid(int q) : values(static_cast<size_t>(q), 0.0) {}
    explicit KernelGrid(std::vector<double> v) : values(std::move(v)) {}

    int q() const { return static_cast<int>(values.size()); }
    double at(int tau) const { return values.at(static_cast<size_t>(tau - 1)); }
    double& at(int tau) { return values.at(static_cast<size_t>(tau - 1)); }
    bool finite() const;
};

/// Two-time quadratic kernel split into its time diagonal and the
/// off-diagonal part, carried either as a rank-one vector k (so that
/// K(t1,t2) = k(t1) k(t2) for t1 != t2) or as a raw upper-triangular table.
struct QuadraticKernelGrid {
    KernelGrid diag;
    KernelGrid rank_one;
    /// Raw estimated upper triangle, row-major pairs (t1,t2), t1 < t2.
    std::optional<std::vector<double>> full_upper;

    QuadraticKernelGrid() = default;
    explicit QuadraticKernelGrid(int q) : diag(q), rank_one(q) {}

    int q() const { return diag.q(); }

    /// Off-diagonal value K(t1,t2), t1 != t2. Prefers full_upper when present.
    double off_diag(int t1, int t2) const;

    /// Symmetric q x q reconstruction (diagonal + off-diagonal part).
    Eigen::MatrixXd reconstruct() const;
};

int upper_tri_size(int q);
/// Row-major index of the pair (t1,t2), 1 <= t1 < t2 <= q, in the ordering
/// (1,2),(1,3),...,(1,q),(2,3),...
int upper_tri_index(int t1, int t2, int q);

/// Signed sum over the lag grid, Sum_{tau=1..q} values[tau].
double kernel_l1_norm(const KernelGrid& kernel);
/// Sum of absolute values (for reporting alongside the signed sum).
double kernel_abs_norm(const KernelGrid& kernel);

/// Largest absolute eigenvalue of a 2x2 matrix.
double spectral_radius(const Eigen::Matrix2d& norms);

}  // namespace mqarch
