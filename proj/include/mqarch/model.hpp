#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "mqarch/kernels.hpp"

namespace mqarch {

/// Complete bivariate quadratic ARCH kernel set on a lag grid of size q.
/// Index convention: quad[i][j] drives asset i's variance from asset j's
/// returns (superscript = target, subscript = source in the usual notation).
struct ModelSpec2D {
    int n_assets = 2;
    std::array<std::array<QuadraticKernelGrid, 2>, 2> quad;
    std::array<std::array<KernelGrid, 2>, 2> leverage;
    std::array<KernelGrid, 2> phi_cross;
    /// Full q x q cross two-time kernel with zero diagonal; row lags the
    /// target's own return, column lags the other asset's return.
    std::array<std::optional<Eigen::MatrixXd>, 2> k_cross;
    std::array<double, 2> sigma_inf_sq{0.0, 0.0};
    double equal_time_cov = 0.0;

    ModelSpec2D() = default;
    explicit ModelSpec2D(int q, int assets = 2);

    int q() const { return quad[0][0].q(); }

    const KernelGrid& phi(int i, int j) const { return quad[i][j].diag; }
    KernelGrid& phi(int i, int j) { return quad[i][j].diag; }

    /// Matrix of the linear-feedback norms n^i_j = Sum_tau phi^i_j(tau).
    Eigen::Matrix2d phi_norms() const;

    void validate() const;
};

/// Exponential-kernel point process specification (up to 2 assets).
struct PointProcessSpec {
    int n_assets = 1;
    std::array<double, 2> lambda_inf{0.0, 0.0};
    std::array<std::array<ExponentialKernelParams, 2>, 2> phi;       // Linear
    std::array<std::array<ExponentialKernelParams, 2>, 2> zumbach;   // Zumbach
    std::array<std::array<ExponentialKernelParams, 2>, 2> leverage;  // Leverage

    PointProcessSpec();
    Eigen::Matrix2d feedback_norms() const;
    void validate() const;
};

/// Mean squared volatility (I - N)^{-1} sigma_inf_sq. Throws NonStationary
/// when the feedback-norm matrix has spectral radius >= 1.
Eigen::Vector2d mean_squared_vol(const Eigen::Matrix2d& phi_norms,
                                 const Eigen::Vector2d& sigma_inf_sq);

/// One-step variance of the recursion given the past returns of both assets.
/// history[i] holds asset i's returns with the most recent value last;
/// at least q past values are required.
double evaluate_sigma2(const ModelSpec2D& model,
                       std::span<const double> history_1,
                       std::span<const double> history_2,
                       int target);

/// Flat CSV round trip: columns (kernel_name,target,source,lag1,lag2,value).
void save_model_csv(const ModelSpec2D& model, const std::string& path);
ModelSpec2D load_model_csv(const std::string& path);

void save_point_process_csv(const PointProcessSpec& spec, const std::string& path);
PointProcessSpec load_point_process_csv(const std::string& path);

}  // namespace mqarch
