#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mqarch/model.hpp"
#include "mqarch/moments.hpp"

namespace mqarch {

enum class CalibStep { Self1D, CrossLinQuad, CrossCovariance, Leverage };

std::string to_string(CalibStep s);

/// One unknown column of a block system.
struct UnknownRef {
    std::string kernel;  // "phi", "K", "phi_cross", "k_cross", "leverage"
    int target = 0;
    int source = 0;  // -1 when not applicable
    int lag1 = 0;
    int lag2 = 0;  // 0 for single-lag kernels
};

struct YWBlockSystem {
    Eigen::MatrixXd design;
    Eigen::VectorXd rhs;
    std::vector<UnknownRef> unknown_layout;
    CalibStep step = CalibStep::Self1D;
};

// ---------------------------------------------------------------------------
// Generic calibration-matrix builders. Vector arguments hold lag values
// starting at lag 1 (d[m-1] = D(m)) and must have length >= q-1.
// ---------------------------------------------------------------------------

/// q x q; Sigma on the diagonal, d_up filling the upper triangle by distance,
/// d_down the lower.
Eigen::MatrixXd build_A1(const std::vector<double>& d_up,
                         const std::vector<double>& d_down, double sigma, int q);

/// q rows x q(q-1)/2 columns; row tau holds 2 * Dp(k1-tau, k2-tau) at the
/// column of the pair (k1,k2), k1 < k2.
Eigen::MatrixXd build_A2(const LagPairTable& dp, int q);

/// build_A2 transposed and halved: rows are pairs (t1,t2), entry at column u
/// is Dp(t1-u, t2-u).
Eigen::MatrixXd build_A3(const LagPairTable& dp, int q);

/// q(q-1)/2 square; row (t1,t2), column (k1,k2) holds 2 * Dp(k2-t1, t2-t1)
/// when k1 == t1 and zero otherwise.
Eigen::MatrixXd build_A4(const LagPairTable& dp, int q);

/// q rows x q(q-1)/2 columns; row tau, column (k1,k2) holds D(k2-tau) when
/// k1 == tau and zero otherwise.
Eigen::MatrixXd build_A5(const std::vector<double>& d, int q);

// ---------------------------------------------------------------------------
// Stepwise calibration
// ---------------------------------------------------------------------------

struct SolveOptions {
    double ridge = 0.0;
    int q_cross = 30;  // unknown lags for phi_cross and leverage grids
    bool include_kx = false;
    bool leverage_quad_corrections = false;
    int max_iterations = 300;  // self/cross alternation in step 2
    double tol = 1e-13;
    double cond_limit = 1e12;
};

struct StepDiag {
    std::string step;
    double cond = 0.0;
    double residual = 0.0;
    int iterations = 0;
    double seconds = 0.0;
    std::vector<std::string> warnings;
    std::map<std::string, double> extra;
};

struct Calibration {
    ModelSpec2D model;
    bool self_done[2] = {false, false};
    bool cross_done = false;
    bool cross_cov_done = false;
    bool leverage_done = false;
    std::vector<StepDiag> diag;
};

/// Design matrix, reduced right-hand side and unknown layout of one step for
/// one target asset; prior kernels' contributions are already moved to the
/// right-hand side.
YWBlockSystem build_block_system(const CovarianceSuite& suite, CalibStep step,
                                 int target, const ModelSpec2D& prior,
                                 const SolveOptions& opts);

/// Executes one calibration step, updating the state in place. Self1D and
/// CrossLinQuad use the symmetrized-suite structures; CrossCovariance
/// additionally needs Dx and the cross product-moment tables. Step order is
/// enforced.
void assemble_and_solve(const CovarianceSuite& suite, CalibStep step,
                        Calibration& state, const SolveOptions& opts);

/// Step-2 body for a single target: solves the other-asset kernels of that
/// target with the self contribution on the right-hand side, alternating
/// with a self refresh until the pair is jointly consistent. The other
/// asset's own kernels are left untouched (the factor pipeline freezes them).
void solve_cross_for_target(const CovarianceSuite& suite, Calibration& state,
                            int target, const SolveOptions& opts);

/// Step 4: leverage grids from the original (un-mirrored) suite, removing
/// the contributions already explained by the calibrated even kernels.
void solve_leverage(const CovarianceSuite& suite_original, Calibration& state,
                    const SolveOptions& opts);

/// Baselines via the mean-volatility relation sigma_inf^2 = (I - N) sigma_bar^2.
void recover_baselines(const CovarianceSuite& suite, Calibration& state);

// ---------------------------------------------------------------------------
// Orchestration used by the CLI and the factor pipeline
// ---------------------------------------------------------------------------

struct CalibrationOptions {
    int q = 50;
    int q_cross = 30;
    double ridge = 0.0;
    bool include_kx = false;
    bool smoothing = false;
    bool mirror = true;
    std::vector<int> steps = {1, 2, 3, 4};
    bool leverage_quad_corrections = false;
    int workers = 0;
    double winsor_quantile = 0.0;
};

/// mirror -> moment suite -> steps 1..3 -> leverage on the original panel.
Calibration calibrate_panel(const BinnedPanel& panel, const CalibrationOptions& opts,
                            SmoothingReport* smoothing_report = nullptr);

void save_diagnostics_csv(const Calibration& calib, const std::string& path);
void save_suite_csv(const CovarianceSuite& suite, const std::string& path);

}  // namespace mqarch
