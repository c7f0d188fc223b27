#pragma once

#include <array>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "mqarch/panel.hpp"

namespace mqarch {

enum class TwoPointKind { C, Cr, V, Vr };
enum class ThreePointKind { D, Dp, Dx };

/// Product-moment table E((r_a r_b)_t r_{k,t-s1} r_{l,t-s2}) on the signed
/// lag square s1, s2 in [-(q-1), q-1].
struct LagPairTable {
    int q = 0;
    Eigen::MatrixXd m;

    LagPairTable() = default;
    explicit LagPairTable(int q_)
        : q(q_), m(Eigen::MatrixXd::Zero(2 * q_ - 1, 2 * q_ - 1)) {}
    double at(int s1, int s2) const { return m(s1 + q - 1, s2 + q - 1); }
    double& at(int s1, int s2) { return m(s1 + q - 1, s2 + q - 1); }
};

/// Every covariance structure needed by the calibration steps, estimated on
/// one panel (or filled synthetically by tests).
struct CovarianceSuite {
    int q = 0;
    int n_assets = 1;

    /// Two-point structures, index = lag, 0..q inclusive (lag-0 anchors kept).
    std::array<std::array<std::vector<double>, 2>, 2> C, Cr, V, Vr;
    /// Three-point (sigma^2, r, r) with the volatility centered; q x q.
    std::array<std::array<Eigen::MatrixXd, 2>, 2> D;
    /// Cross structure per target, uncentered volatility; q x q, row lags the
    /// target's own return.
    std::array<Eigen::MatrixXd, 2> Dx;
    /// Product-moment tables keyed by (a,b,k,l), a<=b and k<=l canonical.
    std::map<std::array<int, 4>, LagPairTable> Dp;
    /// E((r_a r_b)_t r_{c,t-m}), m = 0..q, keyed by (a,b,c), a<=b canonical.
    std::map<std::array<int, 3>, std::vector<double>> Vrp;

    std::array<double, 2> mean_sigma2{0.0, 0.0};
    std::array<double, 2> mean_r2{0.0, 0.0};
    double mean_cross = 0.0;  // E(r_1 r_2)

    /// Canonical lookup handling the (a,b) product symmetry and the
    /// (k,l)(s1,s2) argument-swap identity.
    double dp(int a, int b, int k, int l, int s1, int s2) const;
    bool has_dp(int a, int b, int k, int l) const;
    const std::vector<double>& vrp(int a, int b, int c) const;
};

struct SuiteRequest {
    int q = 50;
    bool d_matrices = true;    // D tables and the step-1/2 Dp combos
    bool dx = false;           // Dx + the step-3 Dp combos
    bool with_leverage = false;  // V, Vr, Vrp
    int workers = 0;           // 0 = hardware concurrency
    double winsor_quantile = 0.0;  // two-sided clip on returns; 0 = off
};

/// Sample moments averaged within days then across days.
std::vector<double> estimate_two_point(const BinnedPanel& panel, TwoPointKind kind,
                                       int i, int j, int max_lag);

/// D: q x q symmetric with centered volatility. Dx: indices = {target}; full
/// q x q with uncentered volatility. Dp: indices = {a,b,k,l}; returns the
/// (2q-1) x (2q-1) signed-lag table.
Eigen::MatrixXd estimate_three_point(const BinnedPanel& panel, ThreePointKind kind,
                                     const std::vector<int>& indices, int max_lag);

CovarianceSuite estimate_suite(const BinnedPanel& panel, const SuiteRequest& req);

enum class SmoothFamily { PowerLawExp, Exp };

/// PowerLawExp: amp * exp(-beta tau) * (1 + gamma tau)^(-alpha)
/// Exp:         amp * exp(-beta tau)
struct SmoothFit {
    SmoothFamily family = SmoothFamily::Exp;
    double amp = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double sse = 0.0;

    double eval(double tau) const;
};

/// Deterministic multi-start Levenberg-Marquardt over the family parameters;
/// curve[m] holds the value at lag m+1.
SmoothFit fit_smooth(const std::vector<double>& curve, SmoothFamily family);

struct RankOneResult {
    Eigen::VectorXd k;
    double eig_ratio = 0.0;  // leading / |second| of the zero-diagonal input
};

/// Rank-one representation of a symmetric off-diagonal table: leading
/// eigenpair of the zero-diagonal matrix refined on the off-diagonal mask,
/// sign fixed so sum(k) >= 0.
RankOneResult rank_one_approx(const Eigen::MatrixXd& offdiag);

struct SmoothingReport {
    // (structure, i, j) -> fit
    std::vector<std::tuple<std::string, int, int, SmoothFit>> fits;
};

/// Paper-default smoothing: C and diag(Dx) by PowerLawExp, the off-diagonal
/// of D by a rank-one vector with an exponential-smoothed profile, V by Exp.
/// Builder-side structures (Cr, Dp, Vr) are left raw.
CovarianceSuite smooth_suite(const CovarianceSuite& suite, SmoothingReport* report);

}  // namespace mqarch
