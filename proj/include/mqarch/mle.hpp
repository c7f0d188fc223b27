#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mqarch/model.hpp"
#include "mqarch/simulate.hpp"

namespace mqarch {

/// Which parameters of the exponential family are optimized (the rest stay
/// frozen at their current value). Indexing matches PointProcessSpec.
struct ParamMask {
    bool lambda_inf[2] = {false, false};
    bool phi[2][2] = {{false, false}, {false, false}};      // n_H and beta
    bool zumbach[2][2] = {{false, false}, {false, false}};  // n_Z and omega

    static ParamMask linear_1d();
    static ParamMask zhawkes_1d();
    static ParamMask zhawkes_2d();
};

/// Exact event-time log likelihood: sum of ln lambda at events minus the
/// compensator, both in closed form via O(1) exponential state updates.
/// Handles 1 or 2 conditionally independent processes.
double loglik_exact(const PointProcessSpec& theta,
                    const std::vector<EventStream>& events);

/// Binned-proxy Poisson likelihood in the Stirling-normalized form; the
/// proxy intensity is sigma2/dt and the model intensity is built from the
/// observed proxy history with a reset at each day start.
double loglik_binned_proxy(const PointProcessSpec& theta, const BinnedPanel& panel,
                           double dt = 1.0);

/// Analytic gradient of loglik_binned_proxy in the log-transformed
/// coordinates of the masked parameters.
Eigen::VectorXd grad_binned_proxy(const PointProcessSpec& theta,
                                  const BinnedPanel& panel, const ParamMask& mask,
                                  double dt = 1.0);

struct MaximizeResult {
    PointProcessSpec theta;
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Quasi-Newton (BFGS) ascent in log coordinates; never returns a point less
/// likely than the initialization.
MaximizeResult maximize_proxy(const PointProcessSpec& init, const BinnedPanel& panel,
                              const ParamMask& mask, double dt = 1.0,
                              int max_iterations = 500, double grad_tol = 1e-6);

/// Same optimizer on the exact event-time likelihood (finite-difference
/// gradients in log coordinates).
MaximizeResult maximize_exact(const PointProcessSpec& init,
                              const std::vector<EventStream>& events,
                              const ParamMask& mask, int max_iterations = 500,
                              double grad_tol = 1e-6);

/// Exponential-form fit of calibrated grids, used to warm start the
/// likelihood refinement: n_H beta e^{-beta tau} to the time diagonal net of
/// the rank-one square, sqrt(2 n_Z omega) e^{-omega tau} to the rank-one
/// vector.
PointProcessSpec warm_start_from_grids(const ModelSpec2D& model, double dt = 1.0);

void save_theta_csv(const PointProcessSpec& theta, const MaximizeResult& diag,
                    const std::string& path);

}  // namespace mqarch
