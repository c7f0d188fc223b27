#include "mqarch/mle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mqarch/csv.hpp"
#include "mqarch/moments.hpp"

namespace mqarch {

ParamMask ParamMask::linear_1d() {
    ParamMask m;
    m.lambda_inf[0] = true;
    m.phi[0][0] = true;
    return m;
}

ParamMask ParamMask::zhawkes_1d() {
    ParamMask m = linear_1d();
    m.zumbach[0][0] = true;
    return m;
}

ParamMask ParamMask::zhawkes_2d() {
    ParamMask m;
    for (int i = 0; i < 2; ++i) {
        m.lambda_inf[i] = true;
        for (int j = 0; j < 2; ++j) {
            m.phi[i][j] = true;
            m.zumbach[i][j] = true;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// exact event-time likelihood
// ---------------------------------------------------------------------------

double loglik_exact(const PointProcessSpec& theta,
                    const std::vector<EventStream>& events) {
    const int n = theta.n_assets;
    if (static_cast<int>(events.size()) < n)
        throw Error("loglik_exact: missing event streams");
    double horizon = 0.0;
    for (int a = 0; a < n; ++a) horizon = std::max(horizon, events[a].horizon);

    // merged timeline
    struct Ev {
        double t;
        int asset;
        int mark;
    };
    std::vector<Ev> merged;
    for (int a = 0; a < n; ++a) {
        const auto& s = events[a];
        for (size_t e = 0; e < s.times.size(); ++e) {
            if (e > 0 && s.times[e] < s.times[e - 1])
                throw Error("loglik_exact: event times must be sorted");
            merged.push_back({s.times[e], a, s.marks[e]});
        }
    }
    std::stable_sort(merged.begin(), merged.end(),
                     [](const Ev& x, const Ev& y) { return x.t < y.t; });

    double H[2][2] = {{0, 0}, {0, 0}};
    double Z[2][2] = {{0, 0}, {0, 0}};
    double lnl = 0.0;
    for (int i = 0; i < n; ++i)
        lnl -= theta.lambda_inf[static_cast<size_t>(i)] * horizon;

    double t_prev = 0.0;
    auto integrate_interval = [&](double dt) {
        if (dt <= 0.0) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double beta = theta.phi[i][j].rate;
                const double om = theta.zumbach[i][j].rate;
                lnl -= H[i][j] * (1.0 - std::exp(-beta * dt)) / beta;
                lnl -= Z[i][j] * Z[i][j] * (1.0 - std::exp(-2.0 * om * dt)) /
                       (2.0 * om);
            }
    };
    auto decay_to = [&](double t) {
        const double dt = t - t_prev;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                H[i][j] *= std::exp(-theta.phi[i][j].rate * dt);
                Z[i][j] *= std::exp(-theta.zumbach[i][j].rate * dt);
            }
        t_prev = t;
    };

    for (const auto& ev : merged) {
        integrate_interval(ev.t - t_prev);
        decay_to(ev.t);
        const int i = ev.asset;
        double lam = theta.lambda_inf[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j) lam += H[i][j] + Z[i][j] * Z[i][j];
        if (!(lam > 0.0))
            throw NonPositiveIntensityError("intensity not positive at an event");
        lnl += std::log(lam);
        for (int k = 0; k < n; ++k) {
            H[k][ev.asset] += theta.phi[k][ev.asset].norm * theta.phi[k][ev.asset].rate;
            Z[k][ev.asset] +=
                ev.mark * std::sqrt(2.0 * theta.zumbach[k][ev.asset].norm *
                                    theta.zumbach[k][ev.asset].rate);
        }
    }
    integrate_interval(horizon - t_prev);
    return lnl;
}

// ---------------------------------------------------------------------------
// binned proxy likelihood
// ---------------------------------------------------------------------------

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Sweeps the panel once; calls visit(bin_intensity, lambda_hat, states...)
/// per (asset, bin). Gradient states are maintained when grad != nullptr.
struct ProxySweep {
    const PointProcessSpec& theta;
    const BinnedPanel& panel;
    double dt;

    /// returns false when a model intensity is not positive
    template <typename Visit>
    bool run(Visit&& visit) const {
        const int n = theta.n_assets;
        for (const auto& day : panel.days) {
            double A[2][2] = {{0, 0}, {0, 0}};   // sum e^{-beta m} lamhat dt
            double DA[2][2] = {{0, 0}, {0, 0}};  // d A / d beta
            double T[2][2] = {{0, 0}, {0, 0}};   // sum e^{-omega m} dP
            double DT[2][2] = {{0, 0}, {0, 0}};  // d T / d omega
            for (int t = 0; t < day.bins(); ++t) {
                for (int j = 0; j < n; ++j) {
                    double lam = theta.lambda_inf[static_cast<size_t>(j)];
                    for (int i = 0; i < n; ++i) {
                        lam += theta.phi[j][i].norm * theta.phi[j][i].rate * A[j][i];
                        lam += 2.0 * theta.zumbach[j][i].norm *
                               theta.zumbach[j][i].rate * T[j][i] * T[j][i];
                    }
                    if (!(lam > 0.0)) return false;
                    const double lamhat =
                        day.s2[static_cast<size_t>(j)][static_cast<size_t>(t)] / dt;
                    visit(j, lam, lamhat, A, DA, T, DT);
                }
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i) {
                        const double eb = std::exp(-theta.phi[j][i].rate);
                        const double eo = std::exp(-theta.zumbach[j][i].rate);
                        const double x =
                            day.s2[static_cast<size_t>(i)][static_cast<size_t>(t)];
                        const double r =
                            day.r[static_cast<size_t>(i)][static_cast<size_t>(t)];
                        DA[j][i] = eb * (DA[j][i] - (A[j][i] + x));
                        A[j][i] = eb * (A[j][i] + x);
                        DT[j][i] = eo * (DT[j][i] - (T[j][i] + r));
                        T[j][i] = eo * (T[j][i] + r);
                    }
            }
        }
        return true;
    }
};

struct ParamIndex {
    enum Kind { LambdaInf, NH, Beta, NZ, Omega } kind;
    int i, j;
};

std::vector<ParamIndex> active_params(const ParamMask& mask, int n) {
    std::vector<ParamIndex> out;
    for (int i = 0; i < n; ++i)
        if (mask.lambda_inf[i]) out.push_back({ParamIndex::LambdaInf, i, 0});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (mask.phi[i][j]) {
                out.push_back({ParamIndex::NH, i, j});
                out.push_back({ParamIndex::Beta, i, j});
            }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (mask.zumbach[i][j]) {
                out.push_back({ParamIndex::NZ, i, j});
                out.push_back({ParamIndex::Omega, i, j});
            }
    return out;
}

double get_param(const PointProcessSpec& s, const ParamIndex& p) {
    switch (p.kind) {
        case ParamIndex::LambdaInf: return s.lambda_inf[static_cast<size_t>(p.i)];
        case ParamIndex::NH: return s.phi[p.i][p.j].norm;
        case ParamIndex::Beta: return s.phi[p.i][p.j].rate;
        case ParamIndex::NZ: return s.zumbach[p.i][p.j].norm;
        case ParamIndex::Omega: return s.zumbach[p.i][p.j].rate;
    }
    return 0.0;
}

void set_param(PointProcessSpec& s, const ParamIndex& p, double v) {
    switch (p.kind) {
        case ParamIndex::LambdaInf: s.lambda_inf[static_cast<size_t>(p.i)] = v; break;
        case ParamIndex::NH: s.phi[p.i][p.j].norm = v; break;
        case ParamIndex::Beta: s.phi[p.i][p.j].rate = v; break;
        case ParamIndex::NZ: s.zumbach[p.i][p.j].norm = v; break;
        case ParamIndex::Omega: s.zumbach[p.i][p.j].rate = v; break;
    }
}

}  // namespace

double loglik_binned_proxy(const PointProcessSpec& theta, const BinnedPanel& panel,
                           double dt) {
    const int n = theta.n_assets;
    if (panel.n_assets < n) throw Error("panel has fewer assets than theta");
    long double lnl = 0.0L;
    ProxySweep sweep{theta, panel, dt};
    const bool ok = sweep.run([&](int, double lam, double lamhat, auto&, auto&,
                                  auto&, auto&) {
        if (lamhat > 0.0)
            lnl += dt * (lamhat * (std::log(lam) - std::log(lamhat)) + lamhat - lam);
        else
            lnl += dt * (-lam);
    });
    if (!ok) return kNegInf;
    return static_cast<double>(lnl);
}

Eigen::VectorXd grad_binned_proxy(const PointProcessSpec& theta,
                                  const BinnedPanel& panel, const ParamMask& mask,
                                  double dt) {
    const int n = theta.n_assets;
    const auto params = active_params(mask, n);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<long>(params.size()));

    ProxySweep sweep{theta, panel, dt};
    const bool ok = sweep.run([&](int j, double lam, double lamhat, auto& A,
                                  auto& DA, auto& T, auto& DT) {
        const double w = dt * (lamhat / lam - 1.0);
        for (size_t p = 0; p < params.size(); ++p) {
            const auto& pi = params[p];
            double dlam = 0.0;
            switch (pi.kind) {
                case ParamIndex::LambdaInf:
                    if (pi.i == j) dlam = 1.0;
                    break;
                case ParamIndex::NH:
                    if (pi.i == j)
                        dlam = theta.phi[j][pi.j].rate * A[j][pi.j];
                    break;
                case ParamIndex::Beta:
                    if (pi.i == j)
                        dlam = theta.phi[j][pi.j].norm *
                               (A[j][pi.j] + theta.phi[j][pi.j].rate * DA[j][pi.j]);
                    break;
                case ParamIndex::NZ:
                    if (pi.i == j)
                        dlam = 2.0 * theta.zumbach[j][pi.j].rate * T[j][pi.j] *
                               T[j][pi.j];
                    break;
                case ParamIndex::Omega:
                    if (pi.i == j) {
                        const double tv = T[j][pi.j];
                        dlam = 2.0 * theta.zumbach[j][pi.j].norm *
                               (tv * tv + 2.0 * theta.zumbach[j][pi.j].rate * tv *
                                              DT[j][pi.j]);
                    }
                    break;
            }
            grad(static_cast<long>(p)) += w * dlam;
        }
    });
    if (!ok) throw NonPositiveIntensityError("model intensity not positive");
    // chain rule to log coordinates
    for (size_t p = 0; p < params.size(); ++p)
        grad(static_cast<long>(p)) *= get_param(theta, params[p]);
    return grad;
}

// ---------------------------------------------------------------------------
// BFGS in log coordinates
// ---------------------------------------------------------------------------

namespace {

MaximizeResult bfgs_maximize(
    const PointProcessSpec& init, const ParamMask& mask,
    const std::function<double(const PointProcessSpec&)>& loglik,
    const std::function<Eigen::VectorXd(const PointProcessSpec&)>& grad_log,
    int max_iterations, double grad_tol) {
    const auto params = active_params(mask, init.n_assets);
    const long np = static_cast<long>(params.size());

    auto unpack = [&](const Eigen::VectorXd& u) {
        PointProcessSpec s = init;
        for (long p = 0; p < np; ++p)
            set_param(s, params[static_cast<size_t>(p)], std::exp(u(p)));
        return s;
    };
    Eigen::VectorXd u(np);
    for (long p = 0; p < np; ++p) {
        const double v = get_param(init, params[static_cast<size_t>(p)]);
        if (!(v > 0.0)) throw Error("maximize requires strictly positive init");
        u(p) = std::log(v);
    }

    MaximizeResult best;
    best.theta = init;
    best.loglik = loglik(init);
    double f = best.loglik;
    if (!std::isfinite(f)) throw Error("initialization has non-finite likelihood");
    Eigen::VectorXd g = grad_log(unpack(u));
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(np, np);

    int it = 0;
    for (; it < max_iterations; ++it) {
        if (g.cwiseAbs().maxCoeff() < grad_tol) {
            best.converged = true;
            break;
        }
        Eigen::VectorXd dir = hinv * g;  // ascent
        if (dir.dot(g) <= 0.0) {
            hinv.setIdentity();
            dir = g;
        }
        double step = 1.0;
        const double slope = dir.dot(g);
        Eigen::VectorXd u_new;
        double f_new = kNegInf;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            u_new = u + step * dir;
            // keep log-params within a sane numeric window
            u_new = u_new.cwiseMax(-34.0).cwiseMin(12.0);
            f_new = loglik(unpack(u_new));
            if (std::isfinite(f_new) && f_new >= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        Eigen::VectorXd g_new = grad_log(unpack(u_new));
        Eigen::VectorXd s = u_new - u;
        Eigen::VectorXd y = g_new - g;  // gradient of ascent direction
        const double sy = -s.dot(y);    // curvature in minimization convention
        if (sy > 1e-12) {
            // BFGS update on the negated problem
            Eigen::VectorXd ym = -y;
            const double rho = 1.0 / s.dot(ym);
            Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(np, np);
            hinv = (eye - rho * s * ym.transpose()) * hinv *
                       (eye - rho * ym * s.transpose()) +
                   rho * s * s.transpose();
        }
        u = u_new;
        f = f_new;
        g = g_new;
        if (f > best.loglik) {
            best.loglik = f;
            best.theta = unpack(u);
        }
    }
    best.iterations = it;
    if (!best.converged && g.cwiseAbs().maxCoeff() < grad_tol) best.converged = true;
    return best;
}

}  // namespace

MaximizeResult maximize_proxy(const PointProcessSpec& init, const BinnedPanel& panel,
                              const ParamMask& mask, double dt, int max_iterations,
                              double grad_tol) {
    return bfgs_maximize(
        init, mask,
        [&](const PointProcessSpec& s) { return loglik_binned_proxy(s, panel, dt); },
        [&](const PointProcessSpec& s) { return grad_binned_proxy(s, panel, mask, dt); },
        max_iterations, grad_tol);
}

MaximizeResult maximize_exact(const PointProcessSpec& init,
                              const std::vector<EventStream>& events,
                              const ParamMask& mask, int max_iterations,
                              double grad_tol) {
    const auto params = active_params(mask, init.n_assets);
    auto fd_grad = [&, params](const PointProcessSpec& s) {
        Eigen::VectorXd g(static_cast<long>(params.size()));
        const double h = 1e-6;
        for (size_t p = 0; p < params.size(); ++p) {
            PointProcessSpec up = s, dn = s;
            const double v = get_param(s, params[p]);
            set_param(up, params[p], v * std::exp(h));
            set_param(dn, params[p], v * std::exp(-h));
            g(static_cast<long>(p)) =
                (loglik_exact(up, events) - loglik_exact(dn, events)) / (2.0 * h);
        }
        return g;
    };
    return bfgs_maximize(
        init, mask,
        [&](const PointProcessSpec& s) { return loglik_exact(s, events); }, fd_grad,
        max_iterations, grad_tol);
}

PointProcessSpec warm_start_from_grids(const ModelSpec2D& model, double dt) {
    const int n = model.n_assets;
    const int q = model.q();
    PointProcessSpec theta;
    theta.n_assets = n;
    for (int i = 0; i < n; ++i) {
        theta.lambda_inf[static_cast<size_t>(i)] =
            std::max(model.sigma_inf_sq[static_cast<size_t>(i)] / dt, 1e-8);
        for (int j = 0; j < n; ++j) {
            // zumbach part from the rank-one vector
            std::vector<double> kv(static_cast<size_t>(q));
            for (int tau = 1; tau <= q; ++tau)
                kv[static_cast<size_t>(tau - 1)] = model.quad[i][j].rank_one.at(tau);
            SmoothFit kf = fit_smooth(kv, SmoothFamily::Exp);
            const double omega = std::clamp(kf.beta, 1e-6, 1e2);
            const double nz =
                std::max(kf.amp * kf.amp / (2.0 * omega), 1e-8);
            theta.zumbach[i][j] = {nz, omega, KernelKind::Zumbach};
            // linear part from the diagonal net of the rank-one square
            std::vector<double> pv(static_cast<size_t>(q));
            for (int tau = 1; tau <= q; ++tau)
                pv[static_cast<size_t>(tau - 1)] =
                    model.quad[i][j].diag.at(tau) -
                    kf.eval(tau) * kf.eval(tau);
            SmoothFit pf = fit_smooth(pv, SmoothFamily::Exp);
            const double beta = std::clamp(pf.beta, 1e-6, 1e2);
            const double nh = std::max(pf.amp / beta, 1e-8);
            theta.phi[i][j] = {nh, beta, KernelKind::Linear};
        }
    }
    return theta;
}

void save_theta_csv(const PointProcessSpec& theta, const MaximizeResult& diag,
                    const std::string& path) {
    csv::Writer w(path, {"param", "target", "source", "value"});
    w.row({"n_assets", "", "", csv::fmt(theta.n_assets)});
    for (int i = 0; i < theta.n_assets; ++i) {
        w.row({"lambda_inf", csv::fmt(i + 1), "",
               csv::fmt(theta.lambda_inf[static_cast<size_t>(i)])});
        for (int j = 0; j < theta.n_assets; ++j) {
            w.row({"n_H", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(theta.phi[i][j].norm)});
            w.row({"beta", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(theta.phi[i][j].rate)});
            w.row({"n_Z", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(theta.zumbach[i][j].norm)});
            w.row({"omega", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(theta.zumbach[i][j].rate)});
        }
    }
    w.row({"loglik", "", "", csv::fmt(diag.loglik)});
    w.row({"iterations", "", "", csv::fmt(diag.iterations)});
    w.row({"converged", "", "", diag.converged ? "1" : "0"});
    w.close();
}

}  // namespace mqarch
