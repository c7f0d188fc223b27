#include "mqarch/moments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>

#include "mqarch/errors.hpp"

namespace mqarch {

namespace {

struct DayView {
    const double* r[2] = {nullptr, nullptr};
    const double* s2[2] = {nullptr, nullptr};
    int bins = 0;
};

std::vector<DayView> views_of(const BinnedPanel& panel) {
    std::vector<DayView> out;
    out.reserve(panel.days.size());
    for (const auto& d : panel.days) {
        DayView v;
        v.bins = d.bins();
        for (int a = 0; a < panel.n_assets; ++a) {
            v.r[a] = d.r[static_cast<size_t>(a)].data();
            v.s2[a] = d.s2[static_cast<size_t>(a)].data();
        }
        out.push_back(v);
    }
    return out;
}

/// Mean of x over the panel, day means averaged across days.
double panel_mean(const std::vector<DayView>& days,
                  const std::function<double(const DayView&, int)>& x) {
    long double acc = 0.0L;
    long used = 0;
    for (const auto& d : days) {
        if (d.bins == 0) continue;
        long double s = 0.0L;
        for (int t = 0; t < d.bins; ++t) s += x(d, t);
        acc += s / d.bins;
        ++used;
    }
    if (used == 0) throw InsufficientBinsError("empty panel");
    return static_cast<double>(acc / used);
}

}  // namespace

double CovarianceSuite::dp(int a, int b, int k, int l, int s1, int s2) const {
    if (a > b) std::swap(a, b);
    if (k > l) {
        std::swap(k, l);
        std::swap(s1, s2);
    }
    auto it = Dp.find({a, b, k, l});
    if (it == Dp.end()) throw Error("missing Dp table");
    return it->second.at(s1, s2);
}

bool CovarianceSuite::has_dp(int a, int b, int k, int l) const {
    if (a > b) std::swap(a, b);
    if (k > l) std::swap(k, l);
    return Dp.count({a, b, k, l}) > 0;
}

const std::vector<double>& CovarianceSuite::vrp(int a, int b, int c) const {
    if (a > b) std::swap(a, b);
    auto it = Vrp.find({a, b, c});
    if (it == Vrp.end()) throw Error("missing Vrp vector");
    return it->second;
}

std::vector<double> estimate_two_point(const BinnedPanel& panel, TwoPointKind kind,
                                       int i, int j, int max_lag) {
    panel.check_rectangular();
    auto days = views_of(panel);
    for (const auto& d : days)
        if (d.bins <= max_lag)
            throw InsufficientBinsError("max_lag not below bins per day");

    std::vector<double> out(static_cast<size_t>(max_lag) + 1, 0.0);
    const bool x_is_sigma = (kind == TwoPointKind::C || kind == TwoPointKind::V);
    const bool y_is_square = (kind == TwoPointKind::C || kind == TwoPointKind::Cr);

    for (int tau = 0; tau <= max_lag; ++tau) {
        long double acc = 0.0L;
        long used = 0;
        for (const auto& d : days) {
            const double* x = x_is_sigma ? d.s2[i] : d.r[i];
            const double* y = d.r[j];
            long double s = 0.0L;
            for (int t = tau; t < d.bins; ++t) {
                const double xv = x_is_sigma ? x[t] : x[t] * x[t];
                const double yv = y_is_square ? y[t - tau] * y[t - tau] : y[t - tau];
                s += xv * yv;
            }
            acc += s / (d.bins - tau);
            ++used;
        }
        out[static_cast<size_t>(tau)] = static_cast<double>(acc / used);
    }

    if (kind == TwoPointKind::C || kind == TwoPointKind::Cr) {
        const double mx = panel_mean(days, [&](const DayView& d, int t) {
            return x_is_sigma ? d.s2[i][t] : d.r[i][t] * d.r[i][t];
        });
        const double my = panel_mean(days, [&](const DayView& d, int t) {
            return d.r[j][t] * d.r[j][t];
        });
        for (double& v : out) v -= mx * my;
    }
    return out;
}

namespace {

/// Day sums S(s1,s2) = sum_t u[t] x[t-s1] y[t-s2] over all valid t, for
/// s1 in [s1_lo, s1_hi], s2 in [s2_lo, s2_hi]. Blocked over t so that the
/// working set stays cache resident; when symmetric, only s2 >= s1 is filled.
void triple_products(const double* u, const double* x, const double* y, int bins,
                     int s1_lo, int s1_hi, int s2_lo, int s2_hi, bool symmetric,
                     Eigen::MatrixXd& sums) {
    const int n1 = s1_hi - s1_lo + 1;
    const int block = 12288;
    std::vector<double> w(static_cast<size_t>(block));
    for (int b0 = 0; b0 < bins; b0 += block) {
        const int b1 = std::min(bins, b0 + block);
        for (int s1 = s1_lo; s1 <= s1_hi; ++s1) {
            const int lo1 = std::max(b0, std::max(0, s1));
            const int hi1 = std::min(b1 - 1, bins - 1 + std::min(0, s1));
            if (lo1 > hi1) continue;
            for (int t = lo1; t <= hi1; ++t)
                w[static_cast<size_t>(t - lo1)] = u[t] * x[t - s1];
            const int s2_from = symmetric ? std::max(s1, s2_lo) : s2_lo;
            for (int s2 = s2_from; s2 <= s2_hi; ++s2) {
                const int lo = std::max(lo1, std::max(0, s2));
                const int hi = std::min(hi1, bins - 1 + std::min(0, s2));
                if (lo > hi) continue;
                const double* wp = w.data() + (lo - lo1);
                const double* yp = y + lo - s2;
                const int len = hi - lo + 1;
                // four independent accumulators keep the reduction off the
                // add-latency chain; summation order stays fixed
                double s0 = 0.0, s1v = 0.0, s2v = 0.0, s3 = 0.0;
                int t = 0;
                for (; t + 4 <= len; t += 4) {
                    s0 += wp[t] * yp[t];
                    s1v += wp[t + 1] * yp[t + 1];
                    s2v += wp[t + 2] * yp[t + 2];
                    s3 += wp[t + 3] * yp[t + 3];
                }
                double s = (s0 + s1v) + (s2v + s3);
                for (; t < len; ++t) s += wp[t] * yp[t];
                sums(s1 - s1_lo, s2 - s2_lo) += s;
            }
        }
    }
    if (symmetric)
        for (int s1 = s1_lo; s1 <= s1_hi; ++s1)
            for (int s2 = s2_lo; s2 < s1; ++s2)
                sums(s1 - s1_lo, s2 - s2_lo) = sums(s2 - s1_lo, s1 - s1_lo);
    (void)n1;
}

long valid_count(int bins, int s1, int s2) {
    const int lo = std::max(0, std::max(s1, s2));
    const int hi = bins - 1 + std::min(0, std::min(s1, s2));
    return hi >= lo ? hi - lo + 1 : 0;
}

/// E((x_t - center) r_{j,t-t1} r_{k,t-t2}) on the positive lag grid 1..q.
Eigen::MatrixXd three_point_grid(const std::vector<DayView>& days, int q,
                                 const std::function<const double*(const DayView&)>& xsrc,
                                 double center, int j, int k, bool symmetric) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q, q);
    Eigen::MatrixXd sums(q, q);
    std::vector<double> u;
    const bool sym = symmetric && j == k;
    for (const auto& d : days) {
        if (d.bins <= q) throw InsufficientBinsError("q not below bins per day");
        const double* x = xsrc(d);
        u.assign(static_cast<size_t>(d.bins), 0.0);
        for (int t = 0; t < d.bins; ++t) u[static_cast<size_t>(t)] = x[t] - center;
        sums.setZero();
        triple_products(u.data(), d.r[j], d.r[k], d.bins, 1, q, 1, q, sym, sums);
        for (int t1 = 1; t1 <= q; ++t1)
            for (int t2 = 1; t2 <= q; ++t2)
                out(t1 - 1, t2 - 1) +=
                    sums(t1 - 1, t2 - 1) /
                    static_cast<double>(valid_count(d.bins, t1, t2));
    }
    out /= static_cast<double>(days.size());
    if (symmetric) out = ((out + out.transpose()) / 2.0).eval();
    return out;
}

/// Product-moment table over the signed lag square.
LagPairTable dp_table(const std::vector<DayView>& days, int q, int a, int b,
                      int k, int l) {
    LagPairTable out(q);
    Eigen::MatrixXd sums(2 * q - 1, 2 * q - 1);
    std::vector<double> u;
    for (const auto& d : days) {
        const int B = d.bins;
        if (B < 2 * q - 1) throw InsufficientBinsError("day too short for the Dp table");
        u.assign(static_cast<size_t>(B), 0.0);
        for (int t = 0; t < B; ++t) u[static_cast<size_t>(t)] = d.r[a][t] * d.r[b][t];
        sums.setZero();
        triple_products(u.data(), d.r[k], d.r[l], B, -(q - 1), q - 1, -(q - 1),
                        q - 1, false, sums);
        for (int s1 = -(q - 1); s1 <= q - 1; ++s1)
            for (int s2 = -(q - 1); s2 <= q - 1; ++s2)
                out.at(s1, s2) += sums(s1 + q - 1, s2 + q - 1) /
                                  static_cast<double>(valid_count(B, s1, s2));
    }
    if (!days.empty()) out.m /= static_cast<double>(days.size());
    return out;
}

std::vector<double> vrp_vector(const std::vector<DayView>& days, int q, int a,
                               int b, int c) {
    std::vector<double> out(static_cast<size_t>(q) + 1, 0.0);
    for (int m = 0; m <= q; ++m) {
        long double acc = 0.0L;
        long used = 0;
        for (const auto& d : days) {
            if (d.bins <= m) throw InsufficientBinsError("q not below bins per day");
            long double s = 0.0L;
            for (int t = m; t < d.bins; ++t)
                s += d.r[a][t] * d.r[b][t] * d.r[c][t - m];
            acc += s / (d.bins - m);
            ++used;
        }
        out[static_cast<size_t>(m)] = static_cast<double>(acc / used);
    }
    return out;
}

void run_jobs(std::vector<std::function<void()>>& jobs, int workers) {
    if (workers <= 0)
        workers = static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
    if (workers == 1) {
        for (auto& j : jobs) j();
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                jobs[i]();
            }
        });
    for (auto& t : pool) t.join();
}

BinnedPanel winsorize(const BinnedPanel& panel, double quantile) {
    std::vector<double> all;
    for (const auto& d : panel.days)
        for (const auto& series : d.r) all.insert(all.end(), series.begin(), series.end());
    std::sort(all.begin(), all.end());
    const size_t n = all.size();
    const size_t lo_i = static_cast<size_t>(quantile * static_cast<double>(n - 1));
    const size_t hi_i = n - 1 - lo_i;
    const double lo = all[lo_i], hi = all[hi_i];
    BinnedPanel out = panel;
    for (auto& d : out.days)
        for (auto& series : d.r)
            for (double& v : series) v = std::clamp(v, lo, hi);
    return out;
}

}  // namespace

Eigen::MatrixXd estimate_three_point(const BinnedPanel& panel, ThreePointKind kind,
                                     const std::vector<int>& indices, int max_lag) {
    panel.check_rectangular();
    auto days = views_of(panel);
    switch (kind) {
        case ThreePointKind::D: {
            if (indices.size() != 2) throw Error("D needs indices {i, j}");
            const int i = indices[0], j = indices[1];
            const double center = panel_mean(
                days, [&](const DayView& d, int t) { return d.s2[i][t]; });
            return three_point_grid(
                days, max_lag, [&](const DayView& d) { return d.s2[i]; }, center,
                j, j, /*symmetric=*/true);
        }
        case ThreePointKind::Dx: {
            if (indices.size() != 1) throw Error("Dx needs indices {target}");
            const int j = indices[0];
            if (panel.n_assets != 2) throw Error("Dx needs a 2-asset panel");
            return three_point_grid(
                days, max_lag, [&](const DayView& d) { return d.s2[j]; }, 0.0, j,
                1 - j, /*symmetric=*/false);
        }
        case ThreePointKind::Dp: {
            if (indices.size() != 4) throw Error("Dp needs indices {a,b,k,l}");
            return dp_table(days, max_lag, indices[0], indices[1], indices[2],
                            indices[3])
                .m;
        }
    }
    throw Error("unknown three-point kind");
}

CovarianceSuite estimate_suite(const BinnedPanel& panel, const SuiteRequest& req) {
    panel.check_rectangular();
    const BinnedPanel* src = &panel;
    BinnedPanel clipped;
    if (req.winsor_quantile > 0.0) {
        clipped = winsorize(panel, req.winsor_quantile);
        src = &clipped;
    }
    const BinnedPanel& p = *src;
    auto days = views_of(p);
    const int n = p.n_assets;
    const int q = req.q;

    CovarianceSuite suite;
    suite.q = q;
    suite.n_assets = n;

    for (int i = 0; i < n; ++i) {
        suite.mean_sigma2[static_cast<size_t>(i)] = panel_mean(
            days, [&](const DayView& d, int t) { return d.s2[i][t]; });
        suite.mean_r2[static_cast<size_t>(i)] = panel_mean(
            days, [&](const DayView& d, int t) { return d.r[i][t] * d.r[i][t]; });
    }
    if (n == 2)
        suite.mean_cross = panel_mean(
            days, [&](const DayView& d, int t) { return d.r[0][t] * d.r[1][t]; });

    std::vector<std::function<void()>> jobs;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            jobs.push_back([&, i, j] {
                suite.C[i][j] = estimate_two_point(p, TwoPointKind::C, i, j, q);
            });
            jobs.push_back([&, i, j] {
                suite.Cr[i][j] = estimate_two_point(p, TwoPointKind::Cr, i, j, q);
            });
            if (req.with_leverage) {
                jobs.push_back([&, i, j] {
                    suite.V[i][j] = estimate_two_point(p, TwoPointKind::V, i, j, q);
                });
                jobs.push_back([&, i, j] {
                    suite.Vr[i][j] = estimate_two_point(p, TwoPointKind::Vr, i, j, q);
                });
            }
            if (req.d_matrices)
                jobs.push_back([&, i, j] {
                    suite.D[i][j] =
                        estimate_three_point(p, ThreePointKind::D, {i, j}, q);
                });
        }

    std::vector<std::array<int, 4>> combos;
    if (req.d_matrices) {
        for (int i = 0; i < n; ++i)
            for (int l = 0; l < n; ++l) combos.push_back({i, i, l, l});
        if (n == 2) combos.push_back({0, 1, 0, 1});
    }
    if (req.dx && n == 2) {
        combos.push_back({0, 0, 0, 1});
        combos.push_back({1, 1, 0, 1});
        combos.push_back({0, 1, 0, 0});
        combos.push_back({0, 1, 1, 1});
        for (int j = 0; j < 2; ++j)
            jobs.push_back([&, j] {
                suite.Dx[j] = estimate_three_point(p, ThreePointKind::Dx, {j}, q);
            });
    }
    // normalize and dedupe
    for (auto& c : combos) {
        if (c[0] > c[1]) std::swap(c[0], c[1]);
        if (c[2] > c[3]) std::swap(c[2], c[3]);
    }
    std::sort(combos.begin(), combos.end());
    combos.erase(std::unique(combos.begin(), combos.end()), combos.end());
    for (const auto& c : combos) {
        suite.Dp.emplace(c, LagPairTable());
        jobs.push_back([&, c] { suite.Dp[c] = dp_table(days, q, c[0], c[1], c[2], c[3]); });
    }

    if (req.with_leverage) {
        std::vector<std::array<int, 3>> vcombos;
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b)
                for (int c = 0; c < n; ++c) vcombos.push_back({a, b, c});
        for (const auto& c : vcombos) {
            suite.Vrp.emplace(c, std::vector<double>());
            jobs.push_back([&, c] { suite.Vrp[c] = vrp_vector(days, q, c[0], c[1], c[2]); });
        }
    }

    run_jobs(jobs, req.workers);
    return suite;
}

// ---------------------------------------------------------------------------
// smoothing fits
// ---------------------------------------------------------------------------

double SmoothFit::eval(double tau) const {
    if (family == SmoothFamily::Exp) return amp * std::exp(-beta * tau);
    return amp * std::exp(-beta * tau) * std::pow(1.0 + gamma * tau, -alpha);
}

namespace {

constexpr double kRateLo = 1e-8, kRateHi = 1e2;
constexpr double kAlphaLo = 0.0, kAlphaHi = 5.0;

struct LmProblem {
    SmoothFamily family;
    const std::vector<double>& y;

    int n_params() const { return family == SmoothFamily::Exp ? 2 : 4; }

    static SmoothFit unpack(SmoothFamily fam, const Eigen::VectorXd& p) {
        SmoothFit f;
        f.family = fam;
        f.amp = p(0);
        f.beta = p(1);
        if (fam == SmoothFamily::PowerLawExp) {
            f.gamma = p(2);
            f.alpha = p(3);
        }
        return f;
    }

    void clamp(Eigen::VectorXd& p) const {
        p(1) = std::clamp(p(1), kRateLo, kRateHi);
        if (family == SmoothFamily::PowerLawExp) {
            p(2) = std::clamp(p(2), kRateLo, kRateHi);
            p(3) = std::clamp(p(3), kAlphaLo, kAlphaHi);
        }
    }

    double residuals(const Eigen::VectorXd& p, Eigen::VectorXd& r,
                     Eigen::MatrixXd* jac) const {
        const int n = static_cast<int>(y.size());
        r.resize(n);
        if (jac) jac->resize(n, n_params());
        double sse = 0.0;
        for (int m = 0; m < n; ++m) {
            const double tau = m + 1;
            const double e = std::exp(-p(1) * tau);
            double base = e, dgamma = 0.0, dalpha = 0.0;
            if (family == SmoothFamily::PowerLawExp) {
                const double g = 1.0 + p(2) * tau;
                const double pw = std::pow(g, -p(3));
                base = e * pw;
                dgamma = p(0) * e * (-p(3)) * std::pow(g, -p(3) - 1.0) * tau;
                dalpha = p(0) * base * (-std::log(g));
            }
            const double f = p(0) * base;
            r(m) = f - y[static_cast<size_t>(m)];
            sse += r(m) * r(m);
            if (jac) {
                (*jac)(m, 0) = base;
                (*jac)(m, 1) = -tau * f;
                if (family == SmoothFamily::PowerLawExp) {
                    (*jac)(m, 2) = dgamma;
                    (*jac)(m, 3) = dalpha;
                }
            }
        }
        return sse;
    }
};

bool lm_minimize(const LmProblem& prob, Eigen::VectorXd& p, double& sse) {
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    prob.clamp(p);
    sse = prob.residuals(p, r, &J);
    if (!std::isfinite(sse)) return false;
    double lambda = 1e-6;
    for (int it = 0; it < 200; ++it) {
        Eigen::MatrixXd h = J.transpose() * J;
        Eigen::VectorXd g = J.transpose() * r;
        bool stepped = false;
        for (int k = 0; k < 40; ++k) {
            Eigen::MatrixXd hl = h;
            hl.diagonal().array() += lambda * (h.diagonal().array().abs() + 1e-12);
            Eigen::VectorXd step = hl.ldlt().solve(-g);
            Eigen::VectorXd pn = p + step;
            prob.clamp(pn);
            Eigen::VectorXd rn;
            const double sn = prob.residuals(pn, rn, nullptr);
            if (std::isfinite(sn) && sn < sse) {
                const double gain = sse - sn;
                p = pn;
                sse = sn;
                lambda = std::max(lambda * 0.3, 1e-12);
                stepped = true;
                prob.residuals(p, r, &J);
                if (gain < 1e-16 * (1.0 + sse)) return true;
                break;
            }
            lambda *= 10.0;
            if (lambda > 1e12) return true;
        }
        if (!stepped) return true;
        if (sse < 1e-28) return true;
    }
    return true;
}

}  // namespace

SmoothFit fit_smooth(const std::vector<double>& curve, SmoothFamily family) {
    const int np = family == SmoothFamily::Exp ? 2 : 4;
    if (static_cast<int>(curve.size()) < np + 2)
        throw InsufficientBinsError("curve too short to fit");
    LmProblem prob{family, curve};

    // scale guess from the first point
    const double y1 = curve[0];
    std::vector<Eigen::VectorXd> starts;
    if (family == SmoothFamily::Exp) {
        for (double b : {1e-3, 5e-3, 0.02, 0.05, 0.1, 0.3, 1.0, 3.0}) {
            Eigen::VectorXd p(2);
            p << y1 * std::exp(b), b;
            starts.push_back(p);
        }
    } else {
        for (double alpha : {0.3, 1.0})
            for (double beta : {1e-8, 0.05})
                for (double gamma : {0.5, 10.0}) {
                    Eigen::VectorXd p(4);
                    const double shape1 =
                        std::exp(-beta) * std::pow(1.0 + gamma, -alpha);
                    p << y1 / shape1, beta, gamma, alpha;
                    starts.push_back(p);
                }
    }

    bool any = false;
    SmoothFit best;
    best.sse = std::numeric_limits<double>::infinity();
    for (auto& p : starts) {
        double sse = 0.0;
        Eigen::VectorXd q = p;
        if (!lm_minimize(prob, q, sse)) continue;
        if (std::isfinite(sse) && sse < best.sse) {
            best = LmProblem::unpack(family, q);
            best.sse = sse;
            any = true;
        }
    }
    if (!any) throw FitDivergedError("all smoothing fit starts diverged");
    return best;
}

RankOneResult rank_one_approx(const Eigen::MatrixXd& offdiag) {
    const int q = static_cast<int>(offdiag.rows());
    if (offdiag.cols() != q) throw NonSymmetricError("rank_one_approx: not square");
    const double scale = offdiag.cwiseAbs().maxCoeff();
    if ((offdiag - offdiag.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * std::max(scale, 1.0))
        throw NonSymmetricError("rank_one_approx: not symmetric");

    RankOneResult res;
    res.k = Eigen::VectorXd::Zero(q);
    if (scale == 0.0) {
        res.eig_ratio = std::numeric_limits<double>::infinity();
        return res;
    }

    Eigen::MatrixXd m = (offdiag + offdiag.transpose()) / 2.0;
    m.diagonal().setZero();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    const Eigen::VectorXd& w = eig.eigenvalues();  // ascending
    const double lmax = w(q - 1);
    double second = 0.0;
    for (int i = 0; i < q - 1; ++i) second = std::max(second, std::abs(w(i)));
    res.eig_ratio = second > 0.0 ? lmax / second
                                 : std::numeric_limits<double>::infinity();

    // deterministic tie break: lexicographically larger sign-fixed vector
    Eigen::VectorXd v = eig.eigenvectors().col(q - 1);
    if (v.sum() < 0.0) v = -v;
    for (int i = q - 2; i >= 0; --i) {
        if (lmax - w(i) > 1e-12 * std::max(std::abs(lmax), 1.0)) break;
        Eigen::VectorXd u = eig.eigenvectors().col(i);
        if (u.sum() < 0.0) u = -u;
        for (int c = 0; c < q; ++c) {
            if (u(c) == v(c)) continue;
            if (u(c) > v(c)) v = u;
            break;
        }
    }
    Eigen::VectorXd k = std::sqrt(std::max(lmax, 0.0)) * v;

    // Gauss-Newton refinement of sum_{i<j} (k_i k_j - M_ij)^2
    double lambda = 1e-10;
    auto sse_of = [&](const Eigen::VectorXd& kk) {
        double s = 0.0;
        for (int i = 0; i < q; ++i)
            for (int j = i + 1; j < q; ++j) {
                const double e = kk(i) * kk(j) - m(i, j);
                s += e * e;
            }
        return s;
    };
    double sse = sse_of(k);
    for (int it = 0; it < 200 && sse > 1e-26 * scale * scale; ++it) {
        // normal equations of the masked fit assembled directly
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(q, q);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(q);
        for (int i = 0; i < q; ++i)
            for (int j = i + 1; j < q; ++j) {
                const double e = k(i) * k(j) - m(i, j);
                g(i) += e * k(j);
                g(j) += e * k(i);
                h(i, i) += k(j) * k(j);
                h(j, j) += k(i) * k(i);
                h(i, j) = k(i) * k(j);
                h(j, i) = h(i, j);
            }
        bool stepped = false;
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::MatrixXd hl = h;
            hl.diagonal().array() += lambda * (h.diagonal().array().abs() + 1e-12);
            Eigen::VectorXd step = hl.ldlt().solve(-g);
            Eigen::VectorXd kn = k + step;
            const double sn = sse_of(kn);
            if (std::isfinite(sn) && sn < sse) {
                const double gain = sse - sn;
                k = kn;
                sse = sn;
                lambda = std::max(lambda * 0.3, 1e-12);
                stepped = true;
                if (gain < 1e-18 * (1.0 + sse)) it = 200;
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) break;
    }
    if (k.sum() < 0.0) k = -k;
    res.k = k;
    return res;
}

CovarianceSuite smooth_suite(const CovarianceSuite& suite, SmoothingReport* report) {
    CovarianceSuite out = suite;
    const int q = suite.q;
    auto note = [&](const std::string& name, int i, int j, const SmoothFit& f) {
        if (report) report->fits.push_back({name, i, j, f});
    };

    for (int i = 0; i < suite.n_assets; ++i)
        for (int j = 0; j < suite.n_assets; ++j) {
            if (!suite.C[i][j].empty()) {
                std::vector<double> lags(suite.C[i][j].begin() + 1, suite.C[i][j].end());
                SmoothFit f = fit_smooth(lags, SmoothFamily::PowerLawExp);
                for (int tau = 1; tau <= q; ++tau)
                    out.C[i][j][static_cast<size_t>(tau)] = f.eval(tau);
                note("C", i, j, f);
            }
            if (suite.D[i][j].size() > 0) {
                RankOneResult r1 = rank_one_approx(suite.D[i][j]);
                std::vector<double> kv(r1.k.data(), r1.k.data() + q);
                SmoothFit f = fit_smooth(kv, SmoothFamily::Exp);
                Eigen::VectorXd ks(q);
                for (int tau = 1; tau <= q; ++tau) ks(tau - 1) = f.eval(tau);
                Eigen::MatrixXd d = ks * ks.transpose();
                d.diagonal() = suite.D[i][j].diagonal();
                out.D[i][j] = d;
                note("D_eigvec", i, j, f);
            }
            if (!suite.V[i][j].empty()) {
                std::vector<double> lags(suite.V[i][j].begin() + 1, suite.V[i][j].end());
                SmoothFit f = fit_smooth(lags, SmoothFamily::Exp);
                for (int tau = 1; tau <= q; ++tau)
                    out.V[i][j][static_cast<size_t>(tau)] = f.eval(tau);
                note("V", i, j, f);
            }
        }
    for (int j = 0; j < 2 && suite.n_assets == 2; ++j) {
        if (suite.Dx[j].size() == 0) continue;
        std::vector<double> diag(static_cast<size_t>(q));
        for (int tau = 1; tau <= q; ++tau)
            diag[static_cast<size_t>(tau - 1)] = suite.Dx[j](tau - 1, tau - 1);
        SmoothFit f = fit_smooth(diag, SmoothFamily::PowerLawExp);
        for (int tau = 1; tau <= q; ++tau)
            out.Dx[j](tau - 1, tau - 1) = f.eval(tau);
        note("Dx_diag", j, j, f);
    }
    return out;
}

}  // namespace mqarch
