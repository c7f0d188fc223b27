#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mqarch/model.hpp"
#include "mqarch/panel.hpp"

namespace testutil {

using namespace mqarch;

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline double unif(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(g);
}

inline std::vector<double> exp_grid(int q, double amp, double rate) {
    std::vector<double> v(static_cast<size_t>(q));
    for (int tau = 1; tau <= q; ++tau)
        v[static_cast<size_t>(tau - 1)] = amp * std::exp(-rate * tau);
    return v;
}

/// Exponential-parameter 2D quadratic model. With zhawkes_diag the time
/// diagonal carries phi + k^2 (the point-process convention), otherwise phi
/// alone with the trend kernel strictly off-diagonal.
inline ModelSpec2D make_qgarch_2d(int q, const double nh[2][2],
                                  const double beta[2][2], const double nz[2][2],
                                  const double omega[2][2], double s1, double s2,
                                  bool zhawkes_diag = true) {
    ModelSpec2D m(q, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            ExponentialKernelParams phi{nh[i][j], beta[i][j], KernelKind::Linear};
            ExponentialKernelParams k{nz[i][j], omega[i][j], KernelKind::Zumbach};
            auto pv = phi.tabulate(q);
            auto kv = k.tabulate(q);
            for (int tau = 1; tau <= q; ++tau) {
                const double kk = kv[static_cast<size_t>(tau - 1)];
                m.quad[i][j].rank_one.at(tau) = kk;
                m.quad[i][j].diag.at(tau) =
                    pv[static_cast<size_t>(tau - 1)] + (zhawkes_diag ? kk * kk : 0.0);
            }
        }
    m.sigma_inf_sq = {s1, s2};
    return m;
}

inline ModelSpec2D make_qgarch_1d(int q, double nh, double beta, double nz,
                                  double omega, double s_inf,
                                  bool zhawkes_diag = true) {
    ModelSpec2D m(q, 1);
    ExponentialKernelParams phi{nh, beta, KernelKind::Linear};
    ExponentialKernelParams k{nz, omega, KernelKind::Zumbach};
    auto pv = phi.tabulate(q);
    auto kv = k.tabulate(q);
    for (int tau = 1; tau <= q; ++tau) {
        const double kk = kv[static_cast<size_t>(tau - 1)];
        m.quad[0][0].rank_one.at(tau) = kk;
        m.quad[0][0].diag.at(tau) =
            pv[static_cast<size_t>(tau - 1)] + (zhawkes_diag ? kk * kk : 0.0);
    }
    m.sigma_inf_sq = {s_inf, 0.0};
    return m;
}

/// Independent brute-force variance evaluation: expands every sum of the
/// recursion directly from a full two-time kernel table.
inline double sigma2_brute_force(const ModelSpec2D& m,
                                 const std::vector<double>& h1,
                                 const std::vector<double>& h2, int target) {
    const int q = m.q();
    auto r = [&](int asset, int tau) -> double {
        const auto& h = asset == 0 ? h1 : h2;
        return h[h.size() - static_cast<size_t>(tau)];
    };
    const int i = target;
    double s2 = m.sigma_inf_sq[static_cast<size_t>(i)];
    for (int j = 0; j < m.n_assets; ++j) {
        for (int t1 = 1; t1 <= q; ++t1)
            for (int t2 = 1; t2 <= q; ++t2) {
                double kv;
                if (t1 == t2)
                    kv = m.quad[i][j].diag.at(t1);
                else
                    kv = m.quad[i][j].off_diag(t1, t2);
                s2 += kv * r(j, t1) * r(j, t2);
            }
        for (int tau = 1; tau <= q; ++tau)
            s2 += m.leverage[i][j].at(tau) * r(j, tau);
    }
    if (m.n_assets == 2) {
        const int ib = 1 - i;
        for (int tau = 1; tau <= q; ++tau)
            s2 += m.phi_cross[i].at(tau) * (r(i, tau) * r(ib, tau) - m.equal_time_cov);
        if (m.k_cross[i])
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = 1; t2 <= q; ++t2)
                    if (t1 != t2)
                        s2 += (*m.k_cross[i])(t1 - 1, t2 - 1) * r(i, t1) * r(ib, t2);
    }
    return s2;
}

inline double l1_error(const std::vector<double>& got, const std::vector<double>& want) {
    double e = 0.0;
    for (size_t i = 0; i < got.size(); ++i) e += std::abs(got[i] - want[i]);
    return e;
}

inline double l1_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

}  // namespace testutil
