#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "mqarch/factor.hpp"
#include "mqarch/simulate.hpp"

using namespace mqarch;
using namespace testutil;

namespace {

/// Synthetic 1-factor universe: factor from a 1D quadratic recursion, each
/// stock r_i = beta_i f + e_i with the residual driven by its own kernels
/// plus a factor-volatility feedback.
struct Universe {
    BinnedPanel factor;                 // single asset, returns + squared proxy
    std::vector<BinnedPanel> stocks;    // single asset each
    std::vector<std::string> tickers;
    std::vector<double> beta;
    ModelSpec2D residual_truth;         // asset 1 = residual, asset 2 = factor
    ModelSpec2D factor_truth;           // 1D
};

Universe make_universe(int n_stocks, long n_bins, std::uint64_t seed) {
    Universe u;
    const int q = 40;
    u.factor_truth = make_qgarch_1d(q, 0.5, 0.1, 0.15, 0.08, 0.3, false);
    MqarchResult fsim = simulate_mqarch(u.factor_truth, n_bins, seed);
    const std::vector<double>& f = fsim.panel.days[0].r[0];
    const std::vector<double>& fs2 = fsim.panel.days[0].s2[0];

    // residual dynamics shared across stocks
    u.residual_truth = ModelSpec2D(q, 2);
    u.residual_truth.sigma_inf_sq = {0.25, 0.0};
    for (int tau = 1; tau <= q; ++tau) {
        u.residual_truth.quad[0][0].diag.at(tau) = 0.4 * 0.12 * std::exp(-0.12 * tau);
        u.residual_truth.quad[0][0].rank_one.at(tau) =
            std::sqrt(2.0 * 0.12 * 0.08) * std::exp(-0.08 * tau);
        u.residual_truth.quad[0][1].diag.at(tau) = 0.15 * 0.1 * std::exp(-0.1 * tau);
        u.residual_truth.quad[0][1].rank_one.at(tau) =
            std::sqrt(2.0 * 0.06 * 0.1) * std::exp(-0.1 * tau);
        u.residual_truth.leverage[0][1].at(tau) = -0.05 * std::exp(-0.15 * tau);
    }

    for (int sidx = 0; sidx < n_stocks; ++sidx) {
        GaussianRng g(seed * 977 + static_cast<std::uint64_t>(sidx) + 1);
        const double beta = 0.6 + 0.08 * sidx;
        std::vector<double> e(static_cast<size_t>(n_bins), 0.0);
        std::vector<double> s2(static_cast<size_t>(n_bins), 0.0);
        for (long t = 0; t < n_bins; ++t) {
            double v = u.residual_truth.sigma_inf_sq[0];
            double trend_e = 0.0, trend_f = 0.0;
            for (int tau = 1; tau <= q && tau <= t; ++tau) {
                const double ee = e[static_cast<size_t>(t - tau)];
                const double ff = f[static_cast<size_t>(t - tau)];
                v += u.residual_truth.quad[0][0].diag.at(tau) * ee * ee;
                v += u.residual_truth.quad[0][1].diag.at(tau) * ff * ff;
                v += u.residual_truth.leverage[0][1].at(tau) * ff;
                trend_e += u.residual_truth.quad[0][0].rank_one.at(tau) * ee;
                trend_f += u.residual_truth.quad[0][1].rank_one.at(tau) * ff;
            }
            double te2 = 0.0, tf2 = 0.0;
            for (int tau = 1; tau <= q && tau <= t; ++tau) {
                const double ke = u.residual_truth.quad[0][0].rank_one.at(tau) *
                                  e[static_cast<size_t>(t - tau)];
                const double kf = u.residual_truth.quad[0][1].rank_one.at(tau) *
                                  f[static_cast<size_t>(t - tau)];
                te2 += ke * ke;
                tf2 += kf * kf;
            }
            v += trend_e * trend_e - te2 + trend_f * trend_f - tf2;
            v = std::max(v, 1e-12);
            s2[static_cast<size_t>(t)] = v;
            e[static_cast<size_t>(t)] = std::sqrt(v) * g.normal();
        }
        BinnedPanel stock;
        stock.n_assets = 1;
        BinnedPanel::Day day = stock.make_day(static_cast<int>(n_bins));
        for (long t = 0; t < n_bins; ++t) {
            const double r = beta * f[static_cast<size_t>(t)] + e[static_cast<size_t>(t)];
            day.r[0][static_cast<size_t>(t)] = r;
            day.s2[0][static_cast<size_t>(t)] = r * r;
        }
        stock.days.push_back(std::move(day));
        u.stocks.push_back(std::move(stock));
        u.tickers.push_back("S" + std::to_string(sidx + 1));
        u.beta.push_back(beta);
    }

    BinnedPanel fpanel;
    fpanel.n_assets = 1;
    BinnedPanel::Day fday = fpanel.make_day(static_cast<int>(n_bins));
    fday.r[0] = f;
    fday.s2[0] = fs2;
    fpanel.days.push_back(std::move(fday));
    u.factor = std::move(fpanel);
    return u;
}

}  // namespace

TEST_CASE("estimate_beta") {
    GaussianRng g(1);
    std::vector<double> f(20000), r_same(20000), r_indep(20000), r_half(20000);
    for (size_t t = 0; t < f.size(); ++t) {
        f[t] = g.normal();
        r_same[t] = f[t];
        r_indep[t] = g.normal();
        r_half[t] = 0.5 * f[t] + g.normal();
    }
    CHECK(estimate_beta(r_same, f) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(estimate_beta(r_indep, f)) < 4.0 / std::sqrt(20000.0));
    CHECK(estimate_beta(r_half, f) == doctest::Approx(0.5).epsilon(0.05));
    std::vector<double> flat(100, 1.0);
    CHECK_THROWS_AS(estimate_beta(flat, flat), DegenerateFactorError);
}

TEST_CASE("decomposition is orthogonal on the estimation sample") {
    Universe u = make_universe(1, 30000, 7);
    FactorDecomposition dec = decompose_stock(u.stocks[0], u.factor);
    CHECK(dec.beta == doctest::Approx(u.beta[0]).epsilon(0.05));
    const auto& day = dec.residual_and_factor.days[0];
    // centered covariance between residual and factor vanishes by construction
    double me = 0, mf = 0;
    const double n = static_cast<double>(day.bins());
    for (int t = 0; t < day.bins(); ++t) {
        me += day.r[0][static_cast<size_t>(t)];
        mf += day.r[1][static_cast<size_t>(t)];
    }
    me /= n;
    mf /= n;
    double cov = 0;
    for (int t = 0; t < day.bins(); ++t)
        cov += (day.r[0][static_cast<size_t>(t)] - me) *
               (day.r[1][static_cast<size_t>(t)] - mf);
    cov /= n;
    CHECK(std::abs(cov) < 1e-10);
    // squared-return volatility proxy
    for (int t = 0; t < 100; ++t) {
        CHECK(day.s2[0][static_cast<size_t>(t)] ==
              day.r[0][static_cast<size_t>(t)] * day.r[0][static_cast<size_t>(t)]);
        CHECK(day.s2[1][static_cast<size_t>(t)] ==
              day.r[1][static_cast<size_t>(t)] * day.r[1][static_cast<size_t>(t)]);
    }
}

TEST_CASE("factor model calibration") {
    Universe u = make_universe(3, 300000, 11);
    CalibrationOptions opts;
    opts.q = 40;
    opts.q_cross = 30;
    opts.steps = {1, 2, 4};
    opts.workers = 2;
    FactorModelResult res = calibrate_factor_model(u.stocks, u.tickers, u.factor, opts);

    SUBCASE("factor kernels equal the direct 1d path bit-exactly") {
        CalibrationOptions fopts = opts;
        fopts.steps = {1, 4};
        BinnedPanel fsq = u.factor;
        for (auto& d : fsq.days)
            for (size_t t = 0; t < d.r[0].size(); ++t) d.s2[0][t] = d.r[0][t] * d.r[0][t];
        Calibration direct = calibrate_panel(fsq, fopts);
        for (int tau = 1; tau <= opts.q; ++tau) {
            CHECK(res.factor_calib.model.phi(0, 0).at(tau) ==
                  direct.model.phi(0, 0).at(tau));
            CHECK(res.factor_calib.model.quad[0][0].rank_one.at(tau) ==
                  direct.model.quad[0][0].rank_one.at(tau));
        }
    }

    SUBCASE("residual self and factor-direction kernels recovered") {
        // cross-sectional mean profiles against the shared truth
        CrossSectionSummary sum = cross_section_aggregate(res);
        double err_self = 0, norm_self = 0, err_fac = 0, norm_fac = 0;
        for (int tau = 1; tau <= opts.q; ++tau) {
            err_self += std::abs(sum.mean_phi_self[static_cast<size_t>(tau - 1)] -
                                 u.residual_truth.quad[0][0].diag.at(tau));
            norm_self += u.residual_truth.quad[0][0].diag.at(tau);
            err_fac += std::abs(sum.mean_phi_factor[static_cast<size_t>(tau - 1)] -
                                u.residual_truth.quad[0][1].diag.at(tau));
            norm_fac += u.residual_truth.quad[0][1].diag.at(tau);
        }
        CHECK(err_self / norm_self < 0.35);
        CHECK(err_fac / norm_self < 0.35);  // judged on the self-norm scale
    }

    SUBCASE("aggregate bookkeeping") {
        CrossSectionSummary sum = cross_section_aggregate(res);
        REQUIRE(sum.stocks.size() == 3);
        for (const auto& s : sum.stocks) {
            CHECK(s.endogeneity >= 0.0);
            CHECK(s.endogeneity ==
                  doctest::Approx(std::max(
                      kernel_l1_norm(res.factor_calib.model.phi(0, 0)), s.phi_self)));
            CHECK(s.endogeneity_max_rule >= 0.0);
        }
        // duplicated universe aggregates to the same mean
        FactorModelResult dup = res;
        for (const auto& s : res.stocks) dup.stocks.push_back(s);
        CrossSectionSummary sum2 = cross_section_aggregate(dup);
        for (int tau = 0; tau < opts.q; ++tau)
            CHECK(sum2.mean_phi_self[static_cast<size_t>(tau)] ==
                  doctest::Approx(sum.mean_phi_self[static_cast<size_t>(tau)])
                      .epsilon(1e-12));
    }
}

TEST_CASE("single spec aggregation is mean with zero dispersion") {
    Universe u = make_universe(1, 120000, 23);
    CalibrationOptions opts;
    opts.q = 40;
    opts.steps = {1, 2, 4};
    opts.workers = 2;
    FactorModelResult res = calibrate_factor_model(u.stocks, u.tickers, u.factor, opts);
    CrossSectionSummary sum = cross_section_aggregate(res);
    for (int tau = 1; tau <= opts.q; ++tau) {
        CHECK(sum.mean_phi_self[static_cast<size_t>(tau - 1)] ==
              res.stocks[0].calib.model.phi(0, 0).at(tau));
        CHECK(sum.std_phi_self[static_cast<size_t>(tau - 1)] == 0.0);
    }
}

TEST_CASE("two opposite kernels average to zero with dispersion") {
    Universe u = make_universe(2, 60000, 31);
    CalibrationOptions opts;
    opts.q = 40;
    opts.steps = {1, 2, 4};
    opts.workers = 2;
    FactorModelResult res = calibrate_factor_model(u.stocks, u.tickers, u.factor, opts);
    // overwrite with synthetic +-x kernels to pin the aggregation arithmetic
    for (int tau = 1; tau <= opts.q; ++tau) {
        const double x = 0.1 * std::exp(-0.1 * tau);
        res.stocks[0].calib.model.quad[0][0].diag.at(tau) = x;
        res.stocks[1].calib.model.quad[0][0].diag.at(tau) = -x;
    }
    CrossSectionSummary sum = cross_section_aggregate(res);
    for (int tau = 1; tau <= opts.q; ++tau) {
        const double x = 0.1 * std::exp(-0.1 * tau);
        CHECK(sum.mean_phi_self[static_cast<size_t>(tau - 1)] ==
              doctest::Approx(0.0).epsilon(1e-15));
        CHECK(sum.std_phi_self[static_cast<size_t>(tau - 1)] ==
              doctest::Approx(x).epsilon(1e-12));
    }
}

TEST_CASE("decoupled stock has no factor-direction feedback") {
    // beta = 0 and a residual independent of the factor
    const int q = 30;
    const long n_bins = 200000;
    ModelSpec2D ftruth = make_qgarch_1d(q, 0.4, 0.12, 0.1, 0.1, 0.3, false);
    MqarchResult fsim = simulate_mqarch(ftruth, n_bins, 41);
    ModelSpec2D struth = make_qgarch_1d(q, 0.45, 0.1, 0.12, 0.09, 0.2, false);
    MqarchResult ssim = simulate_mqarch(struth, n_bins, 42);

    BinnedPanel stock;
    stock.n_assets = 1;
    BinnedPanel::Day sday = stock.make_day(static_cast<int>(n_bins));
    sday.r[0] = ssim.panel.days[0].r[0];
    for (long t = 0; t < n_bins; ++t)
        sday.s2[0][static_cast<size_t>(t)] =
            sday.r[0][static_cast<size_t>(t)] * sday.r[0][static_cast<size_t>(t)];
    stock.days.push_back(std::move(sday));

    CalibrationOptions opts;
    opts.q = q;
    opts.steps = {1, 2, 4};
    opts.workers = 2;
    FactorModelResult res =
        calibrate_factor_model({stock}, {"X"}, fsim.panel, opts);
    CHECK(std::abs(res.stocks[0].beta) < 4.0 / std::sqrt(static_cast<double>(n_bins)));
    const double self_norm = kernel_abs_norm(res.stocks[0].calib.model.phi(0, 0));
    const double cross_norm = kernel_abs_norm(res.stocks[0].calib.model.phi(0, 1));
    CHECK(cross_norm < 0.2 * self_norm);
}
