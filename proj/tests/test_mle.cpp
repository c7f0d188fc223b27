#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "mqarch/mle.hpp"
#include "mqarch/simulate.hpp"

using namespace mqarch;
using namespace testutil;

namespace {

PointProcessSpec zhawkes_1d(double lam, double nh, double beta, double nz,
                            double omega) {
    PointProcessSpec s;
    s.n_assets = 1;
    s.lambda_inf = {lam, 0.0};
    s.phi[0][0] = {nh, beta, KernelKind::Linear};
    s.zumbach[0][0] = {nz, omega, KernelKind::Zumbach};
    return s;
}

/// Trapezoid quadrature of the intensity path for the compensator oracle.
double quadrature_compensator(const PointProcessSpec& theta,
                              const std::vector<EventStream>& events, int asset,
                              double dt_step = 1e-4) {
    const double horizon = events[0].horizon;
    // O(1) state updates on a fine grid; the state jumps at event times
    const int n = theta.n_assets;
    std::vector<size_t> next(static_cast<size_t>(n), 0);
    double h[2][2] = {{0, 0}, {0, 0}};
    double z[2][2] = {{0, 0}, {0, 0}};
    auto lam_of = [&](int i) {
        double lam = theta.lambda_inf[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j) lam += h[i][j] + z[i][j] * z[i][j];
        return lam;
    };
    double integral = 0.0;
    double t = 0.0;
    while (t < horizon) {
        // next breakpoint: event or grid step
        double t_next = std::min(horizon, t + dt_step);
        int ev_asset = -1;
        for (int a = 0; a < n; ++a) {
            if (next[static_cast<size_t>(a)] < events[static_cast<size_t>(a)].times.size()) {
                const double te =
                    events[static_cast<size_t>(a)].times[next[static_cast<size_t>(a)]];
                if (te <= t_next) {
                    t_next = te;
                    ev_asset = a;
                }
            }
        }
        const double step = t_next - t;
        const double lam0 = lam_of(asset);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                h[i][j] *= std::exp(-theta.phi[i][j].rate * step);
                z[i][j] *= std::exp(-theta.zumbach[i][j].rate * step);
            }
        integral += 0.5 * (lam0 + lam_of(asset)) * step;
        t = t_next;
        if (ev_asset >= 0) {
            const auto& s = events[static_cast<size_t>(ev_asset)];
            const int mark = s.marks[next[static_cast<size_t>(ev_asset)]];
            for (int i = 0; i < n; ++i) {
                h[i][ev_asset] +=
                    theta.phi[i][ev_asset].norm * theta.phi[i][ev_asset].rate;
                z[i][ev_asset] += mark * std::sqrt(2.0 * theta.zumbach[i][ev_asset].norm *
                                                   theta.zumbach[i][ev_asset].rate);
            }
            ++next[static_cast<size_t>(ev_asset)];
        }
    }
    return integral;
}

double loglik_via_quadrature(const PointProcessSpec& theta,
                             const std::vector<EventStream>& events) {
    // ln lambda at events by replaying states exactly, compensator by quadrature
    const int n = theta.n_assets;
    double h[2][2] = {{0, 0}, {0, 0}};
    double z[2][2] = {{0, 0}, {0, 0}};
    struct Ev {
        double t;
        int asset, mark;
    };
    std::vector<Ev> merged;
    for (int a = 0; a < n; ++a)
        for (size_t e = 0; e < events[static_cast<size_t>(a)].times.size(); ++e)
            merged.push_back({events[static_cast<size_t>(a)].times[e], a,
                              events[static_cast<size_t>(a)].marks[e]});
    std::stable_sort(merged.begin(), merged.end(),
                     [](const Ev& x, const Ev& y) { return x.t < y.t; });
    double lnl = 0.0, t_prev = 0.0;
    for (const auto& ev : merged) {
        const double dt = ev.t - t_prev;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                h[i][j] *= std::exp(-theta.phi[i][j].rate * dt);
                z[i][j] *= std::exp(-theta.zumbach[i][j].rate * dt);
            }
        t_prev = ev.t;
        double lam = theta.lambda_inf[static_cast<size_t>(ev.asset)];
        for (int j = 0; j < n; ++j)
            lam += h[ev.asset][j] + z[ev.asset][j] * z[ev.asset][j];
        lnl += std::log(lam);
        for (int i = 0; i < n; ++i) {
            h[i][ev.asset] += theta.phi[i][ev.asset].norm * theta.phi[i][ev.asset].rate;
            z[i][ev.asset] += ev.mark * std::sqrt(2.0 * theta.zumbach[i][ev.asset].norm *
                                                  theta.zumbach[i][ev.asset].rate);
        }
    }
    for (int a = 0; a < n; ++a) lnl -= quadrature_compensator(theta, events, a);
    return lnl;
}

}  // namespace

TEST_CASE("exact likelihood closed forms") {
    SUBCASE("no events: pure compensator") {
        PointProcessSpec s = zhawkes_1d(0.4, 0.5, 1.0, 0.2, 0.5);
        std::vector<EventStream> e(1);
        e[0].horizon = 7.5;
        CHECK(loglik_exact(s, e) == doctest::Approx(-0.4 * 7.5).epsilon(1e-14));
    }
    SUBCASE("one event with no feedback") {
        PointProcessSpec s = zhawkes_1d(0.1, 0.0, 1.0, 0.0, 1.0);
        std::vector<EventStream> e(1);
        e[0].times = {1.0};
        e[0].marks = {1};
        e[0].horizon = 3.0;
        CHECK(loglik_exact(s, e) ==
              doctest::Approx(std::log(0.1) - 0.3).epsilon(1e-14));
    }
    SUBCASE("two events against the quadrature oracle") {
        PointProcessSpec s = zhawkes_1d(0.1, 0.5, 1.0, 0.0, 1.0);
        std::vector<EventStream> e(1);
        e[0].times = {1.0, 2.0};
        e[0].marks = {1, -1};
        e[0].horizon = 3.0;
        CHECK(loglik_exact(s, e) ==
              doctest::Approx(loglik_via_quadrature(s, e)).epsilon(1e-6));
    }
}

TEST_CASE("exact compensator matches quadrature on random instances") {
    auto g = rng(17);
    for (int rep = 0; rep < 4; ++rep) {
        PointProcessSpec s = zhawkes_1d(unif(g, 0.05, 0.3), unif(g, 0.1, 0.5),
                                        unif(g, 0.3, 1.5), unif(g, 0.05, 0.3),
                                        unif(g, 0.2, 1.0));
        ThinningResult sim = simulate_qhawkes_thinning(s, 200.0, 100 + rep);
        if (sim.streams[0].times.empty()) continue;
        CHECK(loglik_exact(s, sim.streams) ==
              doctest::Approx(loglik_via_quadrature(s, sim.streams)).epsilon(1e-6));
    }
    // 2d instance
    PointProcessSpec s2;
    s2.n_assets = 2;
    s2.lambda_inf = {0.1, 0.15};
    s2.phi[0][0] = {0.4, 0.5, KernelKind::Linear};
    s2.phi[0][1] = {0.1, 0.7, KernelKind::Linear};
    s2.phi[1][0] = {0.15, 0.6, KernelKind::Linear};
    s2.phi[1][1] = {0.3, 0.4, KernelKind::Linear};
    s2.zumbach[0][0] = {0.1, 0.3, KernelKind::Zumbach};
    s2.zumbach[1][1] = {0.12, 0.35, KernelKind::Zumbach};
    ThinningResult sim2 = simulate_qhawkes_thinning(s2, 150.0, 33);
    CHECK(loglik_exact(s2, sim2.streams) ==
          doctest::Approx(loglik_via_quadrature(s2, sim2.streams)).epsilon(1e-6));
}

TEST_CASE("binned proxy likelihood") {
    SUBCASE("exact match gives zero") {
        // lambda-hat identical to the model intensity at every bin: feed the
        // model's own intensity path as the proxy
        PointProcessSpec s = zhawkes_1d(0.5, 0.0, 1.0, 0.0, 1.0);
        BinnedPanel p;
        p.n_assets = 1;
        BinnedPanel::Day d = p.make_day(100);
        for (int t = 0; t < 100; ++t) {
            d.r[0][static_cast<size_t>(t)] = 0.0;
            d.s2[0][static_cast<size_t>(t)] = 0.5;  // = lambda_inf with dt=1
        }
        p.days.push_back(d);
        CHECK(loglik_binned_proxy(s, p) == doctest::Approx(0.0).epsilon(1e-14));
    }
    SUBCASE("constant mismatch closed form") {
        PointProcessSpec s = zhawkes_1d(1.0, 0.0, 1.0, 0.0, 1.0);
        BinnedPanel p;
        p.n_assets = 1;
        const int nbins = 57;
        BinnedPanel::Day d = p.make_day(nbins);
        for (int t = 0; t < nbins; ++t) d.s2[0][static_cast<size_t>(t)] = 2.0;
        p.days.push_back(d);
        // N * (2 (ln 1 - ln 2) + 2 - 1)
        CHECK(loglik_binned_proxy(s, p) ==
              doctest::Approx(nbins * (1.0 - 2.0 * std::log(2.0))).epsilon(1e-12));
    }
    SUBCASE("zero-count bins contribute minus the model intensity") {
        PointProcessSpec s = zhawkes_1d(0.7, 0.0, 1.0, 0.0, 1.0);
        BinnedPanel p;
        p.n_assets = 1;
        BinnedPanel::Day d = p.make_day(10);
        p.days.push_back(d);
        CHECK(loglik_binned_proxy(s, p) == doctest::Approx(-7.0).epsilon(1e-12));
    }
}

TEST_CASE("analytic proxy gradient matches central differences") {
    auto g = rng(29);
    ParamMask mask = ParamMask::zhawkes_2d();
    for (int rep = 0; rep < 10; ++rep) {
        PointProcessSpec s;
        s.n_assets = 2;
        s.lambda_inf = {unif(g, 0.2, 0.8), unif(g, 0.2, 0.8)};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                s.phi[i][j] = {unif(g, 0.05, 0.4), unif(g, 0.05, 0.5), KernelKind::Linear};
                s.zumbach[i][j] = {unif(g, 0.02, 0.2), unif(g, 0.05, 0.5),
                                   KernelKind::Zumbach};
            }
        // random panel with a couple of days
        GaussianRng noise(300 + static_cast<std::uint64_t>(rep));
        BinnedPanel p;
        p.n_assets = 2;
        for (int day = 0; day < 2; ++day) {
            BinnedPanel::Day d = p.make_day(60);
            for (int a = 0; a < 2; ++a)
                for (int t = 0; t < 60; ++t) {
                    const double x = noise.normal();
                    d.r[static_cast<size_t>(a)][static_cast<size_t>(t)] = x;
                    d.s2[static_cast<size_t>(a)][static_cast<size_t>(t)] = x * x;
                }
            p.days.push_back(std::move(d));
        }

        Eigen::VectorXd grad = grad_binned_proxy(s, p, mask);
        // finite differences in the log coordinates
        struct P {
            double* v;
        };
        std::vector<double*> params;
        for (int i = 0; i < 2; ++i) params.push_back(&s.lambda_inf[static_cast<size_t>(i)]);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                params.push_back(&s.phi[i][j].norm);
                params.push_back(&s.phi[i][j].rate);
            }
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                params.push_back(&s.zumbach[i][j].norm);
                params.push_back(&s.zumbach[i][j].rate);
            }
        REQUIRE(static_cast<long>(params.size()) == grad.size());
        const double h = 1e-6;
        for (size_t k = 0; k < params.size(); ++k) {
            const double v0 = *params[k];
            *params[k] = v0 * std::exp(h);
            const double up = loglik_binned_proxy(s, p);
            *params[k] = v0 * std::exp(-h);
            const double dn = loglik_binned_proxy(s, p);
            *params[k] = v0;
            const double fd = (up - dn) / (2.0 * h);
            const double scale = std::max(1.0, std::abs(fd));
            CHECK(std::abs(grad(static_cast<long>(k)) - fd) / scale < 1e-5);
        }
    }
}

TEST_CASE("maximize basics") {
    SUBCASE("already optimal init stays put") {
        PointProcessSpec s = zhawkes_1d(0.5, 0.0, 1.0, 0.0, 1.0);
        BinnedPanel p;
        p.n_assets = 1;
        BinnedPanel::Day d = p.make_day(50);
        for (int t = 0; t < 50; ++t) d.s2[0][static_cast<size_t>(t)] = 0.5;
        p.days.push_back(d);
        ParamMask mask;
        mask.lambda_inf[0] = true;
        MaximizeResult r = maximize_proxy(s, p, mask);
        CHECK(r.converged);
        CHECK(r.iterations <= 1);
        CHECK(r.theta.lambda_inf[0] == doctest::Approx(0.5).epsilon(1e-9));
    }
    SUBCASE("likelihood never decreases from the start") {
        ModelSpec2D m = make_qgarch_1d(30, 0.5, 0.08, 0.15, 0.06, 0.3);
        MqarchResult sim = simulate_mqarch(m, 20000, 41);
        PointProcessSpec init = zhawkes_1d(0.2, 0.3, 0.2, 0.05, 0.2);
        const double lnl0 = loglik_binned_proxy(init, sim.panel);
        MaximizeResult r = maximize_proxy(init, sim.panel, ParamMask::zhawkes_1d(),
                                          1.0, 120);
        CHECK(r.loglik >= lnl0);
    }
}

TEST_CASE("proxy refit recovers a binned zhawkes process") {
    // exact event times aggregated into unit bins; the proxy intensity feeds
    // on the observed counts, matching the generating process
    PointProcessSpec truth = zhawkes_1d(0.1, 0.4, 0.1, 0.15, 0.08);
    ThinningResult sim = simulate_qhawkes_thinning(truth, 1e6, 51);
    BinnedPanel panel = bin_events(sim.streams, 1.0);
    PointProcessSpec init = zhawkes_1d(0.2, 0.25, 0.2, 0.08, 0.15);
    MaximizeResult r = maximize_proxy(init, panel, ParamMask::zhawkes_1d(), 1.0, 300);
    CHECK(r.theta.phi[0][0].norm == doctest::Approx(0.4).epsilon(0.25));
    CHECK(r.theta.phi[0][0].rate == doctest::Approx(0.1).epsilon(0.35));
    CHECK(r.theta.zumbach[0][0].norm == doctest::Approx(0.15).epsilon(0.35));
    CHECK(r.theta.zumbach[0][0].rate == doctest::Approx(0.08).epsilon(0.40));
    CHECK(r.theta.lambda_inf[0] == doctest::Approx(0.1).epsilon(0.25));
}

TEST_CASE("warm start from calibrated grids") {
    ModelSpec2D m = make_qgarch_1d(50, 0.6, 0.04, 0.2, 0.03, 0.003);
    PointProcessSpec theta = warm_start_from_grids(m);
    CHECK(theta.phi[0][0].norm == doctest::Approx(0.6).epsilon(0.05));
    CHECK(theta.phi[0][0].rate == doctest::Approx(0.04).epsilon(0.05));
    CHECK(theta.zumbach[0][0].norm == doctest::Approx(0.2).epsilon(0.05));
    CHECK(theta.zumbach[0][0].rate == doctest::Approx(0.03).epsilon(0.05));
    CHECK(theta.lambda_inf[0] == doctest::Approx(0.003).epsilon(1e-6));
}

TEST_CASE("exact-time refinement improves a perturbed start") {
    PointProcessSpec truth = zhawkes_1d(0.01, 0.55, 0.06, 0.12, 0.05);
    ThinningResult sim = simulate_qhawkes_thinning(truth, 4e5, 61);
    REQUIRE(sim.streams[0].times.size() > 5000);
    PointProcessSpec init = zhawkes_1d(0.02, 0.4, 0.1, 0.08, 0.1);
    const double lnl0 = loglik_exact(init, sim.streams);
    MaximizeResult r = maximize_exact(init, sim.streams, ParamMask::zhawkes_1d(), 200);
    CHECK(r.loglik >= lnl0);
    CHECK(r.loglik >= loglik_exact(truth, sim.streams) - 5.0);
    CHECK(r.theta.phi[0][0].norm == doctest::Approx(0.55).epsilon(0.2));
}
