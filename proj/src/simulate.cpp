#include "mqarch/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "mqarch/csv.hpp"

namespace mqarch {

double GaussianRng::uniform() {
    // strictly inside (0,1)
    const double u = (static_cast<double>(gen_()) + 0.5) / 18446744073709551616.0;
    return u;
}

double GaussianRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 6.283185307179586476925286766559 * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
}

ThinningResult simulate_qhawkes_thinning(const PointProcessSpec& spec,
                                         double horizon, std::uint64_t seed) {
    spec.validate();
    if (!(horizon > 0.0)) throw Error("horizon must be > 0");
    const int n = spec.n_assets;

    // Exponentially decaying kernel states, one per (target, source).
    double H[2][2] = {{0, 0}, {0, 0}};   // linear, jump n_H * beta
    double Z[2][2] = {{0, 0}, {0, 0}};   // zumbach, jump m * sqrt(2 n_Z w)
    double L[2][2] = {{0, 0}, {0, 0}};   // leverage, jump m * amp
    double phi_jump[2][2], z_jump[2][2], lev_jump[2][2];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            phi_jump[i][j] = spec.phi[i][j].norm * spec.phi[i][j].rate;
            z_jump[i][j] = std::sqrt(2.0 * spec.zumbach[i][j].norm * spec.zumbach[i][j].rate);
            lev_jump[i][j] = spec.leverage[i][j].norm;
        }

    auto decay = [&](double dt) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                H[i][j] *= std::exp(-spec.phi[i][j].rate * dt);
                Z[i][j] *= std::exp(-spec.zumbach[i][j].rate * dt);
                L[i][j] *= std::exp(-spec.leverage[i][j].rate * dt);
            }
    };
    auto intensity = [&](int i) {
        double lam = spec.lambda_inf[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j) lam += H[i][j] + Z[i][j] * Z[i][j] + L[i][j];
        return lam;
    };
    auto bound = [&](int i) {
        double b = spec.lambda_inf[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j)
            b += H[i][j] + Z[i][j] * Z[i][j] + std::max(L[i][j], 0.0);
        return b;
    };

    GaussianRng rng(seed);
    ThinningResult res;
    res.streams.assign(static_cast<size_t>(n), EventStream{{}, {}, horizon});

    double t = 0.0;
    while (true) {
        double btot = 0.0;
        for (int i = 0; i < n; ++i) btot += bound(i);
        if (!(btot > 0.0)) break;
        const double dt = -std::log(rng.uniform()) / btot;
        if (t + dt > horizon) break;
        t += dt;
        decay(dt);
        ++res.candidates;

        double lam[2] = {0, 0};
        for (int i = 0; i < n; ++i) {
            lam[i] = intensity(i);
            if (lam[i] < 0.0) {
                lam[i] = 0.0;
                ++res.clamped;
            }
        }
        const double u = rng.uniform() * btot;
        int accepted = -1;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += lam[i];
            if (u < acc) {
                accepted = i;
                break;
            }
        }
        if (accepted < 0) continue;  // rejected candidate

        const int mark = rng.uniform() < 0.5 ? 1 : -1;
        auto& st = res.streams[static_cast<size_t>(accepted)];
        st.times.push_back(t);
        st.marks.push_back(mark);
        for (int i = 0; i < n; ++i) {
            H[i][accepted] += phi_jump[i][accepted];
            Z[i][accepted] += mark * z_jump[i][accepted];
            L[i][accepted] += mark * lev_jump[i][accepted];
        }
        if (res.clamped > 1000 && res.clamped * 100 > res.candidates)
            throw Error("thinning aborted: leverage clamps exceed 1% of candidates");
    }
    return res;
}

BinnedPanel bin_events(const std::vector<EventStream>& streams, double bin_size) {
    if (!(bin_size > 0.0)) throw Error("bin_size must be > 0");
    if (streams.empty()) throw Error("no event streams");
    double horizon = 0.0;
    for (const auto& s : streams) horizon = std::max(horizon, s.horizon);
    const long n_bins = static_cast<long>(std::ceil(horizon / bin_size));

    BinnedPanel p;
    p.n_assets = static_cast<int>(streams.size());
    BinnedPanel::Day d = p.make_day(static_cast<int>(std::max<long>(n_bins, 0)));
    for (size_t a = 0; a < streams.size(); ++a) {
        const auto& s = streams[a];
        for (size_t e = 0; e < s.times.size(); ++e) {
            long b = static_cast<long>(s.times[e] / bin_size);
            if (b >= n_bins) b = n_bins - 1;
            d.r[a][static_cast<size_t>(b)] += s.marks[e];
            d.s2[a][static_cast<size_t>(b)] += 1.0;
        }
    }
    p.days.push_back(std::move(d));
    return p;
}

MqarchResult simulate_mqarch(const ModelSpec2D& model, long n_bins,
                             std::uint64_t seed) {
    model.validate();
    const int q = model.q();
    const int n = model.n_assets;
    if (n_bins <= q) throw Error("n_bins must exceed q");

    MqarchResult res;
    res.stationary_warning = spectral_radius(model.phi_norms()) >= 1.0;

    const long burn = std::max<long>(10L * q, 1000);
    const long total = n_bins + burn;

    // noise correlation implied by the equal-time covariance
    double rho = 0.0;
    if (n == 2 && model.equal_time_cov != 0.0) {
        Eigen::Vector2d ms(model.sigma_inf_sq[0], model.sigma_inf_sq[1]);
        try {
            Eigen::Vector2d mbar = mean_squared_vol(model.phi_norms(), ms);
            rho = model.equal_time_cov / std::sqrt(mbar(0) * mbar(1));
        } catch (const NonStationaryError&) {
            rho = model.equal_time_cov;
        }
        rho = std::clamp(rho, -0.999, 0.999);
    }

    std::vector<std::vector<double>> r(static_cast<size_t>(n)),
        s2(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a) {
        r[a].assign(static_cast<size_t>(total + q), 0.0);
        s2[a].assign(static_cast<size_t>(total + q), 0.0);
    }

    GaussianRng rng(seed);
    const double floor_eps = 1e-12;
    const bool rank_one[2][2] = {
        {!model.quad[0][0].full_upper, !model.quad[0][1].full_upper},
        {!model.quad[1][0].full_upper, !model.quad[1][1].full_upper}};

    for (long t = q; t < total + q; ++t) {
        for (int i = 0; i < n; ++i) {
            double v = model.sigma_inf_sq[static_cast<size_t>(i)];
            for (int j = 0; j < n; ++j) {
                const auto& qk = model.quad[i][j];
                const auto& lev = model.leverage[i][j];
                const double* rj = r[static_cast<size_t>(j)].data() + t;
                double lin = 0.0, trend = 0.0, trend_d = 0.0;
                for (int tau = 1; tau <= q; ++tau) {
                    const double x = rj[-tau];
                    lin += lev.at(tau) * x + qk.diag.at(tau) * x * x;
                    if (rank_one[i][j]) {
                        const double kr = qk.rank_one.at(tau) * x;
                        trend += kr;
                        trend_d += kr * kr;
                    }
                }
                v += lin;
                if (rank_one[i][j]) {
                    v += trend * trend - trend_d;
                } else {
                    for (int t1 = 1; t1 <= q; ++t1)
                        for (int t2 = t1 + 1; t2 <= q; ++t2)
                            v += 2.0 * qk.off_diag(t1, t2) * rj[-t1] * rj[-t2];
                }
            }
            if (n == 2) {
                const int ib = 1 - i;
                const double* ri = r[static_cast<size_t>(i)].data() + t;
                const double* rb = r[static_cast<size_t>(ib)].data() + t;
                for (int tau = 1; tau <= q; ++tau)
                    v += model.phi_cross[i].at(tau) *
                         (ri[-tau] * rb[-tau] - model.equal_time_cov);
                if (model.k_cross[i]) {
                    const Eigen::MatrixXd& kx = *model.k_cross[i];
                    for (int t1 = 1; t1 <= q; ++t1)
                        for (int t2 = 1; t2 <= q; ++t2) {
                            if (t1 == t2) continue;
                            v += kx(t1 - 1, t2 - 1) * ri[-t1] * rb[-t2];
                        }
                }
            }
            if (v < floor_eps) {
                v = floor_eps;
                ++res.floored;
            }
            s2[static_cast<size_t>(i)][static_cast<size_t>(t)] = v;
        }
        double xi1 = rng.normal();
        r[0][static_cast<size_t>(t)] =
            std::sqrt(s2[0][static_cast<size_t>(t)]) * xi1;
        if (n == 2) {
            double xi2 = rho * xi1 + std::sqrt(1.0 - rho * rho) * rng.normal();
            r[1][static_cast<size_t>(t)] =
                std::sqrt(s2[1][static_cast<size_t>(t)]) * xi2;
        }
    }

    BinnedPanel p;
    p.n_assets = n;
    BinnedPanel::Day d = p.make_day(static_cast<int>(n_bins));
    const long off = q + burn;
    for (int a = 0; a < n; ++a)
        for (long t = 0; t < n_bins; ++t) {
            d.r[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                r[static_cast<size_t>(a)][static_cast<size_t>(off + t)];
            d.s2[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                s2[static_cast<size_t>(a)][static_cast<size_t>(off + t)];
        }
    p.days.push_back(std::move(d));
    res.panel = std::move(p);
    return res;
}

void save_events_csv(const std::vector<EventStream>& streams, const std::string& path) {
    csv::Writer w(path, {"time", "mark", "asset"});
    // merge by time for a readable file
    std::vector<std::pair<double, std::pair<int, int>>> all;
    for (size_t a = 0; a < streams.size(); ++a)
        for (size_t e = 0; e < streams[a].times.size(); ++e)
            all.push_back({streams[a].times[e], {streams[a].marks[e], static_cast<int>(a) + 1}});
    std::sort(all.begin(), all.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    for (const auto& [t, mk] : all)
        w.row({csv::fmt(t), csv::fmt(mk.first), csv::fmt(mk.second)});
    w.close();
}

std::vector<EventStream> load_events_csv(const std::string& path) {
    csv::Table t = csv::read(path);
    const int c_t = t.col_required("time");
    const int c_m = t.col_required("mark");
    const int c_a = t.col_required("asset");
    int n_assets = 1;
    for (const auto& r : t.rows)
        n_assets = std::max(n_assets, csv::parse_int(r[c_a]));
    std::vector<EventStream> out(static_cast<size_t>(n_assets));
    double horizon = 0.0;
    for (const auto& r : t.rows) {
        int a = csv::parse_int(r[c_a]) - 1;
        double tm = csv::parse_double(r[c_t]);
        out[static_cast<size_t>(a)].times.push_back(tm);
        out[static_cast<size_t>(a)].marks.push_back(csv::parse_int(r[c_m]));
        horizon = std::max(horizon, tm);
    }
    for (auto& s : out) s.horizon = horizon;
    return out;
}

}  // namespace mqarch
