#include "mqarch/factor.hpp"

#include <cmath>

#include "mqarch/csv.hpp"
#include "mqarch/errors.hpp"
#include "mqarch/preprocess.hpp"

namespace mqarch {

double estimate_beta(const std::vector<double>& stock,
                     const std::vector<double>& factor) {
    if (stock.size() != factor.size() || stock.empty())
        throw LengthMismatchError("estimate_beta needs equal-length series");
    const double n = static_cast<double>(stock.size());
    double ms = 0.0, mf = 0.0;
    for (size_t t = 0; t < stock.size(); ++t) {
        ms += stock[t];
        mf += factor[t];
    }
    ms /= n;
    mf /= n;
    double cov = 0.0, var = 0.0;
    for (size_t t = 0; t < stock.size(); ++t) {
        cov += (stock[t] - ms) * (factor[t] - mf);
        var += (factor[t] - mf) * (factor[t] - mf);
    }
    if (!(var > 0.0)) throw DegenerateFactorError("factor variance is zero");
    return cov / var;
}

FactorDecomposition decompose_stock(const BinnedPanel& stock,
                                    const BinnedPanel& factor) {
    stock.check_rectangular();
    factor.check_rectangular();
    if (stock.n_assets != 1 || factor.n_assets != 1)
        throw Error("decompose_stock expects single-asset panels");
    if (stock.days.size() != factor.days.size())
        throw LengthMismatchError("stock and factor panels differ in days");

    std::vector<double> rs, rf;
    for (size_t d = 0; d < stock.days.size(); ++d) {
        if (stock.days[d].bins() != factor.days[d].bins())
            throw LengthMismatchError("stock and factor days differ in bins");
        rs.insert(rs.end(), stock.days[d].r[0].begin(), stock.days[d].r[0].end());
        rf.insert(rf.end(), factor.days[d].r[0].begin(), factor.days[d].r[0].end());
    }
    FactorDecomposition out;
    out.beta = estimate_beta(rs, rf);

    BinnedPanel p;
    p.n_assets = 2;
    p.stage = stock.stage;
    for (size_t d = 0; d < stock.days.size(); ++d) {
        const int bins = stock.days[d].bins();
        BinnedPanel::Day day = p.make_day(bins);
        day.date = stock.days[d].date;
        for (int t = 0; t < bins; ++t) {
            const double f = factor.days[d].r[0][static_cast<size_t>(t)];
            const double e = stock.days[d].r[0][static_cast<size_t>(t)] - out.beta * f;
            day.r[0][static_cast<size_t>(t)] = e;
            day.s2[0][static_cast<size_t>(t)] = e * e;
            day.r[1][static_cast<size_t>(t)] = f;
            day.s2[1][static_cast<size_t>(t)] = f * f;
        }
        p.days.push_back(std::move(day));
    }
    out.residual_and_factor = std::move(p);
    return out;
}

namespace {

BinnedPanel squared_proxy_panel(const BinnedPanel& src) {
    BinnedPanel out = src;
    for (auto& d : out.days)
        for (int a = 0; a < out.n_assets; ++a)
            for (size_t t = 0; t < d.r[static_cast<size_t>(a)].size(); ++t)
                d.s2[static_cast<size_t>(a)][t] =
                    d.r[static_cast<size_t>(a)][t] * d.r[static_cast<size_t>(a)][t];
    return out;
}

}  // namespace

FactorModelResult calibrate_factor_model(
    const std::vector<BinnedPanel>& stocks, const std::vector<std::string>& tickers,
    const BinnedPanel& factor, const CalibrationOptions& opts) {
    if (stocks.empty()) throw Error("empty stock universe");
    if (tickers.size() != stocks.size())
        throw LengthMismatchError("one ticker per stock panel required");

    FactorModelResult out;

    // 1D path on the factor itself (squared-return volatility proxy)
    CalibrationOptions fopts = opts;
    fopts.steps = {1, 4};
    BinnedPanel fpanel = squared_proxy_panel(factor);
    out.factor_calib = calibrate_panel(fpanel, fopts);

    SolveOptions so;
    so.ridge = opts.ridge;
    so.q_cross = opts.q_cross;
    so.leverage_quad_corrections = opts.leverage_quad_corrections;

    for (size_t s = 0; s < stocks.size(); ++s) {
        FactorDecomposition dec = decompose_stock(stocks[s], factor);
        const BinnedPanel& panel = dec.residual_and_factor;
        BinnedPanel sym = opts.mirror ? mirror_augment(panel) : panel;

        SuiteRequest req;
        req.q = opts.q;
        req.d_matrices = true;
        req.dx = false;
        req.workers = opts.workers;
        req.winsor_quantile = opts.winsor_quantile;
        CovarianceSuite suite = estimate_suite(sym, req);

        Calibration st;
        st.model = ModelSpec2D(opts.q, 2);
        // factor -> factor direction frozen from the 1D fit
        st.model.quad[1][1] = out.factor_calib.model.quad[0][0];
        st.model.leverage[1][1] = out.factor_calib.model.leverage[0][0];
        st.self_done[1] = true;

        // residual self kernels
        {
            YWBlockSystem sys =
                build_block_system(suite, CalibStep::Self1D, 0, st.model, so);
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sys.design);
            Eigen::VectorXd x = qr.solve(sys.rhs);
            const int q = opts.q;
            for (int k = 1; k <= q; ++k) st.model.quad[0][0].diag.at(k) = x(k - 1);
            std::vector<double> upper(static_cast<size_t>(upper_tri_size(q)));
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = t1 + 1; t2 <= q; ++t2)
                    upper[static_cast<size_t>(upper_tri_index(t1, t2, q))] =
                        x(q + upper_tri_index(t1, t2, q));
            st.model.quad[0][0].full_upper = std::move(upper);
            Eigen::MatrixXd off = Eigen::MatrixXd::Zero(q, q);
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = t1 + 1; t2 <= q; ++t2) {
                    off(t1 - 1, t2 - 1) = st.model.quad[0][0].off_diag(t1, t2);
                    off(t2 - 1, t1 - 1) = off(t1 - 1, t2 - 1);
                }
            RankOneResult r1 = rank_one_approx(off);
            for (int k = 1; k <= q; ++k)
                st.model.quad[0][0].rank_one.at(k) = r1.k(k - 1);
            st.self_done[0] = true;
        }

        // factor -> residual direction, residual self refreshed against it;
        // the residual -> factor direction stays frozen at zero
        solve_cross_for_target(suite, st, 0, so);
        st.cross_done = true;

        recover_baselines(suite, st);

        SuiteRequest lreq;
        lreq.q = opts.q;
        lreq.d_matrices = false;
        lreq.with_leverage = true;
        lreq.workers = opts.workers;
        lreq.winsor_quantile = opts.winsor_quantile;
        CovarianceSuite orig = estimate_suite(panel, lreq);
        solve_leverage(orig, st, so);
        // the factor direction keeps its own 1D leverage fit
        st.model.leverage[1][1] = out.factor_calib.model.leverage[0][0];
        st.model.leverage[1][0] = KernelGrid(opts.q);

        StockResult res;
        res.ticker = tickers[s];
        res.beta = dec.beta;
        res.calib = std::move(st);
        out.stocks.push_back(std::move(res));
    }
    return out;
}

CrossSectionSummary cross_section_aggregate(const FactorModelResult& result) {
    if (result.stocks.empty()) throw Error("aggregate of an empty universe");
    const int q = result.stocks[0].calib.model.q();
    const size_t n = result.stocks.size();

    CrossSectionSummary sum;
    sum.q = q;
    auto accumulate = [&](auto getter, std::vector<double>& mean,
                          std::vector<double>& sd) {
        mean.assign(static_cast<size_t>(q), 0.0);
        sd.assign(static_cast<size_t>(q), 0.0);
        for (const auto& s : result.stocks)
            for (int tau = 1; tau <= q; ++tau)
                mean[static_cast<size_t>(tau - 1)] += getter(s, tau);
        for (double& v : mean) v /= static_cast<double>(n);
        for (const auto& s : result.stocks)
            for (int tau = 1; tau <= q; ++tau) {
                const double d = getter(s, tau) - mean[static_cast<size_t>(tau - 1)];
                sd[static_cast<size_t>(tau - 1)] += d * d;
            }
        for (double& v : sd) v = std::sqrt(v / static_cast<double>(n));
    };
    accumulate([](const StockResult& s, int tau) { return s.calib.model.phi(0, 0).at(tau); },
               sum.mean_phi_self, sum.std_phi_self);
    accumulate([](const StockResult& s, int tau) { return s.calib.model.phi(0, 1).at(tau); },
               sum.mean_phi_factor, sum.std_phi_factor);
    accumulate(
        [](const StockResult& s, int tau) { return s.calib.model.quad[0][0].rank_one.at(tau); },
        sum.mean_k_self, sum.std_k_self);
    accumulate(
        [](const StockResult& s, int tau) { return s.calib.model.quad[0][1].rank_one.at(tau); },
        sum.mean_k_factor, sum.std_k_factor);
    accumulate([](const StockResult& s, int tau) { return s.calib.model.leverage[0][1].at(tau); },
               sum.mean_lev_factor, sum.std_lev_factor);

    const double n_ff = kernel_l1_norm(result.factor_calib.model.phi(0, 0));
    for (const auto& s : result.stocks) {
        CrossSectionSummary::StockNorms sn;
        sn.ticker = s.ticker;
        sn.beta = s.beta;
        sn.phi_self = kernel_l1_norm(s.calib.model.phi(0, 0));
        sn.phi_factor = kernel_l1_norm(s.calib.model.phi(0, 1));
        KernelGrid k2s = s.calib.model.quad[0][0].rank_one;
        for (double& v : k2s.values) v *= v;
        KernelGrid k2f = s.calib.model.quad[0][1].rank_one;
        for (double& v : k2f.values) v *= v;
        sn.k2_self = kernel_l1_norm(k2s);
        sn.k2_factor = kernel_l1_norm(k2f);
        sn.lev_self = kernel_l1_norm(s.calib.model.leverage[0][0]);
        sn.lev_factor = kernel_l1_norm(s.calib.model.leverage[0][1]);
        Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
        m(0, 0) = n_ff;
        m(1, 0) = sn.phi_factor;
        m(1, 1) = sn.phi_self;
        sn.endogeneity = spectral_radius(m);
        sn.endogeneity_max_rule = std::max(std::abs(n_ff), std::abs(sn.phi_factor));
        sn.sigma_inf_sq = s.calib.model.sigma_inf_sq[0];
        sum.stocks.push_back(std::move(sn));
    }
    return sum;
}

void save_summary_csv(const CrossSectionSummary& summary, const std::string& path) {
    csv::Writer w(path,
                  {"section", "ticker", "key", "lag", "value"});
    auto profile = [&](const char* key, const std::vector<double>& mean,
                       const std::vector<double>& sd) {
        for (int tau = 1; tau <= summary.q; ++tau) {
            w.row({"profile_mean", "", key, csv::fmt(tau),
                   csv::fmt(mean[static_cast<size_t>(tau - 1)])});
            w.row({"profile_std", "", key, csv::fmt(tau),
                   csv::fmt(sd[static_cast<size_t>(tau - 1)])});
        }
    };
    profile("phi_self", summary.mean_phi_self, summary.std_phi_self);
    profile("phi_factor", summary.mean_phi_factor, summary.std_phi_factor);
    profile("k_self", summary.mean_k_self, summary.std_k_self);
    profile("k_factor", summary.mean_k_factor, summary.std_k_factor);
    profile("lev_factor", summary.mean_lev_factor, summary.std_lev_factor);
    for (const auto& s : summary.stocks) {
        w.row({"stock", s.ticker, "beta", "", csv::fmt(s.beta)});
        w.row({"stock", s.ticker, "phi_self_norm", "", csv::fmt(s.phi_self)});
        w.row({"stock", s.ticker, "phi_factor_norm", "", csv::fmt(s.phi_factor)});
        w.row({"stock", s.ticker, "k2_self_norm", "", csv::fmt(s.k2_self)});
        w.row({"stock", s.ticker, "k2_factor_norm", "", csv::fmt(s.k2_factor)});
        w.row({"stock", s.ticker, "lev_self_norm", "", csv::fmt(s.lev_self)});
        w.row({"stock", s.ticker, "lev_factor_norm", "", csv::fmt(s.lev_factor)});
        w.row({"stock", s.ticker, "endogeneity", "", csv::fmt(s.endogeneity)});
        w.row({"stock", s.ticker, "endogeneity_max_rule", "",
               csv::fmt(s.endogeneity_max_rule)});
        w.row({"stock", s.ticker, "sigma_inf_sq", "", csv::fmt(s.sigma_inf_sq)});
    }
    w.close();
}

}  // namespace mqarch
