// Command-line front end: simulation, preprocessing, moment estimation,
// Yule-Walker calibration, likelihood refinement, factor pipeline, reports.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "mqarch/csv.hpp"
#include "mqarch/errors.hpp"
#include "mqarch/factor.hpp"
#include "mqarch/mle.hpp"
#include "mqarch/model.hpp"
#include "mqarch/moments.hpp"
#include "mqarch/panel.hpp"
#include "mqarch/preprocess.hpp"
#include "mqarch/simulate.hpp"
#include "mqarch/yulewalker.hpp"

namespace fs = std::filesystem;
using namespace mqarch;

namespace {

struct Staging {
    fs::path out_dir;
    fs::path stage;

    explicit Staging(const std::string& dir) : out_dir(dir) {
        fs::create_directories(out_dir);
        stage = out_dir / (".staging-" + std::to_string(::getpid()));
        fs::create_directories(stage);
    }
    ~Staging() {
        std::error_code ec;
        fs::remove_all(stage, ec);
    }
    std::string path(const std::string& name) const { return (stage / name).string(); }
    void commit() {
        for (const auto& entry : fs::directory_iterator(stage))
            fs::rename(entry.path(), out_dir / entry.path().filename());
    }
};

void write_resolved_config(const Staging& st, const std::string& command,
                           const std::map<std::string, std::string>& kv) {
    std::ofstream out(st.path(command + ".resolved.cfg"));
    out << "config_version=1\n[" << command << "]\n";
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

std::vector<int> parse_steps(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(csv::parse_int(item));
    }
    if (out.empty()) throw ConfigError("empty --steps list");
    return out;
}

void write_profiles_csv(const ModelSpec2D& m, const std::string& path) {
    csv::Writer w(path, {"kernel", "target", "source", "lag", "value"});
    for (int i = 0; i < m.n_assets; ++i) {
        for (int j = 0; j < m.n_assets; ++j)
            for (int tau = 1; tau <= m.q(); ++tau) {
                w.row({"phi", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(tau),
                       csv::fmt(m.phi(i, j).at(tau))});
                w.row({"k", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(tau),
                       csv::fmt(m.quad[i][j].rank_one.at(tau))});
                w.row({"leverage", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(tau),
                       csv::fmt(m.leverage[i][j].at(tau))});
            }
        if (m.n_assets == 2)
            for (int tau = 1; tau <= m.q(); ++tau)
                w.row({"phi_cross", csv::fmt(i + 1), "", csv::fmt(tau),
                       csv::fmt(m.phi_cross[i].at(tau))});
    }
    w.close();
}

void write_norms_csv(const ModelSpec2D& m, const std::string& path) {
    csv::Writer w(path, {"kernel", "target", "source", "l1_signed", "l1_abs"});
    for (int i = 0; i < m.n_assets; ++i) {
        for (int j = 0; j < m.n_assets; ++j) {
            w.row({"phi", csv::fmt(i + 1), csv::fmt(j + 1),
                   csv::fmt(kernel_l1_norm(m.phi(i, j))),
                   csv::fmt(kernel_abs_norm(m.phi(i, j)))});
            KernelGrid k2 = m.quad[i][j].rank_one;
            for (double& v : k2.values) v *= v;
            w.row({"k_sq", csv::fmt(i + 1), csv::fmt(j + 1),
                   csv::fmt(kernel_l1_norm(k2)), csv::fmt(kernel_abs_norm(k2))});
            w.row({"leverage", csv::fmt(i + 1), csv::fmt(j + 1),
                   csv::fmt(kernel_l1_norm(m.leverage[i][j])),
                   csv::fmt(kernel_abs_norm(m.leverage[i][j]))});
        }
        if (m.n_assets == 2)
            w.row({"phi_cross", csv::fmt(i + 1), "",
                   csv::fmt(kernel_l1_norm(m.phi_cross[i])),
                   csv::fmt(kernel_abs_norm(m.phi_cross[i]))});
    }
    Eigen::Matrix2d n = m.phi_norms();
    w.row({"endogeneity", "", "",
           csv::fmt(spectral_radius(n.topLeftCorner(m.n_assets, m.n_assets))), ""});
    w.close();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bivariate quadratic volatility-feedback toolkit"};
    app.set_config("--config")->configurable(false);
    app.allow_config_extras(CLI::config_extras_mode::error);

    std::string out_dir = "out";
    int workers = 0;
    std::uint64_t seed = 12345;
    std::string log_level = "info";
    app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();
    app.add_option("--workers", workers, "worker threads (0 = auto)")
        ->capture_default_str();
    app.add_option("--seed", seed, "random seed")->capture_default_str();
    app.add_option("--log-level", log_level, "quiet|info|debug")
        ->capture_default_str();
    app.require_subcommand(1);

    // --- simulate -----------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "generate synthetic data");
    std::string sim_mode = "mqarch", sim_spec;
    long sim_bins = 100000;
    double sim_horizon = 1e6, sim_bin_size = 1.0;
    sim->add_option("--mode", sim_mode, "mqarch|thinning")->capture_default_str();
    sim->add_option("--spec", sim_spec, "model spec CSV")->required();
    sim->add_option("--bins", sim_bins, "bins to simulate (mqarch)")
        ->capture_default_str();
    sim->add_option("--horizon", sim_horizon, "horizon (thinning)")
        ->capture_default_str();
    sim->add_option("--bin-size", sim_bin_size, "bin size for aggregated output")
        ->capture_default_str();
    bool sim_emit_panel = false;
    sim->add_flag("--emit-panel", sim_emit_panel,
                  "also aggregate thinning events into a panel CSV");

    // --- preprocess ----------------------------------------------------------
    auto* pre = app.add_subcommand("preprocess", "normalize and martingalise");
    std::string pre_input, pre_format = "ohlc";
    int window_days = 100, bin_minutes = 1;
    std::string session_start = "10:00", session_end = "15:00";
    bool pre_trailing = true, pre_intraday = true, pre_martingale = true;
    pre->add_option("--input", pre_input)->required();
    pre->add_option("--format", pre_format, "ohlc|panel")->capture_default_str();
    pre->add_option("--window-days", window_days)->capture_default_str();
    pre->add_option("--session-start", session_start)->capture_default_str();
    pre->add_option("--session-end", session_end)->capture_default_str();
    pre->add_option("--bin-minutes", bin_minutes)->capture_default_str();
    pre->add_flag("--trailing,!--no-trailing", pre_trailing,
                  "trailing 100-day normalization");
    pre->add_flag("--intraday,!--no-intraday", pre_intraday,
                  "intraday profile normalization");
    pre->add_flag("--martingale,!--no-martingale", pre_martingale,
                  "lag-1 martingalisation");

    // --- moments -------------------------------------------------------------
    auto* mom = app.add_subcommand("moments", "estimate covariance structures");
    std::string mom_input;
    int mom_q = 50;
    bool mom_mirror = true, mom_dx = true, mom_lev = false, mom_smooth = false;
    double mom_winsor = 0.0;
    mom->add_option("--input", mom_input)->required();
    mom->add_option("--q", mom_q)->capture_default_str();
    mom->add_flag("--mirror,!--no-mirror", mom_mirror, "mirror augmentation");
    mom->add_flag("--dx,!--no-dx", mom_dx, "cross structures");
    mom->add_flag("--leverage-structures", mom_lev, "V / Vr structures");
    mom->add_flag("--smooth", mom_smooth, "emit smoothing fits");
    mom->add_option("--winsor", mom_winsor, "two-sided winsor quantile")
        ->capture_default_str();

    // --- calibrate -------------------------------------------------------------
    auto* cal = app.add_subcommand("calibrate", "4-step Yule-Walker calibration");
    std::string cal_input, cal_steps = "1,2,3,4";
    int cal_q = 50, cal_q_cross = 30;
    double cal_ridge = 0.0, cal_winsor = 0.0;
    bool cal_mirror = true, cal_kx = false, cal_smooth = false, cal_plot = false;
    bool cal_lev_quad = false;
    cal->add_option("--input", cal_input)->required();
    cal->add_option("--q", cal_q)->capture_default_str();
    cal->add_option("--q-cross", cal_q_cross)->capture_default_str();
    cal->add_option("--ridge", cal_ridge)->capture_default_str();
    cal->add_option("--steps", cal_steps, "comma list out of 1,2,3,4")
        ->capture_default_str();
    cal->add_flag("--mirror,!--no-mirror", cal_mirror, "mirror augmentation");
    cal->add_flag("--kx", cal_kx, "solve the full off-diagonal cross kernel");
    cal->add_flag("--smooth", cal_smooth, "smoothed covariance structures");
    cal->add_flag("--plot-data", cal_plot, "emit kernel profile CSV");
    cal->add_flag("--leverage-quad-corrections", cal_lev_quad,
                  "quadratic correction blocks in the leverage step");
    cal->add_option("--winsor", cal_winsor)->capture_default_str();

    // --- mle-refine ------------------------------------------------------------
    auto* mle = app.add_subcommand("mle-refine", "likelihood refinement");
    std::string mle_mode = "exact", mle_events, mle_panel, mle_init, mle_warm;
    std::string mle_family = "zhawkes1d";
    double mle_dt = 1.0;
    int mle_max_iter = 500;
    mle->add_option("--mode", mle_mode, "exact|proxy")->capture_default_str();
    mle->add_option("--events", mle_events, "events CSV (exact mode)");
    mle->add_option("--panel", mle_panel, "panel CSV (proxy mode)");
    mle->add_option("--init", mle_init, "initial theta CSV");
    mle->add_option("--warm-start", mle_warm, "calibrated model CSV");
    mle->add_option("--family", mle_family, "linear1d|zhawkes1d|zhawkes2d")
        ->capture_default_str();
    mle->add_option("--dt", mle_dt)->capture_default_str();
    mle->add_option("--max-iterations", mle_max_iter)->capture_default_str();

    // --- factor ------------------------------------------------------------------
    auto* fac = app.add_subcommand("factor", "1-factor residual calibration");
    std::string fac_manifest, fac_factor, fac_steps = "1,2,4";
    int fac_q = 50, fac_q_cross = 30;
    double fac_ridge = 0.0;
    fac->add_option("--manifest", fac_manifest, "CSV (ticker,path[,sector])")
        ->required();
    fac->add_option("--factor", fac_factor, "factor panel CSV")->required();
    fac->add_option("--q", fac_q)->capture_default_str();
    fac->add_option("--q-cross", fac_q_cross)->capture_default_str();
    fac->add_option("--ridge", fac_ridge)->capture_default_str();
    fac->add_option("--steps", fac_steps)->capture_default_str();

    // --- report --------------------------------------------------------------------
    auto* rep = app.add_subcommand("report", "profiles and norms of a model CSV");
    std::string rep_model;
    rep->add_option("--model", rep_model)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*sim) {
            Staging st(out_dir);
            std::map<std::string, std::string> cfg{
                {"mode", sim_mode},
                {"spec", sim_spec},
                {"seed", std::to_string(seed)},
            };
            if (sim_mode == "mqarch") {
                ModelSpec2D model = load_model_csv(sim_spec);
                MqarchResult r = simulate_mqarch(model, sim_bins, seed);
                if (r.stationary_warning)
                    std::cerr << "warning: feedback spectral radius >= 1\n";
                save_panel_csv(r.panel, st.path("panel.csv"));
                cfg["bins"] = std::to_string(sim_bins);
                cfg["floored_bins"] = std::to_string(r.floored);
                save_model_csv(model, st.path("spec_echo.csv"));
            } else if (sim_mode == "thinning") {
                PointProcessSpec spec = load_point_process_csv(sim_spec);
                ThinningResult r = simulate_qhawkes_thinning(spec, sim_horizon, seed);
                save_events_csv(r.streams, st.path("events.csv"));
                if (sim_emit_panel)
                    save_panel_csv(bin_events(r.streams, sim_bin_size),
                                   st.path("panel.csv"));
                cfg["horizon"] = csv::fmt(sim_horizon);
                cfg["candidates"] = std::to_string(r.candidates);
                cfg["clamped"] = std::to_string(r.clamped);
                save_point_process_csv(spec, st.path("spec_echo.csv"));
            } else {
                throw ConfigError("unknown simulate mode '" + sim_mode + "'");
            }
            write_resolved_config(st, "simulate", cfg);
            st.commit();
        } else if (*pre) {
            Staging st(out_dir);
            BinnedPanel panel;
            if (pre_format == "ohlc") {
                OhlcPanel ohlc = load_ohlc_csv(pre_input);
                panel = ohlc_to_returns_vol(ohlc, {session_start, session_end});
            } else if (pre_format == "panel") {
                panel = load_panel_csv(pre_input);
            } else {
                throw ConfigError("unknown preprocess format '" + pre_format + "'");
            }
            if (pre_trailing) panel = normalize_trailing(panel, window_days);
            if (pre_intraday) panel = normalize_intraday(panel);
            if (pre_martingale) panel = martingalise(panel);
            save_panel_csv_sigma(panel, st.path("panel.csv"));
            write_resolved_config(
                st, "preprocess",
                {{"input", pre_input},
                 {"format", pre_format},
                 {"window_days", std::to_string(window_days)},
                 {"session_start", session_start},
                 {"session_end", session_end},
                 {"bin_minutes", std::to_string(bin_minutes)},
                 {"trailing", pre_trailing ? "1" : "0"},
                 {"intraday", pre_intraday ? "1" : "0"},
                 {"martingale", pre_martingale ? "1" : "0"}});
            st.commit();
        } else if (*mom) {
            Staging st(out_dir);
            BinnedPanel panel = load_panel_csv(mom_input);
            BinnedPanel used = mom_mirror ? mirror_augment(panel) : panel;
            SuiteRequest req;
            req.q = mom_q;
            req.d_matrices = true;
            req.dx = mom_dx && panel.n_assets == 2;
            req.with_leverage = mom_lev;
            req.workers = workers;
            req.winsor_quantile = mom_winsor;
            CovarianceSuite suite = estimate_suite(used, req);
            if (mom_smooth) {
                SmoothingReport rep_fits;
                suite = smooth_suite(suite, &rep_fits);
                csv::Writer w(st.path("fits.csv"),
                              {"structure", "i", "j", "family", "param_name", "value"});
                for (const auto& [name, i, j, fit] : rep_fits.fits) {
                    const std::string fam =
                        fit.family == SmoothFamily::Exp ? "exp" : "powerlaw_exp";
                    w.row({name, csv::fmt(i + 1), csv::fmt(j + 1), fam, "amp",
                           csv::fmt(fit.amp)});
                    w.row({name, csv::fmt(i + 1), csv::fmt(j + 1), fam, "beta",
                           csv::fmt(fit.beta)});
                    if (fit.family == SmoothFamily::PowerLawExp) {
                        w.row({name, csv::fmt(i + 1), csv::fmt(j + 1), fam, "gamma",
                               csv::fmt(fit.gamma)});
                        w.row({name, csv::fmt(i + 1), csv::fmt(j + 1), fam, "alpha",
                               csv::fmt(fit.alpha)});
                    }
                    w.row({name, csv::fmt(i + 1), csv::fmt(j + 1), fam, "sse",
                           csv::fmt(fit.sse)});
                }
                w.close();
            }
            save_suite_csv(suite, st.path("suite.csv"));
            write_resolved_config(st, "moments",
                                  {{"input", mom_input},
                                   {"q", std::to_string(mom_q)},
                                   {"mirror", mom_mirror ? "1" : "0"},
                                   {"winsor", csv::fmt(mom_winsor)}});
            st.commit();
        } else if (*cal) {
            Staging st(out_dir);
            BinnedPanel panel = load_panel_csv(cal_input);
            CalibrationOptions opts;
            opts.q = cal_q;
            opts.q_cross = cal_q_cross;
            opts.ridge = cal_ridge;
            opts.include_kx = cal_kx;
            opts.smoothing = cal_smooth;
            opts.mirror = cal_mirror;
            opts.steps = parse_steps(cal_steps);
            opts.leverage_quad_corrections = cal_lev_quad;
            opts.workers = workers;
            opts.winsor_quantile = cal_winsor;
            Calibration calib = calibrate_panel(panel, opts);
            save_model_csv(calib.model, st.path("model.csv"));
            save_diagnostics_csv(calib, st.path("diagnostics.csv"));
            {
                BinnedPanel used = cal_mirror ? mirror_augment(panel) : panel;
                SuiteRequest req;
                req.q = cal_q;
                req.dx = panel.n_assets == 2 &&
                         std::count(opts.steps.begin(), opts.steps.end(), 3) > 0;
                req.workers = workers;
                req.winsor_quantile = cal_winsor;
                save_suite_csv(estimate_suite(used, req), st.path("suite.csv"));
            }
            if (cal_plot) write_profiles_csv(calib.model, st.path("kernel_profiles.csv"));
            write_resolved_config(st, "calibrate",
                                  {{"input", cal_input},
                                   {"q", std::to_string(cal_q)},
                                   {"q_cross", std::to_string(cal_q_cross)},
                                   {"ridge", csv::fmt(cal_ridge)},
                                   {"steps", cal_steps},
                                   {"mirror", cal_mirror ? "1" : "0"},
                                   {"kx", cal_kx ? "1" : "0"},
                                   {"smooth", cal_smooth ? "1" : "0"},
                                   {"seed", std::to_string(seed)}});
            st.commit();
        } else if (*mle) {
            Staging st(out_dir);
            ParamMask mask;
            if (mle_family == "linear1d") mask = ParamMask::linear_1d();
            else if (mle_family == "zhawkes1d") mask = ParamMask::zhawkes_1d();
            else if (mle_family == "zhawkes2d") mask = ParamMask::zhawkes_2d();
            else throw ConfigError("unknown family '" + mle_family + "'");

            PointProcessSpec init;
            if (!mle_warm.empty()) {
                init = warm_start_from_grids(load_model_csv(mle_warm), mle_dt);
            } else if (!mle_init.empty()) {
                init = load_point_process_csv(mle_init);
            } else {
                throw ConfigError("mle-refine needs --init or --warm-start");
            }
            if (mle_family == "zhawkes2d") init.n_assets = 2;

            MaximizeResult res;
            if (mle_mode == "exact") {
                if (mle_events.empty()) throw ConfigError("--events required");
                res = maximize_exact(init, load_events_csv(mle_events), mask,
                                     mle_max_iter);
            } else if (mle_mode == "proxy") {
                if (mle_panel.empty()) throw ConfigError("--panel required");
                res = maximize_proxy(init, load_panel_csv(mle_panel), mask, mle_dt,
                                     mle_max_iter);
            } else {
                throw ConfigError("unknown mle mode '" + mle_mode + "'");
            }
            save_theta_csv(res.theta, res, st.path("theta.csv"));
            write_resolved_config(st, "mle-refine",
                                  {{"mode", mle_mode},
                                   {"family", mle_family},
                                   {"dt", csv::fmt(mle_dt)}});
            st.commit();
        } else if (*fac) {
            Staging st(out_dir);
            csv::Table manifest = csv::read(fac_manifest);
            const int c_ticker = manifest.col_required("ticker");
            const int c_path = manifest.col_required("path");
            if (manifest.rows.empty()) throw IoError("empty stock manifest");
            std::vector<BinnedPanel> stocks;
            std::vector<std::string> tickers;
            for (const auto& row : manifest.rows) {
                tickers.push_back(row[static_cast<size_t>(c_ticker)]);
                stocks.push_back(load_panel_csv(row[static_cast<size_t>(c_path)]));
            }
            BinnedPanel factor = load_panel_csv(fac_factor);
            CalibrationOptions opts;
            opts.q = fac_q;
            opts.q_cross = fac_q_cross;
            opts.ridge = fac_ridge;
            opts.steps = parse_steps(fac_steps);
            opts.workers = workers;
            FactorModelResult res = calibrate_factor_model(stocks, tickers, factor, opts);
            save_model_csv(res.factor_calib.model, st.path("factor_model.csv"));
            for (const auto& s : res.stocks)
                save_model_csv(s.calib.model, st.path("stock_" + s.ticker + ".csv"));
            save_summary_csv(cross_section_aggregate(res), st.path("summary.csv"));
            write_resolved_config(st, "factor",
                                  {{"manifest", fac_manifest},
                                   {"factor", fac_factor},
                                   {"q", std::to_string(fac_q)},
                                   {"steps", fac_steps}});
            st.commit();
        } else if (*rep) {
            Staging st(out_dir);
            ModelSpec2D model = load_model_csv(rep_model);
            write_profiles_csv(model, st.path("kernel_profiles.csv"));
            write_norms_csv(model, st.path("norms.csv"));
            write_resolved_config(st, "report", {{"model", rep_model}});
            st.commit();
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ContractViolationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const InvalidBarError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const InsufficientBinsError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const LengthMismatchError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
