// Python bindings for the core operations: kernel algebra, simulators,
// preprocessing, moment estimation, Yule-Walker calibration, likelihoods.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mqarch/factor.hpp"
#include "mqarch/mle.hpp"
#include "mqarch/model.hpp"
#include "mqarch/moments.hpp"
#include "mqarch/preprocess.hpp"
#include "mqarch/simulate.hpp"
#include "mqarch/yulewalker.hpp"

namespace py = pybind11;
using namespace mqarch;

namespace {

std::vector<double> to_vec(const py::array_t<double>& a) {
    auto r = a.unchecked<1>();
    std::vector<double> v(static_cast<size_t>(r.shape(0)));
    for (py::ssize_t i = 0; i < r.shape(0); ++i) v[static_cast<size_t>(i)] = r(i);
    return v;
}

py::array_t<double> from_vec(const std::vector<double>& v) {
    py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
    auto w = a.mutable_unchecked<1>();
    for (size_t i = 0; i < v.size(); ++i) w(static_cast<py::ssize_t>(i)) = v[i];
    return a;
}

KernelGrid grid_of(const py::array_t<double>& a) { return KernelGrid(to_vec(a)); }

BinnedPanel panel_of(const py::array_t<double>& returns,
                     const py::array_t<double>& sigma2) {
    auto r = returns.unchecked<2>();
    auto s = sigma2.unchecked<2>();
    if (r.shape(0) != s.shape(0) || r.shape(1) != s.shape(1))
        throw Error("returns and sigma2 must share one shape");
    std::vector<std::vector<double>> rr(static_cast<size_t>(r.shape(0))),
        ss(static_cast<size_t>(r.shape(0)));
    for (py::ssize_t a = 0; a < r.shape(0); ++a) {
        rr[static_cast<size_t>(a)].resize(static_cast<size_t>(r.shape(1)));
        ss[static_cast<size_t>(a)].resize(static_cast<size_t>(r.shape(1)));
        for (py::ssize_t t = 0; t < r.shape(1); ++t) {
            rr[static_cast<size_t>(a)][static_cast<size_t>(t)] = r(a, t);
            ss[static_cast<size_t>(a)][static_cast<size_t>(t)] = s(a, t);
        }
    }
    return panel_from_series(rr, ss);
}

py::tuple panel_arrays(const BinnedPanel& p) {
    long total = p.total_bins();
    py::array_t<double> r({static_cast<py::ssize_t>(p.n_assets),
                           static_cast<py::ssize_t>(total)});
    py::array_t<double> s({static_cast<py::ssize_t>(p.n_assets),
                           static_cast<py::ssize_t>(total)});
    auto rw = r.mutable_unchecked<2>();
    auto sw = s.mutable_unchecked<2>();
    long off = 0;
    for (const auto& d : p.days) {
        for (int a = 0; a < p.n_assets; ++a)
            for (int t = 0; t < d.bins(); ++t) {
                rw(a, off + t) = d.r[static_cast<size_t>(a)][static_cast<size_t>(t)];
                sw(a, off + t) = d.s2[static_cast<size_t>(a)][static_cast<size_t>(t)];
            }
        off += d.bins();
    }
    return py::make_tuple(r, s);
}

PointProcessSpec make_pp_spec(int n_assets, const py::dict& kw) {
    PointProcessSpec s;
    s.n_assets = n_assets;
    auto mat = [&](const char* key) {
        std::array<std::array<double, 2>, 2> out{{{0, 0}, {0, 0}}};
        if (!kw.contains(key)) return out;
        auto a = kw[key].cast<py::array_t<double>>().unchecked<2>();
        for (int i = 0; i < n_assets; ++i)
            for (int j = 0; j < n_assets; ++j) out[i][j] = a(i, j);
        return out;
    };
    auto lam = kw["lambda_inf"].cast<py::array_t<double>>().unchecked<1>();
    for (int i = 0; i < n_assets; ++i) s.lambda_inf[static_cast<size_t>(i)] = lam(i);
    auto nh = mat("n_h"), beta = mat("beta"), nz = mat("n_z"), om = mat("omega");
    auto lev = mat("lev_amp"), levr = mat("lev_rate");
    for (int i = 0; i < n_assets; ++i)
        for (int j = 0; j < n_assets; ++j) {
            s.phi[i][j] = {nh[i][j], beta[i][j] > 0 ? beta[i][j] : 1.0,
                           KernelKind::Linear};
            s.zumbach[i][j] = {nz[i][j], om[i][j] > 0 ? om[i][j] : 1.0,
                               KernelKind::Zumbach};
            s.leverage[i][j] = {lev[i][j], levr[i][j] > 0 ? levr[i][j] : 1.0,
                                KernelKind::Leverage};
        }
    return s;
}

}  // namespace

PYBIND11_MODULE(_mqarch, m) {
    m.doc() = "bivariate quadratic volatility-feedback toolkit";

    py::register_exception<Error>(m, "MqarchError");

    // ---- kernels & model ---------------------------------------------------
    m.def(
        "tabulate_exponential",
        [](double norm, double rate, const std::string& kind, int q) {
            KernelKind k = kind == "linear"     ? KernelKind::Linear
                           : kind == "zumbach"  ? KernelKind::Zumbach
                           : kind == "leverage" ? KernelKind::Leverage
                                                : throw Error("unknown kind " + kind);
            return from_vec(ExponentialKernelParams{norm, rate, k}.tabulate(q));
        },
        py::arg("norm"), py::arg("rate"), py::arg("kind"), py::arg("q"));

    m.def("kernel_l1_norm",
          [](const py::array_t<double>& g) { return kernel_l1_norm(grid_of(g)); });
    m.def("kernel_abs_norm",
          [](const py::array_t<double>& g) { return kernel_abs_norm(grid_of(g)); });
    m.def("spectral_radius",
          [](const Eigen::Matrix2d& n) { return spectral_radius(n); });
    m.def("mean_squared_vol",
          [](const Eigen::Matrix2d& n, const Eigen::Vector2d& s) {
              return mean_squared_vol(n, s);
          });

    py::class_<ModelSpec2D>(m, "ModelSpec2D")
        .def(py::init<int, int>(), py::arg("q"), py::arg("n_assets") = 2)
        .def_property_readonly("q", &ModelSpec2D::q)
        .def_readwrite("n_assets", &ModelSpec2D::n_assets)
        .def_property(
            "sigma_inf_sq",
            [](const ModelSpec2D& s) {
                return py::make_tuple(s.sigma_inf_sq[0], s.sigma_inf_sq[1]);
            },
            [](ModelSpec2D& s, const py::sequence& v) {
                s.sigma_inf_sq[0] = v[0].cast<double>();
                if (py::len(v) > 1) s.sigma_inf_sq[1] = v[1].cast<double>();
            })
        .def_readwrite("equal_time_cov", &ModelSpec2D::equal_time_cov)
        .def("phi",
             [](const ModelSpec2D& s, int i, int j) {
                 return from_vec(s.phi(i, j).values);
             })
        .def("set_phi",
             [](ModelSpec2D& s, int i, int j, const py::array_t<double>& v) {
                 s.quad[i][j].diag = grid_of(v);
             })
        .def("rank_one",
             [](const ModelSpec2D& s, int i, int j) {
                 return from_vec(s.quad[i][j].rank_one.values);
             })
        .def("set_rank_one",
             [](ModelSpec2D& s, int i, int j, const py::array_t<double>& v) {
                 s.quad[i][j].rank_one = grid_of(v);
             })
        .def("leverage",
             [](const ModelSpec2D& s, int i, int j) {
                 return from_vec(s.leverage[i][j].values);
             })
        .def("set_leverage",
             [](ModelSpec2D& s, int i, int j, const py::array_t<double>& v) {
                 s.leverage[i][j] = grid_of(v);
             })
        .def("phi_cross",
             [](const ModelSpec2D& s, int i) { return from_vec(s.phi_cross[i].values); })
        .def("set_phi_cross",
             [](ModelSpec2D& s, int i, const py::array_t<double>& v) {
                 s.phi_cross[i] = grid_of(v);
             })
        .def("phi_norms", &ModelSpec2D::phi_norms)
        .def("save", [](const ModelSpec2D& s, const std::string& p) { save_model_csv(s, p); })
        .def_static("load", &load_model_csv);

    m.def("evaluate_sigma2",
          [](const ModelSpec2D& model, const py::array_t<double>& h1,
             const py::array_t<double>& h2, int target) {
              auto v1 = to_vec(h1);
              auto v2 = to_vec(h2);
              return evaluate_sigma2(model, v1, v2, target);
          });

    // ---- simulation ----------------------------------------------------------
    m.def(
        "simulate_mqarch",
        [](const ModelSpec2D& model, long n_bins, std::uint64_t seed) {
            MqarchResult r = simulate_mqarch(model, n_bins, seed);
            py::tuple arrays = panel_arrays(r.panel);
            return py::dict(py::arg("returns") = arrays[0],
                            py::arg("sigma2") = arrays[1],
                            py::arg("floored") = r.floored,
                            py::arg("stationary_warning") = r.stationary_warning);
        },
        py::arg("model"), py::arg("n_bins"), py::arg("seed") = 12345);

    m.def(
        "simulate_thinning",
        [](int n_assets, double horizon, std::uint64_t seed, const py::kwargs& kw) {
            PointProcessSpec s = make_pp_spec(n_assets, kw);
            ThinningResult r = simulate_qhawkes_thinning(s, horizon, seed);
            py::list out;
            for (const auto& st : r.streams) {
                py::array_t<double> times(static_cast<py::ssize_t>(st.times.size()));
                py::array_t<int> marks(static_cast<py::ssize_t>(st.marks.size()));
                auto tw = times.mutable_unchecked<1>();
                auto mw = marks.mutable_unchecked<1>();
                for (size_t e = 0; e < st.times.size(); ++e) {
                    tw(static_cast<py::ssize_t>(e)) = st.times[e];
                    mw(static_cast<py::ssize_t>(e)) = st.marks[e];
                }
                out.append(py::make_tuple(times, marks));
            }
            return out;
        },
        py::arg("n_assets"), py::arg("horizon"), py::arg("seed") = 12345);

    m.def(
        "bin_events",
        [](const py::list& streams, double horizon, double bin_size) {
            std::vector<EventStream> ev;
            for (const auto& item : streams) {
                py::tuple t = item.cast<py::tuple>();
                EventStream s;
                auto times = t[0].cast<py::array_t<double>>().unchecked<1>();
                auto marks = t[1].cast<py::array_t<int>>().unchecked<1>();
                for (py::ssize_t e = 0; e < times.shape(0); ++e) {
                    s.times.push_back(times(e));
                    s.marks.push_back(marks(e));
                }
                s.horizon = horizon;
                ev.push_back(std::move(s));
            }
            return panel_arrays(bin_events(ev, bin_size));
        },
        py::arg("streams"), py::arg("horizon"), py::arg("bin_size") = 1.0);

    // ---- preprocessing ---------------------------------------------------------
    m.def("mirror_augment", [](const py::array_t<double>& r, const py::array_t<double>& s2) {
        return panel_arrays(mirror_augment(panel_of(r, s2)));
    });
    m.def("martingalise", [](const py::array_t<double>& r, const py::array_t<double>& s2) {
        return panel_arrays(martingalise(panel_of(r, s2)));
    });

    // ---- moments -----------------------------------------------------------------
    m.def(
        "estimate_two_point",
        [](const py::array_t<double>& r, const py::array_t<double>& s2,
           const std::string& kind, int i, int j, int max_lag) {
            TwoPointKind k = kind == "C"    ? TwoPointKind::C
                             : kind == "Cr" ? TwoPointKind::Cr
                             : kind == "V"  ? TwoPointKind::V
                             : kind == "Vr" ? TwoPointKind::Vr
                                            : throw Error("unknown kind " + kind);
            return from_vec(estimate_two_point(panel_of(r, s2), k, i, j, max_lag));
        },
        py::arg("returns"), py::arg("sigma2"), py::arg("kind"), py::arg("i"),
        py::arg("j"), py::arg("max_lag"));

    m.def(
        "estimate_three_point",
        [](const py::array_t<double>& r, const py::array_t<double>& s2,
           const std::string& kind, const std::vector<int>& indices, int max_lag) {
            ThreePointKind k = kind == "D"    ? ThreePointKind::D
                               : kind == "Dp" ? ThreePointKind::Dp
                               : kind == "Dx" ? ThreePointKind::Dx
                                              : throw Error("unknown kind " + kind);
            return estimate_three_point(panel_of(r, s2), k, indices, max_lag);
        },
        py::arg("returns"), py::arg("sigma2"), py::arg("kind"), py::arg("indices"),
        py::arg("max_lag"));

    m.def(
        "fit_smooth",
        [](const py::array_t<double>& curve, const std::string& family) {
            SmoothFamily f = family == "exp"            ? SmoothFamily::Exp
                             : family == "powerlaw_exp" ? SmoothFamily::PowerLawExp
                                                        : throw Error("unknown family");
            SmoothFit fit = fit_smooth(to_vec(curve), f);
            return py::dict(py::arg("amp") = fit.amp, py::arg("alpha") = fit.alpha,
                            py::arg("beta") = fit.beta, py::arg("gamma") = fit.gamma,
                            py::arg("sse") = fit.sse);
        },
        py::arg("curve"), py::arg("family"));

    m.def("rank_one_approx", [](const Eigen::MatrixXd& m) {
        RankOneResult r = rank_one_approx(m);
        return py::make_tuple(r.k, r.eig_ratio);
    });

    // ---- calibration matrices & pipeline -------------------------------------------
    m.def("build_A1", [](const py::array_t<double>& up, const py::array_t<double>& down,
                         double sigma, int q) {
        return build_A1(to_vec(up), to_vec(down), sigma, q);
    });
    auto table_arg = [](const Eigen::MatrixXd& t) {
        LagPairTable lt;
        lt.q = (static_cast<int>(t.rows()) + 1) / 2;
        lt.m = t;
        return lt;
    };
    m.def("build_A2", [table_arg](const Eigen::MatrixXd& t, int q) {
        return build_A2(table_arg(t), q);
    });
    m.def("build_A3", [table_arg](const Eigen::MatrixXd& t, int q) {
        return build_A3(table_arg(t), q);
    });
    m.def("build_A4", [table_arg](const Eigen::MatrixXd& t, int q) {
        return build_A4(table_arg(t), q);
    });
    m.def("build_A5", [](const py::array_t<double>& d, int q) {
        return build_A5(to_vec(d), q);
    });

    m.def(
        "calibrate",
        [](const py::array_t<double>& r, const py::array_t<double>& s2, int q,
           int q_cross, const std::vector<int>& steps, bool mirror, double ridge,
           bool include_kx, bool smoothing, int workers) {
            CalibrationOptions opts;
            opts.q = q;
            opts.q_cross = q_cross;
            opts.steps = steps;
            opts.mirror = mirror;
            opts.ridge = ridge;
            opts.include_kx = include_kx;
            opts.smoothing = smoothing;
            opts.workers = workers;
            Calibration c = calibrate_panel(panel_of(r, s2), opts);
            py::list diag;
            for (const auto& d : c.diag)
                diag.append(py::dict(py::arg("step") = d.step, py::arg("cond") = d.cond,
                                     py::arg("residual") = d.residual,
                                     py::arg("warnings") = d.warnings));
            return py::make_tuple(c.model, diag);
        },
        py::arg("returns"), py::arg("sigma2"), py::arg("q") = 50,
        py::arg("q_cross") = 30, py::arg("steps") = std::vector<int>{1, 2, 3, 4},
        py::arg("mirror") = true, py::arg("ridge") = 0.0,
        py::arg("include_kx") = false, py::arg("smoothing") = false,
        py::arg("workers") = 0);

    // ---- likelihoods ------------------------------------------------------------------
    m.def(
        "loglik_binned_proxy",
        [](int n_assets, const py::array_t<double>& r, const py::array_t<double>& s2,
           double dt, const py::kwargs& kw) {
            return loglik_binned_proxy(make_pp_spec(n_assets, kw), panel_of(r, s2), dt);
        },
        py::arg("n_assets"), py::arg("returns"), py::arg("sigma2"), py::arg("dt") = 1.0);

    m.def(
        "maximize_proxy",
        [](int n_assets, const py::array_t<double>& r, const py::array_t<double>& s2,
           const std::string& family, double dt, int max_iterations,
           const py::kwargs& kw) {
            ParamMask mask = family == "linear1d"    ? ParamMask::linear_1d()
                             : family == "zhawkes1d" ? ParamMask::zhawkes_1d()
                             : family == "zhawkes2d" ? ParamMask::zhawkes_2d()
                                                     : throw Error("unknown family");
            MaximizeResult res = maximize_proxy(make_pp_spec(n_assets, kw),
                                                panel_of(r, s2), mask, dt,
                                                max_iterations);
            py::dict out;
            out["loglik"] = res.loglik;
            out["converged"] = res.converged;
            out["iterations"] = res.iterations;
            out["lambda_inf"] = py::make_tuple(res.theta.lambda_inf[0],
                                               res.theta.lambda_inf[1]);
            Eigen::Matrix2d nh, beta, nz, om;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    nh(i, j) = res.theta.phi[i][j].norm;
                    beta(i, j) = res.theta.phi[i][j].rate;
                    nz(i, j) = res.theta.zumbach[i][j].norm;
                    om(i, j) = res.theta.zumbach[i][j].rate;
                }
            out["n_h"] = nh;
            out["beta"] = beta;
            out["n_z"] = nz;
            out["omega"] = om;
            return out;
        },
        py::arg("n_assets"), py::arg("returns"), py::arg("sigma2"),
        py::arg("family") = "zhawkes1d", py::arg("dt") = 1.0,
        py::arg("max_iterations") = 500);

    // ---- factor ----------------------------------------------------------------------------
    m.def("estimate_beta", [](const py::array_t<double>& stock,
                              const py::array_t<double>& factor) {
        return estimate_beta(to_vec(stock), to_vec(factor));
    });
}
