#include "mqarch/yulewalker.hpp"

#include <chrono>
#include <cmath>

#include "mqarch/csv.hpp"
#include "mqarch/errors.hpp"
#include "mqarch/preprocess.hpp"

namespace mqarch {

std::string to_string(CalibStep s) {
    switch (s) {
        case CalibStep::Self1D: return "self_1d";
        case CalibStep::CrossLinQuad: return "cross_lin_quad";
        case CalibStep::CrossCovariance: return "cross_covariance";
        case CalibStep::Leverage: return "leverage";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

Eigen::MatrixXd build_A1(const std::vector<double>& d_up,
                         const std::vector<double>& d_down, double sigma, int q) {
    if (static_cast<int>(d_up.size()) < q - 1 ||
        static_cast<int>(d_down.size()) < q - 1)
        throw LengthMismatchError("build_A1 needs lag vectors of length >= q-1");
    Eigen::MatrixXd a(q, q);
    for (int tau = 1; tau <= q; ++tau)
        for (int k = 1; k <= q; ++k) {
            if (tau == k)
                a(tau - 1, k - 1) = sigma;
            else if (tau > k)
                a(tau - 1, k - 1) = d_down[static_cast<size_t>(tau - k - 1)];
            else
                a(tau - 1, k - 1) = d_up[static_cast<size_t>(k - tau - 1)];
        }
    return a;
}

Eigen::MatrixXd build_A2(const LagPairTable& dp, int q) {
    if (dp.q < q) throw LengthMismatchError("build_A2 table smaller than q");
    Eigen::MatrixXd a(q, upper_tri_size(q));
    for (int tau = 1; tau <= q; ++tau)
        for (int k1 = 1; k1 <= q; ++k1)
            for (int k2 = k1 + 1; k2 <= q; ++k2)
                a(tau - 1, upper_tri_index(k1, k2, q)) =
                    2.0 * dp.at(k1 - tau, k2 - tau);
    return a;
}

Eigen::MatrixXd build_A3(const LagPairTable& dp, int q) {
    return build_A2(dp, q).transpose() / 2.0;
}

Eigen::MatrixXd build_A4(const LagPairTable& dp, int q) {
    if (dp.q < q) throw LengthMismatchError("build_A4 table smaller than q");
    const int ut = upper_tri_size(q);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(ut, ut);
    for (int t1 = 1; t1 <= q; ++t1)
        for (int t2 = t1 + 1; t2 <= q; ++t2) {
            const int row = upper_tri_index(t1, t2, q);
            for (int k2 = t1 + 1; k2 <= q; ++k2)
                a(row, upper_tri_index(t1, k2, q)) = 2.0 * dp.at(k2 - t1, t2 - t1);
        }
    return a;
}

Eigen::MatrixXd build_A5(const std::vector<double>& d, int q) {
    if (static_cast<int>(d.size()) < q - 1)
        throw LengthMismatchError("build_A5 needs a lag vector of length >= q-1");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, upper_tri_size(q));
    for (int tau = 1; tau <= q; ++tau)
        for (int k2 = tau + 1; k2 <= q; ++k2)
            a(tau - 1, upper_tri_index(tau, k2, q)) = d[static_cast<size_t>(k2 - tau - 1)];
    return a;
}

// ---------------------------------------------------------------------------
// suite-backed block assembly
// ---------------------------------------------------------------------------

namespace {

LagPairTable table_of(const CovarianceSuite& s, int a, int b, int k, int l,
                      double shift = 0.0) {
    LagPairTable t(s.q);
    for (int s1 = -(s.q - 1); s1 <= s.q - 1; ++s1)
        for (int s2 = -(s.q - 1); s2 <= s.q - 1; ++s2)
            t.at(s1, s2) = s.dp(a, b, k, l, s1, s2) - shift;
    return t;
}

/// Coefficients of phi^j_i(k) in the C_{j,l}(tau) rows.
Eigen::MatrixXd a1_block(const CovarianceSuite& s, int i, int l) {
    const int q = s.q;
    std::vector<double> up(static_cast<size_t>(q - 1)), down(static_cast<size_t>(q - 1));
    for (int m = 1; m < q; ++m) {
        up[static_cast<size_t>(m - 1)] = s.Cr[l][i][static_cast<size_t>(m)];
        down[static_cast<size_t>(m - 1)] = s.Cr[i][l][static_cast<size_t>(m)];
    }
    return build_A1(up, down, s.Cr[i][l][0], q);
}

/// Stacked [[A1 A2],[A3 A4]] for row flavor l and unknown source i of one
/// target; shared by steps 1 and 2.
Eigen::MatrixXd quad_block(const CovarianceSuite& s, int l, int i) {
    const int q = s.q;
    const int ut = upper_tri_size(q);
    Eigen::MatrixXd out(q + ut, q + ut);
    out.topLeftCorner(q, q) = a1_block(s, i, l);
    out.topRightCorner(q, ut) = build_A2(table_of(s, l, l, i, i), q);
    out.bottomLeftCorner(ut, q) = build_A3(table_of(s, i, i, l, l), q);
    out.bottomRightCorner(ut, ut) = build_A4(table_of(s, i, l, i, l), q);
    return out;
}

Eigen::VectorXd rhs_rows(const CovarianceSuite& s, int j, int l) {
    const int q = s.q;
    const int ut = upper_tri_size(q);
    Eigen::VectorXd b(q + ut);
    for (int tau = 1; tau <= q; ++tau) b(tau - 1) = s.C[j][l][static_cast<size_t>(tau)];
    for (int t1 = 1; t1 <= q; ++t1)
        for (int t2 = t1 + 1; t2 <= q; ++t2)
            b(q + upper_tri_index(t1, t2, q)) = s.D[j][l](t1 - 1, t2 - 1);
    return b;
}

/// Coefficients of phi^j_i(k) in the Dx_j(tau,tau) rows (time-diagonal
/// product moments, signed-lag extension on the upper triangle).
Eigen::MatrixXd a1dx_block(const CovarianceSuite& s, int j, int i) {
    const int q = s.q;
    const int ib = 1 - j;
    std::vector<double> up(static_cast<size_t>(q - 1)), down(static_cast<size_t>(q - 1));
    for (int m = 1; m < q; ++m) {
        up[static_cast<size_t>(m - 1)] = s.dp(i, i, j, ib, -m, -m);
        down[static_cast<size_t>(m - 1)] = s.dp(i, i, j, ib, m, m);
    }
    return build_A1(up, down, s.dp(i, i, j, ib, 0, 0), q);
}

struct LsSolver {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
    double ridge = 0.0;
    long rows = 0;
    long cols = 0;
    double cond = 0.0;

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
        if (ridge > 0.0) {
            Eigen::VectorXd bb = Eigen::VectorXd::Zero(rows + cols);
            bb.head(rows) = b;
            return qr.solve(bb);
        }
        return qr.solve(b);
    }
};

LsSolver make_solver(const Eigen::MatrixXd& a, const SolveOptions& opts) {
    LsSolver s;
    s.ridge = opts.ridge;
    s.rows = a.rows();
    s.cols = a.cols();
    if (opts.ridge > 0.0) {
        Eigen::MatrixXd m(a.rows() + a.cols(), a.cols());
        m.topRows(a.rows()) = a;
        m.bottomRows(a.cols()) =
            std::sqrt(opts.ridge) * Eigen::MatrixXd::Identity(a.cols(), a.cols());
        s.qr.compute(m);
    } else {
        s.qr.compute(a);
    }
    const auto& r = s.qr.matrixR();
    const int n = static_cast<int>(std::min(r.rows(), r.cols()));
    double rmax = 0.0, rmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const double v = std::abs(r(i, i));
        rmax = std::max(rmax, v);
        rmin = std::min(rmin, v);
    }
    s.cond = rmin > 0.0 ? rmax / rmin : std::numeric_limits<double>::infinity();
    if (s.cond > opts.cond_limit && opts.ridge == 0.0)
        throw SingularSystemError("Yule-Walker system condition estimate " +
                                  std::to_string(s.cond));
    return s;
}

void write_quad(ModelSpec2D& model, int j, int i, const Eigen::VectorXd& x) {
    const int q = model.q();
    for (int k = 1; k <= q; ++k) model.quad[j][i].diag.at(k) = x(k - 1);
    std::vector<double> upper(static_cast<size_t>(upper_tri_size(q)));
    Eigen::MatrixXd off = Eigen::MatrixXd::Zero(q, q);
    for (int t1 = 1; t1 <= q; ++t1)
        for (int t2 = t1 + 1; t2 <= q; ++t2) {
            const double v = x(q + upper_tri_index(t1, t2, q));
            upper[static_cast<size_t>(upper_tri_index(t1, t2, q))] = v;
            off(t1 - 1, t2 - 1) = v;
            off(t2 - 1, t1 - 1) = v;
        }
    model.quad[j][i].full_upper = std::move(upper);
    RankOneResult r1 = rank_one_approx(off);
    for (int k = 1; k <= q; ++k) model.quad[j][i].rank_one.at(k) = r1.k(k - 1);
}

Eigen::VectorXd quad_vector(const ModelSpec2D& model, int j, int i) {
    const int q = model.q();
    Eigen::VectorXd x(q + upper_tri_size(q));
    for (int k = 1; k <= q; ++k) x(k - 1) = model.quad[j][i].diag.at(k);
    for (int t1 = 1; t1 <= q; ++t1)
        for (int t2 = t1 + 1; t2 <= q; ++t2)
            x(q + upper_tri_index(t1, t2, q)) = model.quad[j][i].off_diag(t1, t2);
    return x;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

void step_self_1d(const CovarianceSuite& suite, Calibration& state,
                  const SolveOptions& opts) {
    for (int j = 0; j < suite.n_assets; ++j) {
        Timer timer;
        Eigen::MatrixXd a = quad_block(suite, j, j);
        Eigen::VectorXd b = rhs_rows(suite, j, j);
        LsSolver solver = make_solver(a, opts);
        Eigen::VectorXd x = solver.solve(b);
        write_quad(state.model, j, j, x);
        state.self_done[j] = true;

        StepDiag d;
        d.step = "self_1d_asset" + std::to_string(j + 1);
        d.cond = solver.cond;
        d.residual = (a * x - b).norm();
        d.iterations = 1;
        d.seconds = timer.seconds();
        state.diag.push_back(std::move(d));
    }
}

void cross_target_body(const CovarianceSuite& suite, Calibration& state, int j,
                       const SolveOptions& opts) {
    Timer timer;
    const int ib = 1 - j;
    const long n = suite.q + upper_tri_size(suite.q);
    Eigen::MatrixXd a_ss = quad_block(suite, j, j);
    Eigen::MatrixXd a_sc = quad_block(suite, j, ib);
    Eigen::MatrixXd a_cs = quad_block(suite, ib, j);
    Eigen::MatrixXd a_cc = quad_block(suite, ib, ib);
    Eigen::VectorXd b_s = rhs_rows(suite, j, j);
    Eigen::VectorXd b_c = rhs_rows(suite, j, ib);

    // Moving the self prior to the right-hand side and alternating with a
    // self refresh converges to the joint solution of the stacked target
    // system; that fixed point is computed directly here.
    Eigen::MatrixXd joint(2 * n, 2 * n);
    joint.topLeftCorner(n, n) = a_ss;
    joint.topRightCorner(n, n) = a_sc;
    joint.bottomLeftCorner(n, n) = a_cs;
    joint.bottomRightCorner(n, n) = a_cc;
    Eigen::VectorXd rhs(2 * n);
    rhs << b_s, b_c;

    LsSolver solver = make_solver(joint, opts);
    Eigen::VectorXd x = solver.solve(rhs);
    Eigen::VectorXd x_s = x.head(n);
    Eigen::VectorXd x_c = x.tail(n);
    write_quad(state.model, j, j, x_s);
    write_quad(state.model, j, ib, x_c);

    StepDiag d;
    d.step = "cross_lin_quad_target" + std::to_string(j + 1);
    d.cond = solver.cond;
    d.residual = (joint * x - rhs).norm();
    d.iterations = 1;
    d.seconds = timer.seconds();
    state.diag.push_back(std::move(d));
}

void step_cross_lin_quad(const CovarianceSuite& suite, Calibration& state,
                         const SolveOptions& opts) {
    if (suite.n_assets != 2)
        throw ContractViolationError("cross step needs a 2-asset suite");
    if (!state.self_done[0] || !state.self_done[1])
        throw ContractViolationError("cross step before self kernels");
    for (int j = 0; j < 2; ++j) cross_target_body(suite, state, j, opts);
    state.cross_done = true;
}

void step_cross_covariance(const CovarianceSuite& suite, Calibration& state,
                           const SolveOptions& opts) {
    if (suite.n_assets != 2)
        throw ContractViolationError("cross-covariance step needs a 2-asset suite");
    if (!state.cross_done)
        throw ContractViolationError(
            "cross-covariance step before steps 1-2 priors");

    const int q = suite.q;
    const int ut = upper_tri_size(q);
    const int qx = std::min(opts.q_cross, q);

    for (int j = 0; j < 2; ++j) {
        Timer timer;
        const int ib = 1 - j;
        const double cbar = suite.mean_cross;
        const double constant = state.model.sigma_inf_sq[static_cast<size_t>(j)] * cbar;

        // time-diagonal rows
        Eigen::VectorXd rhs_diag(q);
        for (int tau = 1; tau <= q; ++tau)
            rhs_diag(tau - 1) = suite.Dx[j](tau - 1, tau - 1) - constant;
        for (int i = 0; i < 2; ++i) {
            Eigen::VectorXd phi_i(q);
            for (int k = 1; k <= q; ++k) phi_i(k - 1) = state.model.phi(j, i).at(k);
            rhs_diag -= a1dx_block(suite, j, i) * phi_i;
            Eigen::VectorXd kvec(ut);
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = t1 + 1; t2 <= q; ++t2)
                    kvec(upper_tri_index(t1, t2, q)) =
                        state.model.quad[j][i].off_diag(t1, t2);
            rhs_diag -= build_A2(table_of(suite, j, ib, i, i), q) * kvec;
        }
        std::vector<double> p_up(static_cast<size_t>(q - 1)),
            p_down(static_cast<size_t>(q - 1));
        for (int m = 1; m < q; ++m) {
            p_up[static_cast<size_t>(m - 1)] =
                suite.dp(j, ib, j, ib, -m, -m) - cbar * cbar;
            p_down[static_cast<size_t>(m - 1)] =
                suite.dp(j, ib, j, ib, m, m) - cbar * cbar;
        }
        Eigen::MatrixXd a1x =
            build_A1(p_up, p_down, suite.dp(j, ib, j, ib, 0, 0) - cbar * cbar, q);

        Eigen::MatrixXd design;
        Eigen::VectorXd rhs;
        if (!opts.include_kx) {
            design = a1x.leftCols(qx);
            rhs = rhs_diag;
        } else {
            // off-diagonal rows: upper pairs then lower pairs
            Eigen::VectorXd rhs_up(ut), rhs_lo(ut);
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = t1 + 1; t2 <= q; ++t2) {
                    rhs_up(upper_tri_index(t1, t2, q)) =
                        suite.Dx[j](t1 - 1, t2 - 1) - constant;
                    rhs_lo(upper_tri_index(t1, t2, q)) =
                        suite.Dx[j](t2 - 1, t1 - 1) - constant;
                }
            for (int i = 0; i < 2; ++i) {
                Eigen::VectorXd phi_i(q);
                for (int k = 1; k <= q; ++k) phi_i(k - 1) = state.model.phi(j, i).at(k);
                Eigen::VectorXd kvec(ut);
                for (int t1 = 1; t1 <= q; ++t1)
                    for (int t2 = t1 + 1; t2 <= q; ++t2)
                        kvec(upper_tri_index(t1, t2, q)) =
                            state.model.quad[j][i].off_diag(t1, t2);
                rhs_up -= build_A3(table_of(suite, i, i, j, ib), q) * phi_i;
                rhs_lo -= build_A3(table_of(suite, i, i, ib, j), q) * phi_i;
                rhs_up -= build_A4(table_of(suite, i, j, i, ib), q) * kvec;
                rhs_lo -= build_A4(table_of(suite, i, ib, i, j), q) * kvec;
            }
            LagPairTable pt = table_of(suite, j, ib, j, ib, cbar * cbar);
            LagPairTable pt_swap = table_of(suite, j, ib, ib, j, cbar * cbar);

            design = Eigen::MatrixXd::Zero(q + 2 * ut, qx + 2 * ut);
            design.topLeftCorner(q, qx) = a1x.leftCols(qx);
            design.block(0, qx, q, ut) =
                build_A2(table_of(suite, j, ib, j, ib), q) / 2.0;
            design.block(0, qx + ut, q, ut) =
                build_A2(table_of(suite, j, ib, ib, j), q) / 2.0;
            design.block(q, 0, ut, qx) = build_A3(pt, q).leftCols(qx);
            design.block(q, qx, ut, ut) =
                build_A4(table_of(suite, j, j, ib, ib), q) / 2.0;
            design.block(q, qx + ut, ut, ut) =
                build_A4(table_of(suite, j, ib, ib, j), q) / 2.0;
            design.block(q + ut, 0, ut, qx) = build_A3(pt_swap, q).leftCols(qx);
            design.block(q + ut, qx, ut, ut) =
                build_A4(table_of(suite, j, ib, j, ib), q) / 2.0;
            design.block(q + ut, qx + ut, ut, ut) =
                build_A4(table_of(suite, ib, ib, j, j), q) / 2.0;

            rhs.resize(q + 2 * ut);
            rhs << rhs_diag, rhs_up, rhs_lo;
        }

        LsSolver solver = make_solver(design, opts);
        Eigen::VectorXd x = solver.solve(rhs);

        for (int k = 1; k <= q; ++k)
            state.model.phi_cross[j].at(k) = k <= qx ? x(k - 1) : 0.0;
        if (opts.include_kx) {
            Eigen::MatrixXd kx = Eigen::MatrixXd::Zero(q, q);
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = t1 + 1; t2 <= q; ++t2) {
                    kx(t1 - 1, t2 - 1) = x(qx + upper_tri_index(t1, t2, q));
                    kx(t2 - 1, t1 - 1) = x(qx + ut + upper_tri_index(t1, t2, q));
                }
            state.model.k_cross[j] = std::move(kx);
        }

        StepDiag d;
        d.step = "cross_covariance_target" + std::to_string(j + 1);
        d.cond = solver.cond;
        d.residual = (design * x - rhs).norm();
        d.iterations = 1;
        d.seconds = timer.seconds();
        state.diag.push_back(std::move(d));
    }
    state.cross_cov_done = true;
}

}  // namespace

YWBlockSystem build_block_system(const CovarianceSuite& suite, CalibStep step,
                                 int target, const ModelSpec2D& prior,
                                 const SolveOptions& opts) {
    const int q = suite.q;
    const int ut = upper_tri_size(q);
    YWBlockSystem sys;
    sys.step = step;
    const int j = target;

    auto quad_layout = [&](int src) {
        for (int k = 1; k <= q; ++k)
            sys.unknown_layout.push_back({"phi", j, src, k, 0});
        for (int t1 = 1; t1 <= q; ++t1)
            for (int t2 = t1 + 1; t2 <= q; ++t2)
                sys.unknown_layout.push_back({"K", j, src, t1, t2});
    };

    switch (step) {
        case CalibStep::Self1D: {
            sys.design = quad_block(suite, j, j);
            sys.rhs = rhs_rows(suite, j, j);
            quad_layout(j);
            break;
        }
        case CalibStep::CrossLinQuad: {
            const int ib = 1 - j;
            sys.design = quad_block(suite, ib, ib);
            Eigen::VectorXd x_s = quad_vector(prior, j, j);
            sys.rhs = rhs_rows(suite, j, ib) - quad_block(suite, ib, j) * x_s;
            quad_layout(ib);
            break;
        }
        case CalibStep::CrossCovariance: {
            const int ib = 1 - j;
            const int qx = std::min(opts.q_cross, q);
            const double cbar = suite.mean_cross;
            Eigen::VectorXd rhs(q);
            for (int tau = 1; tau <= q; ++tau)
                rhs(tau - 1) = suite.Dx[j](tau - 1, tau - 1) -
                               prior.sigma_inf_sq[static_cast<size_t>(j)] * cbar;
            for (int i = 0; i < 2; ++i) {
                Eigen::VectorXd phi_i(q);
                for (int k = 1; k <= q; ++k) phi_i(k - 1) = prior.phi(j, i).at(k);
                rhs -= a1dx_block(suite, j, i) * phi_i;
                Eigen::VectorXd kvec(ut);
                for (int t1 = 1; t1 <= q; ++t1)
                    for (int t2 = t1 + 1; t2 <= q; ++t2)
                        kvec(upper_tri_index(t1, t2, q)) =
                            prior.quad[j][i].off_diag(t1, t2);
                rhs -= build_A2(table_of(suite, j, ib, i, i), q) * kvec;
            }
            std::vector<double> p_up(static_cast<size_t>(q - 1)),
                p_down(static_cast<size_t>(q - 1));
            for (int m = 1; m < q; ++m) {
                p_up[static_cast<size_t>(m - 1)] =
                    suite.dp(j, ib, j, ib, -m, -m) - cbar * cbar;
                p_down[static_cast<size_t>(m - 1)] =
                    suite.dp(j, ib, j, ib, m, m) - cbar * cbar;
            }
            sys.design = build_A1(p_up, p_down,
                                  suite.dp(j, ib, j, ib, 0, 0) - cbar * cbar, q)
                             .leftCols(qx);
            sys.rhs = rhs;
            for (int k = 1; k <= qx; ++k)
                sys.unknown_layout.push_back({"phi_cross", j, -1, k, 0});
            break;
        }
        case CalibStep::Leverage:
            throw ContractViolationError(
                "leverage systems are built by solve_leverage");
    }
    return sys;
}

void solve_cross_for_target(const CovarianceSuite& suite, Calibration& state,
                            int target, const SolveOptions& opts) {
    if (suite.n_assets != 2)
        throw ContractViolationError("cross step needs a 2-asset suite");
    if (!state.self_done[0] || !state.self_done[1])
        throw ContractViolationError("cross step before self kernels");
    cross_target_body(suite, state, target, opts);
}

void assemble_and_solve(const CovarianceSuite& suite, CalibStep step,
                        Calibration& state, const SolveOptions& opts) {
    if (state.model.q() != suite.q)
        throw LengthMismatchError("state model q differs from suite q");
    switch (step) {
        case CalibStep::Self1D:
            step_self_1d(suite, state, opts);
            return;
        case CalibStep::CrossLinQuad:
            step_cross_lin_quad(suite, state, opts);
            return;
        case CalibStep::CrossCovariance:
            step_cross_covariance(suite, state, opts);
            return;
        case CalibStep::Leverage:
            throw ContractViolationError("use solve_leverage for step 4");
    }
}

void recover_baselines(const CovarianceSuite& suite, Calibration& state) {
    const int n = suite.n_assets;
    Eigen::Matrix2d nmat = state.model.phi_norms();
    Eigen::Vector2d mbar(suite.mean_sigma2[0], suite.mean_sigma2[1]);
    StepDiag d;
    d.step = "baselines";
    if (spectral_radius(nmat.topLeftCorner(n, n)) >= 1.0)
        d.warnings.push_back("non-stationary solution: phi-norm spectral radius >= 1");
    for (int i = 0; i < n; ++i) {
        double v = mbar(i);
        for (int j = 0; j < n; ++j) v -= nmat(i, j) * mbar(j);
        if (v < 0.0) {
            d.warnings.push_back("baseline clamped at zero for asset " +
                                 std::to_string(i + 1));
            v = 0.0;
        }
        state.model.sigma_inf_sq[static_cast<size_t>(i)] = v;
        d.extra["sigma_inf_sq_" + std::to_string(i + 1)] = v;
    }
    state.model.equal_time_cov = suite.mean_cross;
    state.diag.push_back(std::move(d));
}

void solve_leverage(const CovarianceSuite& suite_original, Calibration& state,
                    const SolveOptions& opts) {
    const CovarianceSuite& s = suite_original;
    const int n = s.n_assets;
    const int q = s.q;
    if (!state.self_done[0] || (n == 2 && !state.cross_done))
        throw ContractViolationError("leverage step before steps 1-2 priors");
    if (state.model.q() != q)
        throw LengthMismatchError("state model q differs from suite q");

    Timer timer;
    const int ql = std::min(opts.q_cross, q);
    std::vector<double> zero(static_cast<size_t>(q - 1), 0.0);

    // corrected leverage correlations Vt[j][l]
    Eigen::MatrixXd vt[2];
    for (int j = 0; j < n; ++j) {
        vt[j].resize(q, n);
        for (int l = 0; l < n; ++l) {
            Eigen::VectorXd col(q);
            for (int tau = 1; tau <= q; ++tau)
                col(tau - 1) = s.V[j][l][static_cast<size_t>(tau)];
            for (int i = 0; i < n; ++i) {
                std::vector<double> vr(static_cast<size_t>(q - 1));
                for (int m = 1; m < q; ++m)
                    vr[static_cast<size_t>(m - 1)] = s.Vr[i][l][static_cast<size_t>(m)];
                Eigen::MatrixXd a1l = build_A1(zero, vr, s.Vr[i][l][0], q);
                Eigen::VectorXd phi_i(q);
                for (int k = 1; k <= q; ++k) phi_i(k - 1) = state.model.phi(j, i).at(k);
                col -= a1l * phi_i;
                if (opts.leverage_quad_corrections) {
                    const auto& v5 = s.vrp(i, l, i);
                    std::vector<double> v5l(v5.begin() + 1, v5.end());
                    Eigen::VectorXd kvec(upper_tri_size(q));
                    for (int t1 = 1; t1 <= q; ++t1)
                        for (int t2 = t1 + 1; t2 <= q; ++t2)
                            kvec(upper_tri_index(t1, t2, q)) =
                                state.model.quad[j][i].off_diag(t1, t2);
                    col -= 2.0 * (build_A5(v5l, q) * kvec);
                }
            }
            if (n == 2) {
                const auto& vx = s.vrp(0, 1, l);
                std::vector<double> vxl(vx.begin() + 1, vx.end());
                Eigen::MatrixXd a1xl = build_A1(zero, vxl, 0.0, q);
                Eigen::VectorXd px(q);
                for (int k = 1; k <= q; ++k) px(k - 1) = state.model.phi_cross[j].at(k);
                col -= a1xl * px;
                if (opts.leverage_quad_corrections && state.model.k_cross[j]) {
                    const int ib = 1 - j;
                    const Eigen::MatrixXd& kx = *state.model.k_cross[j];
                    Eigen::VectorXd up(upper_tri_size(q)), lo(upper_tri_size(q));
                    for (int t1 = 1; t1 <= q; ++t1)
                        for (int t2 = t1 + 1; t2 <= q; ++t2) {
                            up(upper_tri_index(t1, t2, q)) = kx(t1 - 1, t2 - 1);
                            lo(upper_tri_index(t1, t2, q)) = kx(t2 - 1, t1 - 1);
                        }
                    const auto& vjl = s.vrp(j, l, ib);
                    const auto& vbl = s.vrp(ib, l, j);
                    std::vector<double> vjl1(vjl.begin() + 1, vjl.end());
                    std::vector<double> vbl1(vbl.begin() + 1, vbl.end());
                    col -= build_A5(vjl1, q) * up;
                    col -= build_A5(vbl1, q) * lo;
                }
            }
            vt[j].col(l) = col;
        }
    }

    // per-lag block solve against the equal-time return covariance
    Eigen::MatrixXd m(n, n);
    m(0, 0) = s.mean_r2[0];
    if (n == 2) {
        m(1, 1) = s.mean_r2[1];
        m(0, 1) = m(1, 0) = s.mean_cross;
    }
    const double det = m.determinant();
    if (std::abs(det) < 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
        throw SingularCorrelationError("equal-time return covariance block singular");
    Eigen::MatrixXd minv = m.inverse();

    for (int j = 0; j < n; ++j) {
        for (int tau = 1; tau <= q; ++tau) {
            if (tau <= ql) {
                Eigen::VectorXd row = minv * vt[j].row(tau - 1).transpose();
                for (int i = 0; i < n; ++i)
                    state.model.leverage[j][i].at(tau) = row(i);
            } else {
                for (int i = 0; i < n; ++i) state.model.leverage[j][i].at(tau) = 0.0;
            }
        }
    }
    state.leverage_done = true;

    StepDiag d;
    d.step = "leverage";
    d.cond = std::abs(m.cwiseAbs().maxCoeff() / det);
    d.iterations = 1;
    d.seconds = timer.seconds();
    state.diag.push_back(std::move(d));
}

Calibration calibrate_panel(const BinnedPanel& panel, const CalibrationOptions& opts,
                            SmoothingReport* smoothing_report) {
    panel.check_rectangular();
    const int n = panel.n_assets;

    auto has = [&](int step) {
        for (int s : opts.steps)
            if (s == step) return true;
        return false;
    };
    for (int s : opts.steps)
        if (s < 1 || s > 4) throw ConfigError("steps must be within 1..4");
    if (n == 1) {
        if (has(2) || has(3))
            throw ConfigError("steps 2-3 need a 2-asset panel");
        if (has(4) && !has(1))
            throw ContractViolationError("leverage step requested before step 1");
    } else {
        for (int s : opts.steps)
            for (int r = 1; r < s; ++r)
                if (!has(r))
                    throw ContractViolationError("step " + std::to_string(s) +
                                                 " requested before step " +
                                                 std::to_string(r));
    }
    if (!has(1)) throw ConfigError("nothing to calibrate without step 1");

    BinnedPanel sym = opts.mirror ? mirror_augment(panel) : panel;

    SuiteRequest req;
    req.q = opts.q;
    req.d_matrices = true;
    req.dx = n == 2 && has(3);
    req.with_leverage = false;
    req.workers = opts.workers;
    req.winsor_quantile = opts.winsor_quantile;
    CovarianceSuite suite = estimate_suite(sym, req);
    if (opts.smoothing) suite = smooth_suite(suite, smoothing_report);

    SolveOptions so;
    so.ridge = opts.ridge;
    so.q_cross = opts.q_cross;
    so.include_kx = opts.include_kx;
    so.leverage_quad_corrections = opts.leverage_quad_corrections;

    Calibration state;
    state.model = ModelSpec2D(opts.q, n);

    assemble_and_solve(suite, CalibStep::Self1D, state, so);
    if (n == 2 && has(2)) assemble_and_solve(suite, CalibStep::CrossLinQuad, state, so);
    recover_baselines(suite, state);
    if (n == 2 && has(3)) assemble_and_solve(suite, CalibStep::CrossCovariance, state, so);
    if (has(4)) {
        SuiteRequest lreq;
        lreq.q = opts.q;
        lreq.d_matrices = false;
        lreq.dx = false;
        lreq.with_leverage = true;
        lreq.workers = opts.workers;
        lreq.winsor_quantile = opts.winsor_quantile;
        CovarianceSuite orig = estimate_suite(panel, lreq);
        solve_leverage(orig, state, so);
    }
    return state;
}

void save_diagnostics_csv(const Calibration& calib, const std::string& path) {
    csv::Writer w(path, {"step", "key", "value"});
    for (const auto& d : calib.diag) {
        w.row({d.step, "cond", csv::fmt(d.cond)});
        w.row({d.step, "residual", csv::fmt(d.residual)});
        w.row({d.step, "iterations", csv::fmt(d.iterations)});
        w.row({d.step, "seconds", csv::fmt(d.seconds)});
        for (const auto& [k, v] : d.extra) w.row({d.step, k, csv::fmt(v)});
        for (const auto& warn : d.warnings) w.row({d.step, "warning", warn});
    }
    w.close();
}

void save_suite_csv(const CovarianceSuite& suite, const std::string& path) {
    csv::Writer w(path, {"structure", "i", "j", "tau1", "tau2", "value"});
    const int q = suite.q;
    auto two_point = [&](const char* name, const auto& arr) {
        for (int i = 0; i < suite.n_assets; ++i)
            for (int j = 0; j < suite.n_assets; ++j) {
                if (arr[i][j].empty()) continue;
                for (int tau = 0; tau <= q; ++tau)
                    w.row({name, csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(tau), "",
                           csv::fmt(arr[i][j][static_cast<size_t>(tau)])});
            }
    };
    two_point("C", suite.C);
    two_point("Cr", suite.Cr);
    two_point("V", suite.V);
    two_point("Vr", suite.Vr);
    for (int i = 0; i < suite.n_assets; ++i)
        for (int j = 0; j < suite.n_assets; ++j) {
            if (suite.D[i][j].size() == 0) continue;
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = t1; t2 <= q; ++t2)
                    w.row({"D", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(t1),
                           csv::fmt(t2), csv::fmt(suite.D[i][j](t1 - 1, t2 - 1))});
        }
    for (int j = 0; j < suite.n_assets && suite.n_assets == 2; ++j) {
        if (suite.Dx[j].size() == 0) continue;
        for (int t1 = 1; t1 <= q; ++t1)
            for (int t2 = 1; t2 <= q; ++t2)
                w.row({"Dx", csv::fmt(j + 1), "", csv::fmt(t1), csv::fmt(t2),
                       csv::fmt(suite.Dx[j](t1 - 1, t2 - 1))});
    }
    for (const auto& [key, table] : suite.Dp) {
        const std::string name = "Dp_" + std::to_string(key[0] + 1) +
                                 std::to_string(key[1] + 1) +
                                 std::to_string(key[2] + 1) +
                                 std::to_string(key[3] + 1);
        for (int s1 = -(q - 1); s1 <= q - 1; ++s1)
            for (int s2 = -(q - 1); s2 <= q - 1; ++s2)
                w.row({name, "", "", csv::fmt(s1), csv::fmt(s2),
                       csv::fmt(table.at(s1, s2))});
    }
    for (const auto& [key, vec] : suite.Vrp) {
        const std::string name = "Vrp_" + std::to_string(key[0] + 1) +
                                 std::to_string(key[1] + 1) +
                                 std::to_string(key[2] + 1);
        for (int m = 0; m <= q; ++m)
            w.row({name, "", "", csv::fmt(m), "", csv::fmt(vec[static_cast<size_t>(m)])});
    }
    for (int i = 0; i < suite.n_assets; ++i) {
        w.row({"mean_sigma2", csv::fmt(i + 1), "", "", "",
               csv::fmt(suite.mean_sigma2[static_cast<size_t>(i)])});
        w.row({"mean_r2", csv::fmt(i + 1), "", "", "",
               csv::fmt(suite.mean_r2[static_cast<size_t>(i)])});
    }
    if (suite.n_assets == 2)
        w.row({"mean_cross", "", "", "", "", csv::fmt(suite.mean_cross)});
    w.close();
}

}  // namespace mqarch
