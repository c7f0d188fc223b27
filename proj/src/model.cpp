#include "mqarch/model.hpp"

#include <cmath>

#include "mqarch/csv.hpp"

namespace mqarch {

ModelSpec2D::ModelSpec2D(int q, int assets) : n_assets(assets) {
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            quad[i][j] = QuadraticKernelGrid(q);
            leverage[i][j] = KernelGrid(q);
        }
        phi_cross[i] = KernelGrid(q);
    }
}

Eigen::Matrix2d ModelSpec2D::phi_norms() const {
    Eigen::Matrix2d n = Eigen::Matrix2d::Zero();
    for (int i = 0; i < n_assets; ++i)
        for (int j = 0; j < n_assets; ++j) n(i, j) = kernel_l1_norm(phi(i, j));
    return n;
}

void ModelSpec2D::validate() const {
    const int grid_q = q();
    for (int i = 0; i < n_assets; ++i) {
        for (int j = 0; j < n_assets; ++j) {
            if (quad[i][j].q() != grid_q || leverage[i][j].q() != grid_q)
                throw LengthMismatchError("model grids must share one q");
            if (!quad[i][j].diag.finite() || !quad[i][j].rank_one.finite() ||
                !leverage[i][j].finite())
                throw Error("non-finite kernel grid");
        }
        if (phi_cross[i].q() != grid_q)
            throw LengthMismatchError("model grids must share one q");
        if (k_cross[i] && (k_cross[i]->rows() != grid_q || k_cross[i]->cols() != grid_q))
            throw LengthMismatchError("k_cross table must be q x q");
        if (sigma_inf_sq[static_cast<size_t>(i)] < 0.0)
            throw Error("sigma_inf_sq must be >= 0");
    }
}

PointProcessSpec::PointProcessSpec() {
    for (auto& row : phi)
        for (auto& k : row) k = {0.0, 1.0, KernelKind::Linear};
    for (auto& row : zumbach)
        for (auto& k : row) k = {0.0, 1.0, KernelKind::Zumbach};
    for (auto& row : leverage)
        for (auto& k : row) k = {0.0, 1.0, KernelKind::Leverage};
}

Eigen::Matrix2d PointProcessSpec::feedback_norms() const {
    Eigen::Matrix2d n = Eigen::Matrix2d::Zero();
    for (int i = 0; i < n_assets; ++i)
        for (int j = 0; j < n_assets; ++j)
            n(i, j) = phi[i][j].norm + zumbach[i][j].norm;
    return n;
}

void PointProcessSpec::validate() const {
    for (int i = 0; i < n_assets; ++i) {
        if (!(lambda_inf[static_cast<size_t>(i)] > 0.0))
            throw Error("lambda_inf must be > 0");
        for (int j = 0; j < n_assets; ++j) {
            phi[i][j].validate();
            zumbach[i][j].validate();
            leverage[i][j].validate();
        }
    }
    if (spectral_radius(feedback_norms()) >= 1.0)
        throw NonStationaryError("point process feedback norms not stationary");
}

Eigen::Vector2d mean_squared_vol(const Eigen::Matrix2d& phi_norms,
                                 const Eigen::Vector2d& sigma_inf_sq) {
    if (spectral_radius(phi_norms) >= 1.0)
        throw NonStationaryError("feedback spectral radius >= 1");
    Eigen::Matrix2d m = Eigen::Matrix2d::Identity() - phi_norms;
    const double det = m.determinant();
    if (std::abs(det) < 1e-14)
        throw NonStationaryError("I - N is singular");
    Eigen::Vector2d out = m.inverse() * sigma_inf_sq;
    if (out(0) < 0.0 || out(1) < 0.0)
        throw NonStationaryError("negative mean squared volatility");
    return out;
}

double evaluate_sigma2(const ModelSpec2D& model,
                       std::span<const double> history_1,
                       std::span<const double> history_2,
                       int target) {
    const int q = model.q();
    const std::span<const double> hist[2] = {history_1, history_2};
    for (int a = 0; a < model.n_assets; ++a)
        if (static_cast<int>(hist[a].size()) < q)
            throw InsufficientHistoryError("need at least q past returns");
    auto r = [&](int asset, int tau) {
        const auto& h = hist[asset];
        return h[h.size() - static_cast<size_t>(tau)];
    };

    const int i = target;
    double s2 = model.sigma_inf_sq[static_cast<size_t>(i)];
    for (int j = 0; j < model.n_assets; ++j) {
        const auto& lev = model.leverage[i][j];
        const auto& qk = model.quad[i][j];
        for (int tau = 1; tau <= q; ++tau) {
            double rj = r(j, tau);
            s2 += lev.at(tau) * rj + qk.diag.at(tau) * rj * rj;
        }
        if (qk.full_upper) {
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = t1 + 1; t2 <= q; ++t2)
                    s2 += 2.0 * qk.off_diag(t1, t2) * r(j, t1) * r(j, t2);
        } else {
            // (sum k r)^2 - sum k^2 r^2 expands the strict off-diagonal part
            double trend = 0.0, diag_part = 0.0;
            for (int tau = 1; tau <= q; ++tau) {
                double kr = qk.rank_one.at(tau) * r(j, tau);
                trend += kr;
                diag_part += kr * kr;
            }
            s2 += trend * trend - diag_part;
        }
    }
    if (model.n_assets == 2) {
        const int ibar = 1 - i;
        for (int tau = 1; tau <= q; ++tau)
            s2 += model.phi_cross[i].at(tau) *
                  (r(i, tau) * r(ibar, tau) - model.equal_time_cov);
        if (model.k_cross[i]) {
            const Eigen::MatrixXd& kx = *model.k_cross[i];
            for (int t1 = 1; t1 <= q; ++t1)
                for (int t2 = 1; t2 <= q; ++t2) {
                    if (t1 == t2) continue;
                    s2 += kx(t1 - 1, t2 - 1) * r(i, t1) * r(ibar, t2);
                }
        }
    }
    return s2;
}

namespace {

/// Identically-zero grids are skipped (unsolved directions stay out of the
/// file); the loader restores them as zeros.
void write_grid(csv::Writer& w, const std::string& name, int target, int source,
                const KernelGrid& g) {
    bool any = false;
    for (double v : g.values)
        if (v != 0.0) any = true;
    if (!any) return;
    for (int tau = 1; tau <= g.q(); ++tau)
        w.row({name, csv::fmt(target), source ? csv::fmt(source) : "",
               csv::fmt(tau), "", csv::fmt(g.at(tau))});
}

}  // namespace

void save_model_csv(const ModelSpec2D& model, const std::string& path) {
    csv::Writer w(path, {"kernel_name", "target", "source", "lag1", "lag2", "value"});
    const int q = model.q();
    w.row({"n_assets", "", "", "", "", csv::fmt(model.n_assets)});
    w.row({"q", "", "", "", "", csv::fmt(q)});
    for (int i = 0; i < model.n_assets; ++i) {
        w.row({"sigma_inf_sq", csv::fmt(i + 1), "", "", "",
               csv::fmt(model.sigma_inf_sq[static_cast<size_t>(i)])});
    }
    if (model.n_assets == 2)
        w.row({"equal_time_cov", "", "", "", "", csv::fmt(model.equal_time_cov)});
    for (int i = 0; i < model.n_assets; ++i) {
        for (int j = 0; j < model.n_assets; ++j) {
            write_grid(w, "phi", i + 1, j + 1, model.quad[i][j].diag);
            write_grid(w, "k", i + 1, j + 1, model.quad[i][j].rank_one);
            write_grid(w, "leverage", i + 1, j + 1, model.leverage[i][j]);
            if (model.quad[i][j].full_upper) {
                const auto& fu = *model.quad[i][j].full_upper;
                for (int t1 = 1; t1 <= q; ++t1)
                    for (int t2 = t1 + 1; t2 <= q; ++t2)
                        w.row({"K_upper", csv::fmt(i + 1), csv::fmt(j + 1),
                               csv::fmt(t1), csv::fmt(t2),
                               csv::fmt(fu[static_cast<size_t>(upper_tri_index(t1, t2, q))])});
            }
        }
        if (model.n_assets == 2) {
            write_grid(w, "phi_cross", i + 1, 0, model.phi_cross[i]);
            if (model.k_cross[i]) {
                for (int t1 = 1; t1 <= q; ++t1)
                    for (int t2 = 1; t2 <= q; ++t2) {
                        if (t1 == t2) continue;
                        w.row({"k_cross", csv::fmt(i + 1), "", csv::fmt(t1),
                               csv::fmt(t2), csv::fmt((*model.k_cross[i])(t1 - 1, t2 - 1))});
                    }
            }
        }
    }
    w.close();
}

ModelSpec2D load_model_csv(const std::string& path) {
    csv::Table t = csv::read(path);
    const int c_name = t.col_required("kernel_name");
    const int c_tgt = t.col_required("target");
    const int c_src = t.col_required("source");
    const int c_l1 = t.col_required("lag1");
    const int c_l2 = t.col_required("lag2");
    const int c_val = t.col_required("value");

    int q = 0, n_assets = 2;
    for (const auto& r : t.rows) {
        if (r[c_name] == "q") q = csv::parse_int(r[c_val]);
        if (r[c_name] == "n_assets") n_assets = csv::parse_int(r[c_val]);
    }
    if (q <= 0) {
        for (const auto& r : t.rows)
            if (!r[c_l1].empty()) q = std::max(q, csv::parse_int(r[c_l1]));
        for (const auto& r : t.rows)
            if (!r[c_l2].empty()) q = std::max(q, csv::parse_int(r[c_l2]));
    }
    if (q <= 0) throw IoError("model CSV without any lag rows");

    ModelSpec2D m(q, n_assets);
    bool has_k_upper[2][2] = {{false, false}, {false, false}};
    bool has_k_cross[2] = {false, false};
    for (const auto& r : t.rows) {
        const std::string& name = r[c_name];
        if (name == "q" || name == "n_assets") continue;
        if (name == "sigma_inf_sq") {
            m.sigma_inf_sq[static_cast<size_t>(csv::parse_int(r[c_tgt]) - 1)] =
                csv::parse_double(r[c_val]);
            continue;
        }
        if (name == "equal_time_cov") {
            m.equal_time_cov = csv::parse_double(r[c_val]);
            continue;
        }
        int i = csv::parse_int(r[c_tgt]) - 1;
        double v = csv::parse_double(r[c_val]);
        if (name == "phi_cross") {
            m.phi_cross[i].at(csv::parse_int(r[c_l1])) = v;
        } else if (name == "k_cross") {
            if (!has_k_cross[i]) {
                m.k_cross[i] = Eigen::MatrixXd::Zero(q, q);
                has_k_cross[i] = true;
            }
            (*m.k_cross[i])(csv::parse_int(r[c_l1]) - 1, csv::parse_int(r[c_l2]) - 1) = v;
        } else {
            int j = csv::parse_int(r[c_src]) - 1;
            if (name == "phi") {
                m.quad[i][j].diag.at(csv::parse_int(r[c_l1])) = v;
            } else if (name == "k") {
                m.quad[i][j].rank_one.at(csv::parse_int(r[c_l1])) = v;
            } else if (name == "leverage") {
                m.leverage[i][j].at(csv::parse_int(r[c_l1])) = v;
            } else if (name == "K_upper") {
                if (!has_k_upper[i][j]) {
                    m.quad[i][j].full_upper =
                        std::vector<double>(static_cast<size_t>(upper_tri_size(q)), 0.0);
                    has_k_upper[i][j] = true;
                }
                (*m.quad[i][j].full_upper)[static_cast<size_t>(upper_tri_index(
                    csv::parse_int(r[c_l1]), csv::parse_int(r[c_l2]), q))] = v;
            } else {
                throw IoError("unknown kernel_name '" + name + "'");
            }
        }
    }
    m.validate();
    return m;
}

void save_point_process_csv(const PointProcessSpec& spec, const std::string& path) {
    csv::Writer w(path, {"param", "target", "source", "value"});
    w.row({"n_assets", "", "", csv::fmt(spec.n_assets)});
    for (int i = 0; i < spec.n_assets; ++i) {
        w.row({"lambda_inf", csv::fmt(i + 1), "", csv::fmt(spec.lambda_inf[static_cast<size_t>(i)])});
        for (int j = 0; j < spec.n_assets; ++j) {
            w.row({"n_H", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(spec.phi[i][j].norm)});
            w.row({"beta", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(spec.phi[i][j].rate)});
            w.row({"n_Z", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(spec.zumbach[i][j].norm)});
            w.row({"omega", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(spec.zumbach[i][j].rate)});
            w.row({"lev_amp", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(spec.leverage[i][j].norm)});
            w.row({"lev_rate", csv::fmt(i + 1), csv::fmt(j + 1), csv::fmt(spec.leverage[i][j].rate)});
        }
    }
    w.close();
}

PointProcessSpec load_point_process_csv(const std::string& path) {
    csv::Table t = csv::read(path);
    const int c_p = t.col_required("param");
    const int c_tgt = t.col_required("target");
    const int c_src = t.col_required("source");
    const int c_val = t.col_required("value");
    PointProcessSpec s;
    for (const auto& r : t.rows) {
        const std::string& p = r[c_p];
        double v = csv::parse_double(r[c_val]);
        if (p == "n_assets") {
            s.n_assets = static_cast<int>(v);
            continue;
        }
        int i = csv::parse_int(r[c_tgt]) - 1;
        if (p == "lambda_inf") {
            s.lambda_inf[static_cast<size_t>(i)] = v;
            continue;
        }
        int j = csv::parse_int(r[c_src]) - 1;
        if (p == "n_H") s.phi[i][j].norm = v;
        else if (p == "beta") s.phi[i][j].rate = v;
        else if (p == "n_Z") s.zumbach[i][j].norm = v;
        else if (p == "omega") s.zumbach[i][j].rate = v;
        else if (p == "lev_amp") s.leverage[i][j].norm = v;
        else if (p == "lev_rate") s.leverage[i][j].rate = v;
        else throw IoError("unknown point process param '" + p + "'");
    }
    return s;
}

}  // namespace mqarch
