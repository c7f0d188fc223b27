#include "mqarch/kernels.hpp"

#include <cmath>

namespace mqarch {

void ExponentialKernelParams::validate() const {
    if (!(rate > 0.0)) throw Error("exponential kernel rate must be > 0");
    if (kind != KernelKind::Leverage && norm < 0.0)
        throw Error("kernel norm must be >= 0 for linear/zumbach kinds");
    if (!std::isfinite(norm) || !std::isfinite(rate))
        throw Error("non-finite kernel parameters");
}

std::vector<double> ExponentialKernelParams::tabulate(int q) const {
    validate();
    std::vector<double> out(static_cast<size_t>(q));
    double amp;
    switch (kind) {
        case KernelKind::Linear: amp = norm * rate; break;
        case KernelKind::Zumbach: amp = std::sqrt(2.0 * norm * rate); break;
        case KernelKind::Leverage: amp = norm; break;
        default: amp = 0.0; break;
    }
    for (int tau = 1; tau <= q; ++tau)
        out[static_cast<size_t>(tau - 1)] = amp * std::exp(-rate * tau);
    return out;
}

double ExponentialKernelParams::discrete_norm(int q) const {
    validate();
    double amp;
    switch (kind) {
        case KernelKind::Linear: amp = norm * rate; break;
        case KernelKind::Zumbach: amp = std::sqrt(2.0 * norm * rate); break;
        case KernelKind::Leverage: amp = norm; break;
        default: amp = 0.0; break;
    }
    const double d = std::exp(-rate);
    if (q < 0) return amp * d / (1.0 - d);
    return amp * d * (1.0 - std::pow(d, q)) / (1.0 - d);
}

bool KernelGrid::finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

double QuadraticKernelGrid::off_diag(int t1, int t2) const {
    if (t1 == t2) throw Error("off_diag requires t1 != t2");
    if (full_upper) {
        int a = std::min(t1, t2), b = std::max(t1, t2);
        return (*full_upper)[static_cast<size_t>(upper_tri_index(a, b, q()))];
    }
    return rank_one.at(t1) * rank_one.at(t2);
}

Eigen::MatrixXd QuadraticKernelGrid::reconstruct() const {
    const int n = q();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int t1 = 1; t1 <= n; ++t1) {
        m(t1 - 1, t1 - 1) = diag.at(t1);
        for (int t2 = t1 + 1; t2 <= n; ++t2) {
            double v = off_diag(t1, t2);
            m(t1 - 1, t2 - 1) = v;
            m(t2 - 1, t1 - 1) = v;
        }
    }
    return m;
}

int upper_tri_size(int q) { return q * (q - 1) / 2; }

int upper_tri_index(int t1, int t2, int q) {
    if (!(1 <= t1 && t1 < t2 && t2 <= q))
        throw Error("upper_tri_index: need 1 <= t1 < t2 <= q");
    int offset = (t1 - 1) * q - (t1 - 1) * t1 / 2;
    return offset + (t2 - t1 - 1);
}

double kernel_l1_norm(const KernelGrid& kernel) {
    if (!kernel.finite()) throw Error("kernel_l1_norm: non-finite grid");
    double s = 0.0;
    for (double v : kernel.values) s += v;
    return s;
}

double kernel_abs_norm(const KernelGrid& kernel) {
    if (!kernel.finite()) throw Error("kernel_abs_norm: non-finite grid");
    double s = 0.0;
    for (double v : kernel.values) s += std::abs(v);
    return s;
}

double spectral_radius(const Eigen::Matrix2d& norms) {
    // Roots of x^2 - tr x + det; complex pair has modulus sqrt(det).
    const double tr = norms.trace();
    const double det = norms.determinant();
    const double disc = tr * tr - 4.0 * det;
    if (disc >= 0.0) {
        const double s = std::sqrt(disc);
        return std::max(std::abs((tr + s) / 2.0), std::abs((tr - s) / 2.0));
    }
    return std::sqrt(std::abs(det));
}

}  // namespace mqarch
