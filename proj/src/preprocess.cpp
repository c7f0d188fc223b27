#include "mqarch/preprocess.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "mqarch/errors.hpp"

namespace mqarch {

BinnedPanel ohlc_to_returns_vol(const OhlcPanel& panel, const SessionWindow& session) {
    BinnedPanel out;
    out.n_assets = panel.n_assets;
    out.stage = PanelStage::Raw;

    size_t expected_bins = 0;
    for (const auto& day : panel.days) {
        std::vector<size_t> keep;
        for (size_t b = 0; b < day.times.size(); ++b)
            if (day.times[b] >= session.start && day.times[b] < session.end)
                keep.push_back(b);
        if (keep.empty()) continue;
        if (expected_bins == 0) expected_bins = keep.size();
        if (keep.size() != expected_bins) continue;  // day with missing bins dropped

        BinnedPanel::Day d = out.make_day(static_cast<int>(keep.size()));
        d.date = day.date;
        bool ok = true;
        for (size_t t = 0; t < keep.size() && ok; ++t) {
            for (int a = 0; a < panel.n_assets; ++a) {
                const auto& bar = day.bars[keep[t]][static_cast<size_t>(a)];
                if (!(bar.open > 0.0) || !(bar.high > 0.0) || !(bar.low > 0.0) ||
                    !(bar.close > 0.0))
                    throw InvalidBarError("nonpositive price on day " + day.date);
                if (bar.open == 0.0) {
                    ok = false;
                    break;
                }
                const double r = std::log(bar.close / bar.open);
                const double sig = (bar.high - bar.low) / (3.0 * bar.open) +
                                   2.0 * std::abs(bar.close - bar.open) / (3.0 * bar.open);
                d.r[static_cast<size_t>(a)][t] = r;
                d.s2[static_cast<size_t>(a)][t] = sig * sig;
            }
        }
        if (ok) out.days.push_back(std::move(d));
    }
    return out;
}

BinnedPanel normalize_trailing(const BinnedPanel& panel, int window_days) {
    panel.check_rectangular();
    const int nd = static_cast<int>(panel.days.size());
    if (nd < window_days + 1)
        throw InsufficientBinsError("normalize_trailing needs more than window_days days");
    const int bins = panel.days[0].bins();
    for (const auto& d : panel.days)
        if (d.bins() != bins)
            throw Error("normalize_trailing requires equal-length days");

    BinnedPanel out;
    out.n_assets = panel.n_assets;
    out.stage = PanelStage::Normalized;
    for (int d = window_days; d < nd; ++d) {
        BinnedPanel::Day day = out.make_day(bins);
        day.date = panel.days[static_cast<size_t>(d)].date;
        for (int a = 0; a < panel.n_assets; ++a) {
            for (int t = 0; t < bins; ++t) {
                double mr2 = 0.0, ms2 = 0.0;
                for (int k = d - window_days; k < d; ++k) {
                    const auto& src = panel.days[static_cast<size_t>(k)];
                    const double rv = src.r[static_cast<size_t>(a)][static_cast<size_t>(t)];
                    mr2 += rv * rv;
                    ms2 += src.s2[static_cast<size_t>(a)][static_cast<size_t>(t)];
                }
                mr2 /= window_days;
                ms2 /= window_days;
                if (!(mr2 > 0.0) || !(ms2 > 0.0))
                    throw ZeroDenominatorError("zero trailing mean at bin " + std::to_string(t));
                const auto& src = panel.days[static_cast<size_t>(d)];
                day.r[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                    src.r[static_cast<size_t>(a)][static_cast<size_t>(t)] / std::sqrt(mr2);
                day.s2[static_cast<size_t>(a)][static_cast<size_t>(t)] =
                    src.s2[static_cast<size_t>(a)][static_cast<size_t>(t)] / ms2;
            }
        }
        out.days.push_back(std::move(day));
    }
    return out;
}

BinnedPanel normalize_intraday(const BinnedPanel& panel) {
    panel.check_rectangular();
    if (panel.days.size() < 2)
        throw InsufficientBinsError("normalize_intraday needs at least 2 days");
    const int bins = panel.days[0].bins();
    for (const auto& d : panel.days)
        if (d.bins() != bins) throw Error("normalize_intraday requires equal-length days");

    BinnedPanel out = panel;
    out.stage = PanelStage::Normalized;
    for (int a = 0; a < panel.n_assets; ++a) {
        for (int t = 0; t < bins; ++t) {
            double prof = 0.0;
            for (const auto& d : panel.days)
                prof += d.s2[static_cast<size_t>(a)][static_cast<size_t>(t)];
            prof /= static_cast<double>(panel.days.size());
            if (!(prof > 0.0))
                throw ZeroDenominatorError("zero intraday profile at bin " + std::to_string(t));
            const double inv_s = 1.0 / std::sqrt(prof);
            for (auto& d : out.days) {
                d.r[static_cast<size_t>(a)][static_cast<size_t>(t)] *= inv_s;
                d.s2[static_cast<size_t>(a)][static_cast<size_t>(t)] /= prof;
            }
        }
    }
    return out;
}

BinnedPanel martingalise(const BinnedPanel& panel) {
    panel.check_rectangular();
    const int n = panel.n_assets;

    // global means
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    long cnt = 0;
    for (const auto& d : panel.days)
        for (int t = 0; t < d.bins(); ++t, ++cnt)
            for (int a = 0; a < n; ++a) mean(a) += d.r[static_cast<size_t>(a)][static_cast<size_t>(t)];
    if (cnt == 0) throw InsufficientBinsError("empty panel");
    mean /= static_cast<double>(cnt);

    // equal-time covariance and lag-1 cross/auto covariances, within days
    Eigen::Matrix2d sig0 = Eigen::Matrix2d::Zero();  // cov(r_t, r_t)
    Eigen::Matrix2d sig1 = Eigen::Matrix2d::Zero();  // cov(r_t, r_{t-1}); row: t, col: t-1
    long n0 = 0, n1 = 0;
    for (const auto& d : panel.days) {
        for (int t = 0; t < d.bins(); ++t) {
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b)
                    sig0(a, b) += (d.r[static_cast<size_t>(a)][static_cast<size_t>(t)] - mean(a)) *
                                  (d.r[static_cast<size_t>(b)][static_cast<size_t>(t)] - mean(b));
            ++n0;
            if (t >= 1) {
                for (int a = 0; a < n; ++a)
                    for (int b = 0; b < n; ++b)
                        sig1(a, b) += (d.r[static_cast<size_t>(a)][static_cast<size_t>(t)] - mean(a)) *
                                      (d.r[static_cast<size_t>(b)][static_cast<size_t>(t - 1)] - mean(b));
                ++n1;
            }
        }
    }
    if (n1 == 0) throw InsufficientBinsError("days too short for lag-1 covariances");
    sig0 /= static_cast<double>(n0);
    sig1 /= static_cast<double>(n1);

    Eigen::MatrixXd s0 = sig0.topLeftCorner(n, n);
    if (n == 2) {
        const double nu = s0(0, 1) / std::sqrt(s0(0, 0) * s0(1, 1));
        if (std::abs(nu) >= 1.0 - 1e-6)
            throw SingularCorrelationError("equal-time correlation too close to 1");
    }
    if (!(s0.determinant() > 0.0))
        throw SingularCorrelationError("singular equal-time covariance");
    Eigen::MatrixXd coef = sig1.topLeftCorner(n, n) * s0.inverse();

    BinnedPanel out = panel;
    out.stage = PanelStage::Martingalised;
    for (auto& d : out.days) {
        const auto src = d.r;  // pre-transform copy
        for (int t = 0; t < d.bins(); ++t) {
            for (int a = 0; a < n; ++a) {
                double v = src[static_cast<size_t>(a)][static_cast<size_t>(t)] - mean(a);
                if (t >= 1)
                    for (int b = 0; b < n; ++b)
                        v -= coef(a, b) * (src[static_cast<size_t>(b)][static_cast<size_t>(t - 1)] - mean(b));
                d.r[static_cast<size_t>(a)][static_cast<size_t>(t)] = v;
            }
        }
    }

    // final rescale of returns to unit standard deviation
    for (int a = 0; a < n; ++a) {
        double ss = 0.0;
        long m = 0;
        for (const auto& d : out.days)
            for (int t = 0; t < d.bins(); ++t, ++m) {
                const double v = d.r[static_cast<size_t>(a)][static_cast<size_t>(t)];
                ss += v * v;
            }
        const double sd = std::sqrt(ss / static_cast<double>(m));
        if (!(sd > 0.0)) throw ZeroDenominatorError("zero return std after martingalisation");
        for (auto& d : out.days)
            for (int t = 0; t < d.bins(); ++t)
                d.r[static_cast<size_t>(a)][static_cast<size_t>(t)] /= sd;
    }
    return out;
}

BinnedPanel mirror_augment(const BinnedPanel& panel) {
    panel.check_rectangular();
    BinnedPanel out = panel;
    out.stage = PanelStage::Mirrored;
    const size_t orig = panel.days.size();
    out.days.reserve(2 * orig);
    for (size_t d = 0; d < orig; ++d) {
        BinnedPanel::Day m = panel.days[d];
        m.date += "#mirror";
        for (auto& series : m.r)
            for (double& v : series) v = -v;
        out.days.push_back(std::move(m));
    }
    return out;
}

}  // namespace mqarch
