#include "mqarch/panel.hpp"

#include <cmath>
#include <map>

#include "mqarch/csv.hpp"
#include "mqarch/errors.hpp"

namespace mqarch {

std::string to_string(PanelStage s) {
    switch (s) {
        case PanelStage::Raw: return "raw";
        case PanelStage::Normalized: return "normalized";
        case PanelStage::Martingalised: return "martingalised";
        case PanelStage::Mirrored: return "mirrored";
    }
    return "?";
}

BinnedPanel::Day BinnedPanel::make_day(int bins) const {
    Day d;
    d.r.assign(static_cast<size_t>(n_assets), std::vector<double>(static_cast<size_t>(bins), 0.0));
    d.s2 = d.r;
    return d;
}

long BinnedPanel::total_bins() const {
    long n = 0;
    for (const auto& d : days) n += d.bins();
    return n;
}

void BinnedPanel::check_rectangular() const {
    for (const auto& d : days) {
        if (static_cast<int>(d.r.size()) != n_assets ||
            static_cast<int>(d.s2.size()) != n_assets)
            throw Error("panel day with wrong asset count");
        for (int a = 0; a < n_assets; ++a)
            if (d.r[a].size() != d.r[0].size() || d.s2[a].size() != d.r[0].size())
                throw Error("panel day with ragged series");
    }
}

BinnedPanel panel_from_series(const std::vector<std::vector<double>>& returns,
                              const std::vector<std::vector<double>>& sigma2) {
    if (returns.size() != sigma2.size() || returns.empty())
        throw Error("panel_from_series: shape mismatch");
    BinnedPanel p;
    p.n_assets = static_cast<int>(returns.size());
    BinnedPanel::Day d;
    d.r = returns;
    d.s2 = sigma2;
    p.days.push_back(std::move(d));
    p.check_rectangular();
    return p;
}

void save_panel_csv(const BinnedPanel& panel, const std::string& path) {
    csv::Writer w(path, {"bin_index", "asset", "return", "sigma2"});
    long bin = 0;
    for (const auto& d : panel.days) {
        for (int t = 0; t < d.bins(); ++t, ++bin)
            for (int a = 0; a < panel.n_assets; ++a)
                w.row({csv::fmt(bin), csv::fmt(a + 1), csv::fmt(d.r[a][t]),
                       csv::fmt(d.s2[a][t])});
    }
    w.close();
}

void save_panel_csv_sigma(const BinnedPanel& panel, const std::string& path) {
    csv::Writer w(path, {"date", "bin", "asset", "return", "sigma"});
    int di = 0;
    for (const auto& d : panel.days) {
        std::string date = d.date.empty() ? std::to_string(di) : d.date;
        for (int t = 0; t < d.bins(); ++t)
            for (int a = 0; a < panel.n_assets; ++a)
                w.row({date, csv::fmt(t), csv::fmt(a + 1), csv::fmt(d.r[a][t]),
                       csv::fmt(std::sqrt(std::max(0.0, d.s2[a][t])))});
        ++di;
    }
    w.close();
}

BinnedPanel load_panel_csv(const std::string& path) {
    csv::Table t = csv::read(path);
    const bool sigma_form = t.col("sigma") >= 0;
    const int c_ret = t.col_required("return");
    const int c_asset = t.col_required("asset");
    const int c_vol = sigma_form ? t.col_required("sigma") : t.col_required("sigma2");
    const int c_day = t.col("date");
    const int c_bin = sigma_form ? t.col_required("bin") : t.col_required("bin_index");

    int n_assets = 0;
    for (const auto& r : t.rows)
        n_assets = std::max(n_assets, csv::parse_int(r[c_asset]));
    if (n_assets < 1 || n_assets > 2) throw IoError("panel CSV needs 1 or 2 assets");

    BinnedPanel p;
    p.n_assets = n_assets;
    // group rows by day label (file order preserved)
    std::vector<std::pair<std::string, std::vector<const std::vector<std::string>*>>> groups;
    std::map<std::string, size_t> seen;
    for (const auto& r : t.rows) {
        std::string day = c_day >= 0 ? r[c_day] : std::string("0");
        auto it = seen.find(day);
        if (it == seen.end()) {
            seen.emplace(day, groups.size());
            groups.push_back({day, {}});
            it = seen.find(day);
        }
        groups[it->second].second.push_back(&r);
    }
    for (auto& [date, rows] : groups) {
        long max_bin = -1;
        for (auto* r : rows)
            max_bin = std::max(max_bin, static_cast<long>(csv::parse_int((*r)[c_bin])));
        BinnedPanel::Day d = p.make_day(static_cast<int>(rows.size() / n_assets));
        d.date = date;
        // bins may be global indices (simulator output); remap to 0-based order
        long min_bin = max_bin;
        for (auto* r : rows)
            min_bin = std::min(min_bin, static_cast<long>(csv::parse_int((*r)[c_bin])));
        for (auto* r : rows) {
            int a = csv::parse_int((*r)[c_asset]) - 1;
            long t_idx = csv::parse_int((*r)[c_bin]) - min_bin;
            if (a < 0 || a >= n_assets || t_idx < 0 || t_idx >= d.bins())
                throw IoError("panel CSV with inconsistent bin/asset labels");
            double v = csv::parse_double((*r)[c_vol]);
            d.r[static_cast<size_t>(a)][static_cast<size_t>(t_idx)] = csv::parse_double((*r)[c_ret]);
            d.s2[static_cast<size_t>(a)][static_cast<size_t>(t_idx)] = sigma_form ? v * v : v;
        }
        p.days.push_back(std::move(d));
    }
    p.check_rectangular();
    return p;
}

OhlcPanel load_ohlc_csv(const std::string& path) {
    csv::Table t = csv::read(path);
    const int c_date = t.col_required("date");
    const int c_time = t.col_required("time");
    const int c_asset = t.col_required("asset");
    const int c_o = t.col_required("open");
    const int c_h = t.col_required("high");
    const int c_l = t.col_required("low");
    const int c_c = t.col_required("close");

    int n_assets = 0;
    for (const auto& r : t.rows)
        n_assets = std::max(n_assets, csv::parse_int(r[c_asset]));
    if (n_assets < 1 || n_assets > 2) throw IoError("OHLC CSV needs 1 or 2 assets");

    OhlcPanel p;
    p.n_assets = n_assets;
    std::map<std::string, size_t> day_of;
    std::vector<std::map<std::string, size_t>> time_of;
    for (const auto& r : t.rows) {
        const std::string& date = r[c_date];
        auto dit = day_of.find(date);
        if (dit == day_of.end()) {
            day_of.emplace(date, p.days.size());
            p.days.push_back({date, {}, {}});
            time_of.push_back({});
            dit = day_of.find(date);
        }
        OhlcPanel::Day& day = p.days[dit->second];
        auto& tmap = time_of[dit->second];
        const std::string& tm = r[c_time];
        auto tit = tmap.find(tm);
        if (tit == tmap.end()) {
            tmap.emplace(tm, day.times.size());
            day.times.push_back(tm);
            day.bars.emplace_back(static_cast<size_t>(n_assets));
            tit = tmap.find(tm);
        }
        int a = csv::parse_int(r[c_asset]) - 1;
        OhlcPanel::Bar& bar = day.bars[tit->second][static_cast<size_t>(a)];
        bar.open = csv::parse_double(r[c_o]);
        bar.high = csv::parse_double(r[c_h]);
        bar.low = csv::parse_double(r[c_l]);
        bar.close = csv::parse_double(r[c_c]);
    }
    return p;
}

}  // namespace mqarch
