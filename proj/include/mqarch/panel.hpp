#pragma once

#include <string>
#include <vector>

namespace mqarch {

enum class PanelStage { Raw, Normalized, Martingalised, Mirrored };

std::string to_string(PanelStage s);

/// Per-day, per-bin (return, squared volatility) series for 1..2 assets.
/// The universal data carrier of the pipeline.
struct BinnedPanel {
    struct Day {
        /// r[asset][bin], s2[asset][bin]; all assets share the bin count.
        std::vector<std::vector<double>> r;
        std::vector<std::vector<double>> s2;
        std::string date;  // optional label

        int bins() const { return r.empty() ? 0 : static_cast<int>(r[0].size()); }
    };

    int n_assets = 1;
    PanelStage stage = PanelStage::Raw;
    std::vector<Day> days;

    Day make_day(int bins) const;
    long total_bins() const;
    void check_rectangular() const;
};

/// One-asset, one-day convenience constructor used by simulators and tests.
BinnedPanel panel_from_series(const std::vector<std::vector<double>>& returns,
                              const std::vector<std::vector<double>>& sigma2);

/// Raw OHLC bars; day-major, each day holds bins x assets bars.
struct OhlcPanel {
    struct Bar {
        double open = 0, high = 0, low = 0, close = 0;
    };
    struct Day {
        std::string date;
        std::vector<std::string> times;            // per bin, "HH:MM"
        std::vector<std::vector<Bar>> bars;        // [bin][asset]
    };
    int n_assets = 1;
    std::vector<Day> days;
};

/// Panel CSV written by the simulators: (bin_index, asset, return, sigma2).
void save_panel_csv(const BinnedPanel& panel, const std::string& path);
/// Panel CSV written by preprocess: (date, bin, asset, return, sigma).
void save_panel_csv_sigma(const BinnedPanel& panel, const std::string& path);
/// Reads either flavor (detected from the header).
BinnedPanel load_panel_csv(const std::string& path);

/// OHLC input CSV: (date, time, asset, open, high, low, close).
OhlcPanel load_ohlc_csv(const std::string& path);

}  // namespace mqarch
