#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mqarch/model.hpp"
#include "mqarch/panel.hpp"
#include "mqarch/yulewalker.hpp"

namespace mqarch {

/// r_i = beta_i f0 + e_i, bin by bin.
struct FactorDecomposition {
    double beta = 0.0;
    BinnedPanel residual_and_factor;  // asset 1 = residual, asset 2 = factor
};

struct StockResult {
    std::string ticker;
    std::optional<std::string> sector;
    double beta = 0.0;
    Calibration calib;  // asset 1 = residual, asset 2 = factor (frozen)
};

struct CrossSectionSummary {
    int q = 0;
    // pointwise mean and std across stocks, per lag 1..q
    std::vector<double> mean_phi_self, std_phi_self;
    std::vector<double> mean_phi_factor, std_phi_factor;
    std::vector<double> mean_k_self, std_k_self;
    std::vector<double> mean_k_factor, std_k_factor;
    std::vector<double> mean_lev_factor, std_lev_factor;

    struct StockNorms {
        std::string ticker;
        double beta = 0.0;
        double phi_self = 0.0, phi_factor = 0.0;
        double k2_self = 0.0, k2_factor = 0.0;
        double lev_self = 0.0, lev_factor = 0.0;
        double endogeneity = 0.0;           // spectral radius of the norm matrix
        double endogeneity_max_rule = 0.0;  // max(|factor self|, |factor->stock|)
        double sigma_inf_sq = 0.0;
    };
    std::vector<StockNorms> stocks;
};

/// Regression coefficient cov(stock, factor) / var(factor).
double estimate_beta(const std::vector<double>& stock,
                     const std::vector<double>& factor);

/// Splits a stock panel against the factor panel; the squared-return proxy
/// replaces the volatility column for both series.
FactorDecomposition decompose_stock(const BinnedPanel& stock,
                                    const BinnedPanel& factor);

struct FactorModelResult {
    Calibration factor_calib;  // 1D
    std::vector<StockResult> stocks;
};

/// Factor calibrated on its own 1D path; each stock's residual calibrated as
/// a 2D system with the factor->factor direction frozen and the covariance
/// kernels excluded.
FactorModelResult calibrate_factor_model(
    const std::vector<BinnedPanel>& stocks, const std::vector<std::string>& tickers,
    const BinnedPanel& factor, const CalibrationOptions& opts);

CrossSectionSummary cross_section_aggregate(const FactorModelResult& result);

void save_summary_csv(const CrossSectionSummary& summary, const std::string& path);

}  // namespace mqarch
