#pragma once

#include <string>

#include "mqarch/panel.hpp"

namespace mqarch {

struct SessionWindow {
    std::string start = "10:00";
    std::string end = "15:00";  // exclusive
};

/// r = log(c/o), sigma = (1/3)(h-l)/o + (2/3)|c-o|/o per bar; bins outside
/// the session window are dropped, days with missing bars are dropped whole.
/// The panel carries sigma^2.
BinnedPanel ohlc_to_returns_vol(const OhlcPanel& panel,
                                const SessionWindow& session = {});

/// Divide each r and sigma by the square root of the trailing window mean of
/// its own square at the same bin-of-day (strictly prior days); the first
/// window_days days are dropped.
BinnedPanel normalize_trailing(const BinnedPanel& panel, int window_days = 100);

/// Divide sigma and r by the across-days bin-of-day root mean square of sigma.
BinnedPanel normalize_intraday(const BinnedPanel& panel);

/// Remove the lag-1 predictable component of returns (bivariate gaussian
/// conditional expectation with static within-day covariances), then rescale
/// returns to unit standard deviation.
BinnedPanel martingalise(const BinnedPanel& panel);

/// Append sign-flipped-return copies of all days.
BinnedPanel mirror_augment(const BinnedPanel& panel);

}  // namespace mqarch
