#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mqarch/model.hpp"
#include "mqarch/panel.hpp"

namespace mqarch {

/// Signed-mark event stream of one point process on [0, horizon].
struct EventStream {
    std::vector<double> times;
    std::vector<int> marks;  // +-1
    double horizon = 0.0;
};

struct ThinningResult {
    std::vector<EventStream> streams;  // one per asset
    long candidates = 0;
    long clamped = 0;  // candidates where leverage pushed intensity below 0
};

struct MqarchResult {
    BinnedPanel panel;
    long floored = 0;  // bins where feedback drove sigma2 below the floor
    bool stationary_warning = false;
};

/// Deterministic gaussian stream: mt19937_64 + Box-Muller, so that equal
/// seeds give bit-identical paths on every platform.
class GaussianRng {
  public:
    explicit GaussianRng(std::uint64_t seed) : gen_(seed) {}
    double normal();
    double uniform();  // (0,1)

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Ogata thinning with exponentially maintained kernel state; exact event
/// times of the quadratic Hawkes intensity. Aborts when leverage clamping
/// exceeds 1% of candidates.
ThinningResult simulate_qhawkes_thinning(const PointProcessSpec& spec,
                                         double horizon, std::uint64_t seed);

/// Aggregates an event stream: per bin, return = sum of marks and the
/// squared-volatility proxy = event count. Bin count = ceil(T / bin_size).
BinnedPanel bin_events(const std::vector<EventStream>& streams, double bin_size);

/// Discrete recursion r = sigma * xi with gaussian xi; burn-in of
/// max(10q, 1000) bins is discarded; sigma2 floored at 1e-12 when feedback
/// drives it negative (counted).
MqarchResult simulate_mqarch(const ModelSpec2D& model, long n_bins,
                             std::uint64_t seed);

/// Events CSV: (time, mark, asset).
void save_events_csv(const std::vector<EventStream>& streams, const std::string& path);
std::vector<EventStream> load_events_csv(const std::string& path);

}  // namespace mqarch
