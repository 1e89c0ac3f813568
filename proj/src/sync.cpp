#include "v2x/sync.hpp"

#include <algorithm>
#include <cstdlib>

namespace v2x {

SyncResult match_timestamps(std::span<const std::int64_t> vehicle_us, std::span<const std::int64_t> infra_us,
                            double max_dt_ms) {
  SyncResult out;
  if (vehicle_us.empty() || infra_us.empty()) return out;
  std::int64_t abs_sum_us = 0;
  for (std::size_t v = 0; v < vehicle_us.size(); ++v) {
    const std::int64_t t = vehicle_us[v];
    auto it = std::lower_bound(infra_us.begin(), infra_us.end(), t);
    std::size_t best = static_cast<std::size_t>(it - infra_us.begin());
    if (best == infra_us.size() || (best > 0 && t - infra_us[best - 1] <= infra_us[best] - t)) --best;
    const std::int64_t delta = t - infra_us[best];
    if (static_cast<double>(std::llabs(delta)) > max_dt_ms * 1000.0) {
      out.rejected.push_back(v);
      continue;
    }
    out.pairs.push_back({v, best, static_cast<double>(delta) / 1000.0});
    abs_sum_us += std::llabs(delta);
  }
  if (!out.pairs.empty()) {
    out.mean_abs_delta_ms = static_cast<double>(abs_sum_us) / 1000.0 / static_cast<double>(out.pairs.size());
  }
  return out;
}

}  // namespace v2x
