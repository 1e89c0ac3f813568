#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace v2x {

struct MatchedPair {
  std::size_t vehicle_frame_index = 0;
  std::size_t infra_frame_index = 0;
  double delta_t_ms = 0.0;  ///< vehicle - infra, signed
};

struct SyncResult {
  std::vector<MatchedPair> pairs;
  std::vector<std::size_t> rejected;  ///< vehicle frames whose nearest infra frame is beyond max_dt
  double mean_abs_delta_ms = 0.0;     ///< over accepted pairs; 0 when none
};

/// Nearest-neighbour temporal matching. Both inputs are sorted microsecond
/// timestamps. Equidistant candidates resolve to the earlier infra frame.
SyncResult match_timestamps(std::span<const std::int64_t> vehicle_us, std::span<const std::int64_t> infra_us,
                            double max_dt_ms);

}  // namespace v2x
