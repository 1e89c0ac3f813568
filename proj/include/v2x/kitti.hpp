#pragma once

// KITTI-style label text. One line per box:
//   type truncated occluded alpha left top right bottom h w l x y z yaw [score]
// Boxes stay in their own frame (no camera re-projection); truncated,
// occluded, alpha and the 2D box are written as 0 0 -10 0 0 0 0. Track ids,
// attributes, streams and timestamps have no slot and are dropped.

#include <string>
#include <vector>

#include "v2x/openlabel.hpp"

namespace v2x {

/// KITTI class name for a category (bicycle -> Cyclist, other -> Misc).
std::string kitti_class(Category c);
/// Inverse mapping; Person_sitting -> pedestrian, Tram/Misc -> other.
/// DontCare yields nullopt.
std::optional<Category> category_from_kitti(const std::string& name);

/// One text record per frame, in frame order.
std::vector<std::string> to_kitti(const Sequence& seq, Diagnostics* diag = nullptr);

/// Frames are indexed 0..n-1. Throws KittiError naming frame and line.
Sequence from_kitti(const std::vector<std::string>& records, Diagnostics* diag = nullptr);

}  // namespace v2x
