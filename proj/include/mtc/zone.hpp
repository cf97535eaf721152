#pragma once

#include <vector>

namespace mtc {

struct ZoneEntry {
  double rel_position = 0.0;  // leader front minus observer front [m]
  double rel_velocity = 0.0;  // leader velocity minus observer velocity [m/s]
};

/// Vehicles ahead of an observer within `zone_length`, nearest first.
struct SensingZoneSnapshot {
  double zone_length = 50.0;
  std::vector<ZoneEntry> entries;

  /// Strictly increasing positions, all in (0, zone_length].
  bool valid() const {
    double prev = 0.0;
    for (const auto& e : entries) {
      if (!(e.rel_position > prev) || e.rel_position > zone_length) return false;
      prev = e.rel_position;
    }
    return true;
  }
};

}  // namespace mtc
