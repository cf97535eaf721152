#pragma once

#include <iosfwd>
#include <string>

#include "mtc/world.hpp"

namespace mtc {

/// Column header of the per-vehicle trace CSV.
inline constexpr const char* kTraceHeader =
    "step,time_s,vehicle_id,lane,position_m,velocity_mps,accel_mps2,controller,event_flags";

void write_trace_csv(const Trace& trace, std::ostream& out);
void write_trace_csv(const Trace& trace, const std::string& path);

/// Metadata and event log as JSON.
std::string trace_meta_json(const Trace& trace);
void write_trace_meta(const Trace& trace, const std::string& path);

/// Reads `<path>` and its `<path minus .csv>.meta.json` sidecar. Ring
/// leaders and gaps are rebuilt from positions. Throws IoError.
Trace read_trace(const std::string& csv_path);

/// Sidecar path for a trace CSV.
std::string meta_path_for(const std::string& csv_path);

/// Rebuild leader ids and bumper gaps on a ring snapshot from positions.
void rebuild_ring_geometry(Snapshot& snap, double ring_length);

}  // namespace mtc
