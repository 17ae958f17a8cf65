#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsched/rng.hpp"
#include "fedsched/types.hpp"

namespace fedsched {

struct MobilityConfig {
  double cell_radius_m = 1000.0;
  double speed_mps = 10.0 / 3.6; // Table default is 10 km/h
  double carrier_hz = 900e6;
  double wave_speed_mps = 3e8;
  double pathloss_ref = 0.01; // gain at 1 m
  double pathloss_exp = 3.0;
  double min_distance_m = 1.0; // near-field clamp for the path-loss law

  // What happens when a straight-line walk leaves the cell.  Default keeps
  // going (users may roam outside while still scheduled).
  enum class Boundary { kNone, kReflect, kWrap };
  Boundary boundary = Boundary::kNone;
};

struct ChannelTrace {
  Mat gains;     // N x T realized |h|^2
  Mat predicted; // N x T conditional mean of |h|^2 given the slot-0 channel
  Mat fading_re; // in-memory extras for statistics; not serialized
  Mat fading_im;
  std::uint64_t seed = 0;
  std::string generator; // RNG algorithm the trace was drawn with
};

// First-order fading correlation between consecutive slots.
double doppler_correlation(double speed_mps, double carrier_hz, double slot_s,
                           double wave_speed_mps = 3e8);

// Distance-based mean channel gain, clamped below cfg.min_distance_m.
double path_loss(double distance_m, const MobilityConfig& cfg);

// Draws positions uniformly over the cell disc, walks each user along a
// straight line at cfg.speed_mps, and generates correlated Rayleigh fading
// around the moving path loss.  Every user consumes a fixed number of draws
// from its own substream of `seed`, so traces are reproducible per user.
ChannelTrace generate_trace(const MobilityConfig& cfg, int n_users, int horizon,
                            double slot_s, std::uint64_t seed);

// Element-wise mean of several equally sized traces.
ChannelTrace average_traces(const std::vector<ChannelTrace>& traces);

void write_trace_csv(const std::string& path, const ChannelTrace& trace);
ChannelTrace read_trace_csv(const std::string& path);

// Compact binary cache (magic + layout header + raw doubles).
void write_trace_cache(const std::string& path, const ChannelTrace& trace);
ChannelTrace read_trace_cache(const std::string& path);

} // namespace fedsched
