#include "fedsched/channel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fedsched {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Walker {
  double px, py;   // position (m)
  double dx, dy;   // unit direction
};

void step(Walker& w, double dist, const MobilityConfig& cfg) {
  w.px += dist * w.dx;
  w.py += dist * w.dy;
  const double r = std::hypot(w.px, w.py);
  if (r <= cfg.cell_radius_m || cfg.boundary == MobilityConfig::Boundary::kNone || r == 0)
    return;
  if (cfg.boundary == MobilityConfig::Boundary::kReflect) {
    const double nx = w.px / r, ny = w.py / r;
    const double over = r - cfg.cell_radius_m;
    w.px -= 2 * over * nx;
    w.py -= 2 * over * ny;
    const double dot = w.dx * nx + w.dy * ny;
    w.dx -= 2 * dot * nx;
    w.dy -= 2 * dot * ny;
  } else { // kWrap: re-enter from the antipodal point at the same depth
    const double back = 2 * cfg.cell_radius_m - r;
    w.px = -w.px / r * back;
    w.py = -w.py / r * back;
  }
}

} // namespace

double doppler_correlation(double speed_mps, double carrier_hz, double slot_s,
                           double wave_speed_mps) {
  const double fd = speed_mps * carrier_hz / wave_speed_mps;
  return std::cyl_bessel_j(0.0, kTwoPi * fd * slot_s);
}

double path_loss(double distance_m, const MobilityConfig& cfg) {
  const double d = std::max(distance_m, cfg.min_distance_m);
  return cfg.pathloss_ref * std::pow(d, -cfg.pathloss_exp);
}

ChannelTrace generate_trace(const MobilityConfig& cfg, int n_users, int horizon,
                            double slot_s, std::uint64_t seed) {
  if (n_users <= 0 || horizon <= 0 || slot_s <= 0)
    throw std::invalid_argument("trace needs positive users, horizon and slot length");

  ChannelTrace trace;
  trace.gains.resize(n_users, horizon);
  trace.predicted.resize(n_users, horizon);
  trace.fading_re.resize(n_users, horizon);
  trace.fading_im.resize(n_users, horizon);
  trace.seed = seed;
  trace.generator = CounterRng::kAlgorithm;

  const double rho = doppler_correlation(cfg.speed_mps, cfg.carrier_hz, slot_s,
                                         cfg.wave_speed_mps);
  const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  const CounterRng root(seed);

  for (int m = 0; m < n_users; ++m) {
    CounterRng rng = root.stream(static_cast<std::uint64_t>(m));
    Walker walk;
    {
      const double r = cfg.cell_radius_m * std::sqrt(rng.next_double());
      const double pos_ang = kTwoPi * rng.next_double();
      const double dir_ang = kTwoPi * rng.next_double();
      walk = {r * std::cos(pos_ang), r * std::sin(pos_ang),
              std::cos(dir_ang), std::sin(dir_ang)};
    }

    double hr = 0, hi = 0, h0_power = 0;
    double rho_pow = 1.0; // rho^t, for the conditional-mean prediction
    for (int t = 0; t < horizon; ++t) {
      const double loss = path_loss(std::hypot(walk.px, walk.py), cfg);
      double z0, z1;
      rng.next_gaussian_pair(z0, z1);
      const double sigma = std::sqrt(loss / 2.0);
      if (t == 0) {
        hr = sigma * z0;
        hi = sigma * z1;
        h0_power = hr * hr + hi * hi;
      } else {
        hr = rho * hr + innov * sigma * z0;
        hi = rho * hi + innov * sigma * z1;
      }
      trace.gains(m, t) = hr * hr + hi * hi;
      trace.fading_re(m, t) = hr;
      trace.fading_im(m, t) = hi;
      const double rho2t = rho_pow * rho_pow;
      trace.predicted(m, t) = rho2t * h0_power + (1.0 - rho2t) * loss;
      rho_pow *= rho;
      step(walk, cfg.speed_mps * slot_s, cfg);
    }
  }
  return trace;
}

ChannelTrace average_traces(const std::vector<ChannelTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("cannot average zero traces");
  ChannelTrace out;
  out.gains = Mat::Zero(traces[0].gains.rows(), traces[0].gains.cols());
  out.predicted = Mat::Zero(out.gains.rows(), out.gains.cols());
  out.seed = traces[0].seed;
  out.generator = traces[0].generator;
  for (const auto& t : traces) {
    if (t.gains.rows() != out.gains.rows() || t.gains.cols() != out.gains.cols())
      throw std::invalid_argument("trace dimensions differ");
    out.gains += t.gains;
    out.predicted += t.predicted;
  }
  out.gains /= static_cast<double>(traces.size());
  out.predicted /= static_cast<double>(traces.size());
  return out;
}

void write_trace_csv(const std::string& path, const ChannelTrace& trace) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "user,slot,gain\n";
  char buf[64];
  for (int m = 0; m < trace.gains.rows(); ++m)
    for (int t = 0; t < trace.gains.cols(); ++t) {
      std::snprintf(buf, sizeof(buf), "%.17g", trace.gains(m, t));
      f << m << ',' << t << ',' << buf << '\n';
    }
}

ChannelTrace read_trace_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string header;
  std::getline(f, header);
  if (header.rfind("user,slot,gain", 0) != 0)
    throw std::runtime_error("unexpected trace CSV header in " + path);

  std::vector<std::tuple<int, int, double>> cells;
  int max_user = -1, max_slot = -1;
  int user, slot;
  char comma;
  double gain;
  while (f >> user >> comma >> slot >> comma >> gain) {
    cells.emplace_back(user, slot, gain);
    max_user = std::max(max_user, user);
    max_slot = std::max(max_slot, slot);
  }
  if (cells.empty()) throw std::runtime_error("empty trace CSV " + path);

  ChannelTrace trace;
  trace.generator = CounterRng::kAlgorithm;
  trace.gains = Mat::Zero(max_user + 1, max_slot + 1);
  trace.predicted = Mat::Zero(max_user + 1, max_slot + 1);
  for (auto& [m, t, g] : cells) {
    trace.gains(m, t) = g;
    trace.predicted(m, t) = g;
  }
  return trace;
}

namespace {
constexpr std::uint32_t kCacheMagic = 0x46534348; // "FSCH"
constexpr std::uint32_t kCacheVersion = 1;
} // namespace

void write_trace_cache(const std::string& path, const ChannelTrace& trace) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const std::uint32_t rows = static_cast<std::uint32_t>(trace.gains.rows());
  const std::uint32_t cols = static_cast<std::uint32_t>(trace.gains.cols());
  f.write(reinterpret_cast<const char*>(&kCacheMagic), 4);
  f.write(reinterpret_cast<const char*>(&kCacheVersion), 4);
  f.write(reinterpret_cast<const char*>(&rows), 4);
  f.write(reinterpret_cast<const char*>(&cols), 4);
  f.write(reinterpret_cast<const char*>(&trace.seed), 8);
  f.write(reinterpret_cast<const char*>(trace.gains.data()),
          static_cast<std::streamsize>(sizeof(double) * rows * cols));
  f.write(reinterpret_cast<const char*>(trace.predicted.data()),
          static_cast<std::streamsize>(sizeof(double) * rows * cols));
}

ChannelTrace read_trace_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::uint32_t magic = 0, version = 0, rows = 0, cols = 0;
  f.read(reinterpret_cast<char*>(&magic), 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  if (magic != kCacheMagic || version != kCacheVersion)
    throw std::runtime_error("not a trace cache: " + path);
  f.read(reinterpret_cast<char*>(&rows), 4);
  f.read(reinterpret_cast<char*>(&cols), 4);
  ChannelTrace trace;
  trace.generator = CounterRng::kAlgorithm;
  f.read(reinterpret_cast<char*>(&trace.seed), 8);
  trace.gains.resize(rows, cols);
  trace.predicted.resize(rows, cols);
  f.read(reinterpret_cast<char*>(trace.gains.data()),
         static_cast<std::streamsize>(sizeof(double) * rows * cols));
  f.read(reinterpret_cast<char*>(trace.predicted.data()),
         static_cast<std::streamsize>(sizeof(double) * rows * cols));
  if (!f) throw std::runtime_error("truncated trace cache: " + path);
  return trace;
}

} // namespace fedsched
