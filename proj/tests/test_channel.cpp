#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fedsched/channel.hpp"

using namespace fedsched;

TEST_CASE("doppler correlation matches the reference configuration") {
  // 10 km/h at 900 MHz over 5 ms slots
  const double rho = doppler_correlation(10.0 / 3.6, 900e6, 5e-3);
  CHECK(rho == doctest::Approx(0.9829385302856681).epsilon(1e-5));
  CHECK(doppler_correlation(0.0, 900e6, 5e-3) == doctest::Approx(1.0));
  // faster movement decorrelates
  CHECK(doppler_correlation(30.0 / 3.6, 900e6, 5e-3) < rho);
}

TEST_CASE("path loss law and near-field clamp") {
  MobilityConfig cfg;
  CHECK(path_loss(100.0, cfg) == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(path_loss(1000.0, cfg) == doctest::Approx(1e-11).epsilon(1e-12));
  CHECK(path_loss(0.5, cfg) == doctest::Approx(cfg.pathloss_ref));
  CHECK(path_loss(0.0, cfg) == doctest::Approx(cfg.pathloss_ref));
}

TEST_CASE("traces are reproducible per seed and labeled with the generator") {
  MobilityConfig cfg;
  const ChannelTrace a = generate_trace(cfg, 3, 10, 5e-3, 42);
  const ChannelTrace b = generate_trace(cfg, 3, 10, 5e-3, 42);
  const ChannelTrace c = generate_trace(cfg, 3, 10, 5e-3, 43);
  CHECK(a.gains == b.gains);
  CHECK(a.gains != c.gains);
  CHECK(a.generator == std::string("splitmix64"));
  CHECK(a.gains.rows() == 3);
  CHECK(a.gains.cols() == 10);
  CHECK((a.gains.array() >= 0).all());

  // adding users keeps earlier users' streams unchanged
  const ChannelTrace wide = generate_trace(cfg, 5, 10, 5e-3, 42);
  CHECK(wide.gains.topRows(3) == a.gains);
}

TEST_CASE("mean fading power follows the path loss") {
  MobilityConfig cfg;
  cfg.cell_radius_m = 1e-6; // everyone sits at the near-field clamp distance
  cfg.speed_mps = 0;
  const int users = 20000;
  const ChannelTrace t = generate_trace(cfg, users, 1, 5e-3, 7);
  const double mean = t.gains.col(0).mean();
  CHECK(mean / cfg.pathloss_ref == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("lag-1 fading autocorrelation tracks the Doppler value") {
  MobilityConfig cfg; // defaults: 10 km/h, 900 MHz
  const int users = 2000, horizon = 50;
  const ChannelTrace t = generate_trace(cfg, users, horizon, 5e-3, 11);
  double num = 0, den = 0;
  for (int m = 0; m < users; ++m)
    for (int s = 0; s + 1 < horizon; ++s) {
      num += t.fading_re(m, s + 1) * t.fading_re(m, s) +
             t.fading_im(m, s + 1) * t.fading_im(m, s);
      den += t.fading_re(m, s) * t.fading_re(m, s) + t.fading_im(m, s) * t.fading_im(m, s);
    }
  const double rho_hat = num / den;
  const double rho = doppler_correlation(cfg.speed_mps, cfg.carrier_hz, 5e-3);
  CHECK(std::abs(rho_hat - rho) < 0.05);
  CHECK(rho == doctest::Approx(0.9829).epsilon(5e-3));
}

TEST_CASE("prediction is exact for a static user") {
  MobilityConfig cfg;
  cfg.speed_mps = 0;
  const ChannelTrace t = generate_trace(cfg, 4, 8, 5e-3, 3);
  CHECK((t.gains - t.predicted).lpNorm<Eigen::Infinity>() <
        1e-12 * t.gains.lpNorm<Eigen::Infinity>());
  // moving users decorrelate: prediction drifts toward the local mean
  MobilityConfig fast = cfg;
  fast.speed_mps = 200.0;
  const ChannelTrace f = generate_trace(fast, 4, 8, 5e-3, 3);
  CHECK((f.gains - f.predicted).lpNorm<Eigen::Infinity>() > 0);
}

TEST_CASE("boundary policies keep or fold the walk") {
  MobilityConfig cfg;
  cfg.speed_mps = 400.0; // 2 m per slot; long horizon walks past the rim
  cfg.cell_radius_m = 10.0;
  for (auto policy : {MobilityConfig::Boundary::kNone, MobilityConfig::Boundary::kReflect,
                      MobilityConfig::Boundary::kWrap}) {
    cfg.boundary = policy;
    const ChannelTrace t = generate_trace(cfg, 2, 40, 5e-3, 5);
    CHECK((t.gains.array() >= 0).all());
    CHECK(t.gains.array().isFinite().all());
  }
}

TEST_CASE("csv and cache round trips") {
  MobilityConfig cfg;
  const ChannelTrace t = generate_trace(cfg, 3, 5, 5e-3, 99);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string csv = (dir / "fedsched_trace_test.csv").string();
  const std::string bin = (dir / "fedsched_trace_test.bin").string();

  write_trace_csv(csv, t);
  const ChannelTrace back = read_trace_csv(csv);
  CHECK(back.gains.rows() == t.gains.rows());
  CHECK(back.gains.cols() == t.gains.cols());
  CHECK((back.gains - t.gains).lpNorm<Eigen::Infinity>() == 0.0); // %.17g is lossless

  write_trace_cache(bin, t);
  const ChannelTrace cache = read_trace_cache(bin);
  CHECK(cache.gains == t.gains);
  CHECK(cache.predicted == t.predicted);
  CHECK(cache.seed == t.seed);

  CHECK_THROWS(read_trace_cache(csv)); // wrong magic
  std::remove(csv.c_str());
  std::remove(bin.c_str());
}

TEST_CASE("trace averaging") {
  ChannelTrace a, b;
  a.gains = Mat::Constant(2, 2, 1.0);
  a.predicted = a.gains;
  b.gains = Mat::Constant(2, 2, 3.0);
  b.predicted = b.gains;
  const ChannelTrace avg = average_traces({a, b});
  CHECK(avg.gains(0, 0) == doctest::Approx(2.0));
  CHECK_THROWS(average_traces({}));
}
