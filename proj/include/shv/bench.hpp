#pragma once

// Measurement harness: overhead metric, linear CPU-load model, least-squares
// fit, and in-process sweeps of tester pushers against a collect agent.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace shv::bench {

struct OverheadSample {
  double t_ref_s = 0.0;     // T_r, must be > 0
  double t_pusher_s = 0.0;  // T_p
};

/// (T_p - T_r) / T_r; negative when the run beat the reference.
/// Throws Error{degenerate_input} when T_r <= 0.
double overhead(const OverheadSample& s);
/// Heatmap value: overhead clamped at 0.
double reported_overhead(const OverheadSample& s);

/// Per-core CPU load as a linear function of sensor rate, through two
/// calibration points.
class ScalingModel {
public:
  /// Throws Error{invalid_model} when a == b.
  ScalingModel(double a, double load_a, double b, double load_b);
  double predict(double rate) const;

private:
  double a_, la_, b_, lb_;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares of load on rate. Throws Error{degenerate_input}
/// with fewer than two distinct rates.
LinearFit fit(std::span<const std::pair<double, double>> points);

struct SweepCell {
  std::size_t pushers = 1;
  std::size_t sensors = 100;  // per pusher
  std::uint64_t interval_ms = 1000;
};

struct SweepConfig {
  std::vector<SweepCell> grid;
  std::uint64_t duration_ms = 30'000;
  double warmup_fraction = 0.1;
  std::size_t pusher_threads = 2;
  std::filesystem::path work_dir;  // per-cell stores; a temp dir when empty

  /// Cartesian product, pushers outermost.
  static std::vector<SweepCell> product(const std::vector<std::size_t>& pushers,
                                        const std::vector<std::size_t>& sensors,
                                        const std::vector<std::uint64_t>& intervals_ms);
};

struct SweepRow {
  SweepCell cell;
  double offered_rps = 0.0;
  double stored_rps = 0.0;
  double loss = 0.0;
  double pusher_cpu = 0.0;  // CPU seconds per wall second, all pushers
  double agent_cpu = 0.0;
  double pusher_rss_mb = 0.0;
  // Whole-run totals; offered = stored + dropped_pusher + dropped_agent.
  std::uint64_t offered = 0;
  std::uint64_t stored = 0;
  std::uint64_t dropped_pusher = 0;
  std::uint64_t dropped_agent = 0;
};

inline constexpr std::string_view sweep_header =
  "pushers,sensors,interval_ms,offered_rps,stored_rps,loss,pusher_cpu,agent_cpu,pusher_rss_mb";

/// Throws Error{harness_failure}.
SweepRow run_cell(const SweepCell& cell, const SweepConfig& cfg);
std::vector<SweepRow> run_sweep(const SweepConfig& cfg);
std::string sweep_csv(std::span<const SweepRow> rows);

/// CPU seconds consumed by the whole process so far.
double process_cpu_s();
/// Peak resident set size of the process in MiB.
double peak_rss_mb();

} // namespace shv::bench
