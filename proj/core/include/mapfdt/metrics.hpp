#pragma once

#include <span>

#include "mapfdt/policy.hpp"

namespace mapfdt {

struct EpisodeMetrics {
  bool success = false;
  int soc = 0;              // defined only when success
  int makespan = 0;         // defined only when success
  double collision_rate = 0.0;  // collisions / makespan, successful episodes only
};

// Throws std::invalid_argument for internally inconsistent records
// (arrival times disagreeing with positions/goals, bad durations).
EpisodeMetrics episode_metrics(const EpisodeRecord& record);

struct MetricsGroupKey {
  int map_size = 0;
  int n_agents = 0;
  double density = 0.0;
  std::string advisor_kind;
  double fraction = 0.0;

  auto operator<=>(const MetricsGroupKey&) const = default;
};

struct MetricsRow {
  MetricsGroupKey key;
  int episodes = 0;
  int successes = 0;
  double csr = 0.0;  // fraction of episodes where every agent succeeded
  double sr = 0.0;   // same quantity, success-rate alias
  // means over successful episodes; NaN when no episode succeeded
  double mean_soc = 0.0;
  double mean_makespan = 0.0;
  double mean_collision_rate = 0.0;
  // normal-approximation half-widths of 95% confidence intervals
  double ci95_makespan = 0.0;
  double ci95_csr = 0.0;
};

// Group by (map size, agents, density, advisor kind, fraction); deterministic
// row order (sorted keys). Groups with zero successes carry NaN aggregates.
std::vector<MetricsRow> aggregate(std::span<const EpisodeRecord> records);

std::string metrics_to_csv(std::span<const MetricsRow> rows);
std::string metrics_to_json(std::span<const MetricsRow> rows);

struct SocCapOptions {
  // alternative failure convention: count failed agents at the horizon
  bool cap_failures_at_horizon = false;
};
// soc under the capped convention, defined for failed episodes as well
int soc_with_cap(const EpisodeRecord& record);

}  // namespace mapfdt
