#include "mapfdt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

namespace mapfdt {

using nlohmann::json;

EpisodeMetrics episode_metrics(const EpisodeRecord& record) {
  const int n = record.n_agents;
  if (int(record.arrival_times.size()) != n || int(record.positions.size()) != n)
    throw std::invalid_argument("episode_metrics: record agent counts disagree");
  if (record.duration < 0 || record.duration > record.horizon)
    throw std::invalid_argument("episode_metrics: bad duration");

  EpisodeMetrics m;
  m.success = true;
  for (int i = 0; i < n; ++i) {
    const auto& arrival = record.arrival_times[size_t(i)];
    if (!arrival) {
      m.success = false;
      continue;
    }
    if (*arrival < 0 || *arrival > record.horizon)
      throw std::invalid_argument("episode_metrics: arrival time outside the horizon");
    if (int(record.positions[size_t(i)].size()) != *arrival + 1)
      throw std::invalid_argument("episode_metrics: position trace does not end at arrival");
  }
  if (!m.success) return m;

  int soc = 0, makespan = 0;
  for (int i = 0; i < n; ++i) {
    soc += *record.arrival_times[size_t(i)];
    makespan = std::max(makespan, *record.arrival_times[size_t(i)]);
  }
  m.soc = soc;
  m.makespan = makespan;
  m.collision_rate = makespan > 0 ? double(record.collisions.size()) / makespan : 0.0;
  return m;
}

int soc_with_cap(const EpisodeRecord& record) {
  int soc = 0;
  for (const auto& arrival : record.arrival_times)
    soc += arrival ? *arrival : record.horizon;
  return soc;
}

std::vector<MetricsRow> aggregate(std::span<const EpisodeRecord> records) {
  std::map<MetricsGroupKey, std::vector<const EpisodeRecord*>> groups;
  for (const EpisodeRecord& r : records)
    groups[{r.map_size, r.n_agents, r.density, r.advisor_kind, r.fraction}].push_back(&r);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<MetricsRow> rows;
  for (const auto& [key, group] : groups) {
    MetricsRow row;
    row.key = key;
    row.episodes = int(group.size());
    std::vector<double> socs, makespans, crs;
    for (const EpisodeRecord* r : group) {
      EpisodeMetrics m = episode_metrics(*r);
      if (!m.success) continue;
      ++row.successes;
      socs.push_back(double(m.soc));
      makespans.push_back(double(m.makespan));
      crs.push_back(m.collision_rate);
    }
    row.csr = row.episodes > 0 ? double(row.successes) / row.episodes : nan;
    row.sr = row.csr;
    auto mean = [&](const std::vector<double>& v) {
      if (v.empty()) return nan;
      double s = 0;
      for (double x : v) s += x;
      return s / double(v.size());
    };
    auto ci95 = [&](const std::vector<double>& v, double mu) {
      if (v.size() < 2 || std::isnan(mu)) return 0.0;
      double ss = 0;
      for (double x : v) ss += (x - mu) * (x - mu);
      double sd = std::sqrt(ss / double(v.size() - 1));
      return 1.96 * sd / std::sqrt(double(v.size()));
    };
    row.mean_soc = mean(socs);
    row.mean_makespan = mean(makespans);
    row.mean_collision_rate = mean(crs);
    row.ci95_makespan = ci95(makespans, row.mean_makespan);
    if (row.episodes > 0) {
      double p = row.csr;
      row.ci95_csr = 1.96 * std::sqrt(std::max(0.0, p * (1 - p)) / row.episodes);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string metrics_to_csv(std::span<const MetricsRow> rows) {
  std::string out =
      "map_size,n_agents,density,advisor,fraction,episodes,successes,sr,ms,cr,soc,"
      "ci95_ms,ci95_sr\n";
  for (const MetricsRow& r : rows) {
    std::ostringstream line;
    line << r.key.map_size << ',' << r.key.n_agents << ',' << r.key.density << ','
         << r.key.advisor_kind << ',' << r.key.fraction << ',' << r.episodes << ','
         << r.successes << ',' << num(r.sr) << ',' << num(r.mean_makespan) << ','
         << num(r.mean_collision_rate) << ',' << num(r.mean_soc) << ',' << num(r.ci95_makespan)
         << ',' << num(r.ci95_csr) << '\n';
    out += line.str();
  }
  return out;
}

std::string metrics_to_json(std::span<const MetricsRow> rows) {
  json out = json::array();
  for (const MetricsRow& r : rows) {
    json j;
    j["map_size"] = r.key.map_size;
    j["n_agents"] = r.key.n_agents;
    j["density"] = r.key.density;
    j["advisor"] = r.key.advisor_kind;
    j["fraction"] = r.key.fraction;
    j["episodes"] = r.episodes;
    j["successes"] = r.successes;
    j["sr"] = r.sr;
    j["csr"] = r.csr;
    if (!std::isnan(r.mean_makespan)) {
      j["ms"] = r.mean_makespan;
      j["cr"] = r.mean_collision_rate;
      j["soc"] = r.mean_soc;
      j["ci95_ms"] = r.ci95_makespan;
    } else {
      j["ms"] = nullptr;
      j["cr"] = nullptr;
      j["soc"] = nullptr;
      j["ci95_ms"] = nullptr;
    }
    j["ci95_sr"] = r.ci95_csr;
    out.push_back(std::move(j));
  }
  return out.dump(2) + "\n";
}

}  // namespace mapfdt
