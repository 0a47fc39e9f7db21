#pragma once

// Seeded generators shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "trajforge/core.hpp"
#include "trajforge/ingest.hpp"
#include "trajforge/rng.hpp"

namespace tfsupport {

using namespace trajforge;

inline GridSpec small_grid() { return GridSpec{39.9, 116.3, 1.0, 4, 5}; }

// Any valid trajectory: sorted, non-overlapping, inside the day.
inline Trajectory random_trajectory(Rng& rng, const GridSpec& grid, const TimeSpec& ts, int min_len = 1,
                                    int max_len = 8, const std::string& id = "t") {
  const int slots = ts.slots_per_day();
  for (;;) {
    const int len = static_cast<int>(uniform_int(rng, min_len, max_len));
    Trajectory t{id, {}};
    int cursor = static_cast<int>(uniform_int(rng, 0, slots / 4));
    bool fits = true;
    for (int k = 0; k < len; ++k) {
      const int dur = static_cast<int>(uniform_int(rng, 1, 8));
      if (cursor + dur > slots) {
        fits = false;
        break;
      }
      t.visits.push_back({cursor, static_cast<int>(uniform_int(rng, 1, grid.cell_count())), dur});
      cursor += dur + static_cast<int>(uniform_int(rng, 0, 6));
    }
    if (fits) return t;
  }
}

inline TrajectoryDataset random_dataset(Rng& rng, std::size_t n, const GridSpec& grid, const TimeSpec& ts,
                                        int min_len = 1, int max_len = 8) {
  TrajectoryDataset ds{{}, grid, ts};
  for (std::size_t i = 0; i < n; ++i)
    ds.trajectories.push_back(random_trajectory(rng, grid, ts, min_len, max_len, "t" + std::to_string(i)));
  return ds;
}

// Routine-like corpus for memorization: every cell has a fixed successor (one
// cycle through the grid), first arrivals are pairwise distinct and visits are
// separated by at least two idle slots.
inline TrajectoryDataset routine_corpus(std::uint64_t seed, std::size_t n = 32, int min_len = 3, int max_len = 6) {
  Rng rng = make_rng(seed, "routine-corpus");
  TrajectoryDataset ds{{}, small_grid(), TimeSpec{}};
  const int cells = ds.grid.cell_count();
  std::vector<int> cycle(static_cast<std::size_t>(cells));
  std::iota(cycle.begin(), cycle.end(), 1);
  shuffle(std::span<int>(cycle), rng);
  std::vector<int> successor(static_cast<std::size_t>(cells) + 1);
  for (std::size_t k = 0; k < cycle.size(); ++k) successor[static_cast<std::size_t>(cycle[k])] = cycle[(k + 1) % cycle.size()];

  std::vector<int> starts(48);
  std::iota(starts.begin(), starts.end(), 0);
  shuffle(std::span<int>(starts), rng);
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      Trajectory t{"r" + std::to_string(i), {}};
      const int len = static_cast<int>(uniform_int(rng, min_len, max_len));
      int cursor = starts[i % starts.size()];
      int loc = static_cast<int>(uniform_int(rng, 1, cells));
      for (int k = 0; k < len; ++k) {
        const int dur = static_cast<int>(uniform_int(rng, 1, 6));
        t.visits.push_back({cursor, loc, dur});
        cursor += dur + static_cast<int>(uniform_int(rng, 2, 4));
        loc = successor[static_cast<std::size_t>(loc)];
      }
      if (t.visits.back().arrival + t.visits.back().duration <= ds.timespec.slots_per_day()) {
        ds.trajectories.push_back(std::move(t));
        break;
      }
    }
  }
  return ds;
}

// Days that start anywhere between early morning and evening, each holding
// at least one visit arriving at slot 60 or later. Sequences are in
// chronological order, so the arrival a visit follows is always earlier.
inline TrajectoryDataset late_day_corpus(std::uint64_t seed, std::size_t n = 128) {
  Rng rng = make_rng(seed, "late-day-corpus");
  TrajectoryDataset ds{{}, small_grid(), TimeSpec{}};
  const int cells = ds.grid.cell_count();
  const int slots = ds.timespec.slots_per_day();
  while (ds.trajectories.size() < n) {
    Trajectory t{"d" + std::to_string(ds.trajectories.size()), {}};
    const int len = static_cast<int>(uniform_int(rng, 3, 5));
    int cursor = static_cast<int>(uniform_int(rng, 4, 72));
    for (int k = 0; k < len; ++k) {
      const int dur = static_cast<int>(uniform_int(rng, 1, 6));
      t.visits.push_back({cursor, static_cast<int>(uniform_int(rng, 1, cells)), dur});
      cursor += dur + static_cast<int>(uniform_int(rng, 1, 8));
    }
    const auto& last = t.visits.back();
    if (last.arrival + last.duration <= slots && last.arrival >= 60) ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

// GPS trace of dwells (jittered around a point) joined by moves, one record
// every 1..10 minutes. At most `max_points` records.
inline std::vector<GpsRecord> random_trace(Rng& rng, std::size_t max_points) {
  std::vector<GpsRecord> out;
  double t = 1.7e9 + uniform01(rng) * 1e6;
  double lat = 39.9, lon = 116.3;
  const std::size_t n = 1 + uniform_index(rng, max_points);
  while (out.size() < n) {
    const bool dwell = uniform01(rng) < 0.6;
    const auto run = 1 + uniform_index(rng, 12);
    const double jitter = dwell ? 0.001 : 0.0;
    const double step = dwell ? 0.0 : 0.005 + uniform01(rng) * 0.02;
    const double heading = uniform01(rng) * 6.283185307179586;
    for (std::size_t k = 0; k < run && out.size() < n; ++k) {
      lat += step * std::cos(heading);
      lon += step * std::sin(heading);
      out.push_back({"u", t, lat + jitter * standard_normal(rng), lon + jitter * standard_normal(rng)});
      t += 60.0 * static_cast<double>(uniform_int(rng, 1, 10));
    }
  }
  return out;
}

// O(n^2) staypoint reference: precomputes every pairwise radius test, then
// reads [first, last] windows off the table.
inline std::vector<std::pair<std::size_t, std::size_t>> staypoint_oracle(const std::vector<GpsRecord>& pts, double radius_km,
                                                                  double min_minutes) {
  const std::size_t n = pts.size();
  std::vector<std::vector<bool>> near(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) near[i][j] = haversine_km(pts[i].lat, pts[i].lon, pts[j].lat, pts[j].lon) <= radius_km;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < n) {
    // largest j such that every k in [i, j) is near i
    std::size_t best = i + 1;
    for (std::size_t j = i + 1; j <= n; ++j) {
      bool all = true;
      for (std::size_t k = i; k < j; ++k) all = all && near[i][k];
      if (all) best = j;
    }
    if (pts[best - 1].timestamp - pts[i].timestamp >= min_minutes * 60.0) {
      out.emplace_back(i, best - 1);
      i = best;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace tfsupport
