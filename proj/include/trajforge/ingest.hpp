#pragma once

// Raw GPS records to single-day staypoint trajectories.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajforge/core.hpp"

namespace trajforge {

struct GpsRecord {
  std::string user_id;
  double timestamp = 0.0;  // epoch seconds
  double lat = 0.0;
  double lon = 0.0;
};

struct Staypoint {
  double lat = 0.0;  // mean of member points
  double lon = 0.0;
  double t_arrive = 0.0;
  double t_leave = 0.0;
  std::size_t first = 0;  // member index range [first, last] in the input
  std::size_t last = 0;

  friend bool operator==(const Staypoint&, const Staypoint&) = default;
};

struct IngestParams {
  double radius_km = 1.0;
  double min_minutes = 20.0;
  int min_visits = 3;
};

struct IngestStats {
  std::size_t records_read = 0;
  std::size_t malformed_rows = 0;
  std::size_t users = 0;
  std::size_t staypoints = 0;
  std::size_t dropped_out_of_bounds = 0;
  std::size_t dropped_collisions = 0;
  std::size_t trajectories_before_filter = 0;
  std::size_t trajectories = 0;
  std::vector<std::string> errors;  // first few parse errors, verbatim

  [[nodiscard]] nlohmann::json to_json() const;
};

// Reads `user_id,timestamp,lat,lon` CSV (columns in any order) in file order.
// Without an error sink the first bad row throws MalformedRow; with one, bad
// rows are recorded and skipped. A missing header column always throws.
std::vector<GpsRecord> parse_gps_csv(std::istream& in, std::vector<std::string>* errors = nullptr);

// Stable per-user grouping, each group sorted by timestamp.
std::map<std::string, std::vector<GpsRecord>> group_by_user(std::vector<GpsRecord> records);

// Anchor scan over one user's time-sorted records. A window grows from anchor
// i while points stay within radius_km of it; the window [i, j) becomes a
// staypoint when t[j-1] - t[i] >= min_minutes, and the scan resumes at j.
std::vector<Staypoint> extract_staypoints(std::span<const GpsRecord> records, double radius_km = 1.0,
                                          double min_minutes = 20.0);

// Discretizes staypoints and groups them by UTC calendar day. Dwells crossing
// midnight are clipped at the day boundary; a visit whose rounded duration
// runs into the next one is shortened, and one that lands in an already
// occupied slot is dropped. Out-of-grid staypoints are dropped and counted.
std::vector<Trajectory> split_days(std::span<const Staypoint> staypoints, const GridSpec& grid, const TimeSpec& ts,
                                   const std::string& user_id = "u", IngestStats* stats = nullptr);

TrajectoryDataset filter_short(TrajectoryDataset ds, int min_visits = 3);

TrajectoryDataset build_dataset(std::istream& csv, const GridSpec& grid, const TimeSpec& ts,
                                const IngestParams& params, IngestStats* stats = nullptr);
TrajectoryDataset build_dataset(const std::filesystem::path& csv, const GridSpec& grid, const TimeSpec& ts,
                                const IngestParams& params, IngestStats* stats = nullptr);

}  // namespace trajforge
