#pragma once

// Domain types for single-day staypoint trajectories on a lat/lon grid, and
// the constraint predicates used by controlled generation.

#include <compare>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace trajforge {

inline constexpr double kEarthRadiusKm = 6371.0088;

// Great-circle distance in kilometers.
double haversine_km(double lat1, double lon1, double lat2, double lon2) noexcept;

// Axis-aligned lat/lon box divided into n_rows x n_cols square cells. Cell ids
// are 1-based and row-major from the southwest corner. Longitude width uses a
// fixed km-per-degree taken at the box's mid-latitude.
struct GridSpec {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double cell_km = 1.0;
  int n_rows = 1;
  int n_cols = 1;

  void validate() const;  // throws InvalidConfig
  [[nodiscard]] int cell_count() const noexcept { return n_rows * n_cols; }
  [[nodiscard]] double cell_lat_deg() const noexcept;
  [[nodiscard]] double cell_lon_deg() const noexcept;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct TimeSpec {
  int slot_minutes = 15;

  void validate() const;  // throws InvalidConfig
  [[nodiscard]] int slots_per_day() const noexcept { return 1440 / slot_minutes; }
  [[nodiscard]] int slot_seconds() const noexcept { return slot_minutes * 60; }

  friend bool operator==(const TimeSpec&, const TimeSpec&) = default;
};

// (arrival slot, cell id, duration in slots)
struct Visit {
  int arrival = 0;
  int location = 1;
  int duration = 1;

  friend auto operator<=>(const Visit&, const Visit&) = default;
};

struct Trajectory {
  std::string id;
  std::vector<Visit> visits;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct TrajectoryDataset {
  std::vector<Trajectory> trajectories;
  GridSpec grid;
  TimeSpec timespec;
};

// A required visit: some visit at `location` must arrive within
// [t_start, t_end], both ends inclusive.
struct Constraint {
  int location = 1;
  int t_start = 0;
  int t_end = 0;
  std::optional<int> duration_hint;

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

struct ConstraintSet {
  std::optional<std::string> source_id;
  std::vector<Constraint> constraints;

  friend bool operator==(const ConstraintSet&, const ConstraintSet&) = default;
};

// Throws InvalidConfig when a constraint does not fit the grid or the day.
void validate_constraint(const Constraint& c, const GridSpec& grid, const TimeSpec& ts);

// Throws OutOfBounds when (lat, lon) lies outside the half-open box.
int discretize_location(double lat, double lon, const GridSpec& grid);

// Seconds-of-day to slot index; throws OutOfRange outside [0, 86400).
int discretize_time(double seconds_of_day, const TimeSpec& ts);

// Geographic center of a cell; throws InvalidCell.
std::pair<double, double> cell_centroid(int cell, const GridSpec& grid);

bool satisfies(const Trajectory& traj, const Constraint& c) noexcept;

struct ConstraintReport {
  std::vector<bool> per_constraint;
  bool all = true;
};

ConstraintReport satisfies_all(const Trajectory& traj, const ConstraintSet& cs);

struct Violation {
  enum class Kind {
    Empty,
    LocationOutOfRange,
    ArrivalOutOfRange,
    DurationOutOfRange,
    NotIncreasing,
    Overlap,
    DayBoundary,
  };
  Kind kind;
  std::size_t visit_index = 0;
  std::string message;
};

const char* to_string(Violation::Kind kind) noexcept;

// Every rule is checked and every violation returned; an empty result means
// the trajectory is valid.
std::vector<Violation> validate_trajectory(const Trajectory& traj, const TimeSpec& ts, const GridSpec& grid);

inline bool is_valid(const Trajectory& traj, const TimeSpec& ts, const GridSpec& grid) {
  return validate_trajectory(traj, ts, grid).empty();
}

}  // namespace trajforge
