#include "trajforge/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {

constexpr double kKmPerDegree = kEarthRadiusKm * std::numbers::pi / 180.0;
// Absorbs rounding when a point sits exactly on a cell edge.
constexpr double kEdgeSnap = 1e-9;

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

double haversine_km(double lat1, double lon1, double lat2, double lon2) noexcept {
  const double dlat = radians(lat2 - lat1);
  const double dlon = radians(lon2 - lon1);
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(radians(lat1)) * std::cos(radians(lat2)) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

void GridSpec::validate() const {
  if (!(cell_km > 0.0) || !std::isfinite(cell_km)) throw Error(ErrorCode::InvalidConfig, "grid cell_km must be > 0");
  if (n_rows < 1 || n_cols < 1) throw Error(ErrorCode::InvalidConfig, "grid needs at least one row and column");
  if (origin_lat < -90.0 || origin_lat > 90.0 || origin_lon < -180.0 || origin_lon > 180.0)
    throw Error(ErrorCode::InvalidConfig, "grid origin is not a valid coordinate");
}

double GridSpec::cell_lat_deg() const noexcept { return cell_km / kKmPerDegree; }

double GridSpec::cell_lon_deg() const noexcept {
  const double mid_lat = origin_lat + n_rows * cell_lat_deg() / 2.0;
  return cell_km / (kKmPerDegree * std::cos(radians(mid_lat)));
}

void TimeSpec::validate() const {
  if (slot_minutes < 1 || 1440 % slot_minutes != 0)
    throw Error(ErrorCode::InvalidConfig, "slot_minutes must divide 1440");
}

void validate_constraint(const Constraint& c, const GridSpec& grid, const TimeSpec& ts) {
  if (c.location < 1 || c.location > grid.cell_count())
    throw Error(ErrorCode::InvalidConfig, "constraint location " + std::to_string(c.location) + " outside grid");
  if (c.t_start < 0 || c.t_start > c.t_end || c.t_end >= ts.slots_per_day())
    throw Error(ErrorCode::InvalidConfig, "constraint window [" + std::to_string(c.t_start) + "," +
                                              std::to_string(c.t_end) + "] is not a valid slot range");
  if (c.duration_hint && (*c.duration_hint < 1 || *c.duration_hint > ts.slots_per_day()))
    throw Error(ErrorCode::InvalidConfig, "constraint duration hint out of range");
}

int discretize_location(double lat, double lon, const GridSpec& grid) {
  const double row_f = (lat - grid.origin_lat) / grid.cell_lat_deg();
  const double col_f = (lon - grid.origin_lon) / grid.cell_lon_deg();
  const auto row = static_cast<long long>(std::floor(row_f + kEdgeSnap));
  const auto col = static_cast<long long>(std::floor(col_f + kEdgeSnap));
  if (!std::isfinite(row_f) || !std::isfinite(col_f) || row < 0 || col < 0 || row >= grid.n_rows ||
      col >= grid.n_cols) {
    throw Error(ErrorCode::OutOfBounds, "point (" + std::to_string(lat) + ", " + std::to_string(lon) +
                                            ") is outside the grid");
  }
  return static_cast<int>(row * grid.n_cols + col + 1);
}

int discretize_time(double seconds_of_day, const TimeSpec& ts) {
  if (!(seconds_of_day >= 0.0) || seconds_of_day >= 86400.0)
    throw Error(ErrorCode::OutOfRange, "seconds of day " + std::to_string(seconds_of_day) + " not in [0, 86400)");
  return static_cast<int>(std::floor(seconds_of_day / ts.slot_seconds()));
}

std::pair<double, double> cell_centroid(int cell, const GridSpec& grid) {
  if (cell < 1 || cell > grid.cell_count())
    throw Error(ErrorCode::InvalidCell, "cell " + std::to_string(cell) + " not in grid");
  const int row = (cell - 1) / grid.n_cols;
  const int col = (cell - 1) % grid.n_cols;
  return {grid.origin_lat + (row + 0.5) * grid.cell_lat_deg(), grid.origin_lon + (col + 0.5) * grid.cell_lon_deg()};
}

bool satisfies(const Trajectory& traj, const Constraint& c) noexcept {
  return std::any_of(traj.visits.begin(), traj.visits.end(), [&](const Visit& v) {
    return v.location == c.location && c.t_start <= v.arrival && v.arrival <= c.t_end;
  });
}

ConstraintReport satisfies_all(const Trajectory& traj, const ConstraintSet& cs) {
  ConstraintReport report;
  report.per_constraint.reserve(cs.constraints.size());
  for (const auto& c : cs.constraints) {
    const bool ok = satisfies(traj, c);
    report.per_constraint.push_back(ok);
    report.all = report.all && ok;
  }
  return report;
}

const char* to_string(Violation::Kind kind) noexcept {
  switch (kind) {
    case Violation::Kind::Empty: return "empty";
    case Violation::Kind::LocationOutOfRange: return "location_out_of_range";
    case Violation::Kind::ArrivalOutOfRange: return "arrival_out_of_range";
    case Violation::Kind::DurationOutOfRange: return "duration_out_of_range";
    case Violation::Kind::NotIncreasing: return "not_increasing";
    case Violation::Kind::Overlap: return "overlap";
    case Violation::Kind::DayBoundary: return "day_boundary";
  }
  return "unknown";
}

std::vector<Violation> validate_trajectory(const Trajectory& traj, const TimeSpec& ts, const GridSpec& grid) {
  std::vector<Violation> out;
  const int slots = ts.slots_per_day();
  const auto& v = traj.visits;
  if (v.empty()) out.push_back({Violation::Kind::Empty, 0, "trajectory has no visits"});

  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].location < 1 || v[i].location > grid.cell_count())
      out.push_back({Violation::Kind::LocationOutOfRange, i, "location " + std::to_string(v[i].location)});
    if (v[i].arrival < 0 || v[i].arrival >= slots)
      out.push_back({Violation::Kind::ArrivalOutOfRange, i, "arrival " + std::to_string(v[i].arrival)});
    if (v[i].duration < 1 || v[i].duration > slots)
      out.push_back({Violation::Kind::DurationOutOfRange, i, "duration " + std::to_string(v[i].duration)});
    if (i > 0) {
      if (v[i].arrival <= v[i - 1].arrival) {
        out.push_back({Violation::Kind::NotIncreasing, i,
                       "arrival " + std::to_string(v[i].arrival) + " after " + std::to_string(v[i - 1].arrival)});
      } else if (v[i - 1].arrival + v[i - 1].duration > v[i].arrival) {
        out.push_back({Violation::Kind::Overlap, i,
                       std::to_string(v[i - 1].arrival) + "+" + std::to_string(v[i - 1].duration) + " > " +
                           std::to_string(v[i].arrival)});
      }
    }
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].arrival + v[i].duration > slots && v[i].arrival < slots && v[i].duration <= slots)
      out.push_back({Violation::Kind::DayBoundary, i,
                     "visit ends at slot " + std::to_string(v[i].arrival + v[i].duration)});
  }
  return out;
}

}  // namespace trajforge
