#include "trajforge/ingest.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {

constexpr std::size_t kMaxReportedErrors = 20;
constexpr std::array<const char*, 4> kColumns = {"user_id", "timestamp", "lat", "lon"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

GpsRecord parse_row(std::string_view line, std::size_t line_no, const std::array<std::size_t, 4>& idx,
                    std::size_t n_fields) {
  const auto fields = split_csv(line);
  if (fields.size() != n_fields) {
    throw MalformedRow(line_no, std::string(line), MalformedRow::Reason::FieldCount,
                       "expected " + std::to_string(n_fields) + " fields, got " + std::to_string(fields.size()));
  }
  GpsRecord rec;
  rec.user_id = std::string(fields[idx[0]]);
  if (rec.user_id.empty())
    throw MalformedRow(line_no, std::string(line), MalformedRow::Reason::FieldCount, "empty user_id");
  double* targets[3] = {&rec.timestamp, &rec.lat, &rec.lon};
  for (std::size_t k = 0; k < 3; ++k) {
    if (!parse_double(fields[idx[k + 1]], *targets[k])) {
      throw MalformedRow(line_no, std::string(line), MalformedRow::Reason::NonNumericField,
                         std::string("non-numeric ") + kColumns[k + 1]);
    }
  }
  if (rec.lat < -90.0 || rec.lat > 90.0 || rec.lon < -180.0 || rec.lon > 180.0)
    throw MalformedRow(line_no, std::string(line), MalformedRow::Reason::CoordinateRange, "coordinate out of range");
  return rec;
}

}  // namespace

nlohmann::json IngestStats::to_json() const {
  return {{"records_read", records_read},
          {"malformed_rows", malformed_rows},
          {"users", users},
          {"staypoints", staypoints},
          {"dropped_out_of_bounds", dropped_out_of_bounds},
          {"dropped_collisions", dropped_collisions},
          {"trajectories_before_filter", trajectories_before_filter},
          {"trajectories", trajectories},
          {"errors", errors}};
}

std::vector<GpsRecord> parse_gps_csv(std::istream& in, std::vector<std::string>* errors) {
  std::vector<GpsRecord> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const auto header = split_csv(line);
  std::array<std::size_t, 4> idx{};
  for (std::size_t k = 0; k < kColumns.size(); ++k) {
    const auto it = std::find(header.begin(), header.end(), kColumns[k]);
    if (it == header.end())
      throw Error(ErrorCode::MissingColumn, std::string("CSV header lacks column '") + kColumns[k] + "'");
    idx[k] = static_cast<std::size_t>(it - header.begin());
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse_row(line, line_no, idx, header.size()));
    } catch (const MalformedRow& e) {
      if (errors == nullptr) throw;
      errors->push_back(e.what());
    }
  }
  return out;
}

std::map<std::string, std::vector<GpsRecord>> group_by_user(std::vector<GpsRecord> records) {
  std::map<std::string, std::vector<GpsRecord>> groups;
  for (auto& r : records) groups[r.user_id].push_back(std::move(r));
  for (auto& [user, recs] : groups) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const GpsRecord& a, const GpsRecord& b) { return a.timestamp < b.timestamp; });
  }
  return groups;
}

std::vector<Staypoint> extract_staypoints(std::span<const GpsRecord> records, double radius_km, double min_minutes) {
  std::vector<Staypoint> out;
  const double min_seconds = min_minutes * 60.0;
  const std::size_t n = records.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && haversine_km(records[i].lat, records[i].lon, records[j].lat, records[j].lon) <= radius_km) ++j;
    if (records[j - 1].timestamp - records[i].timestamp >= min_seconds) {
      Staypoint sp;
      double lat = 0.0, lon = 0.0;
      for (std::size_t k = i; k < j; ++k) {
        lat += records[k].lat;
        lon += records[k].lon;
      }
      const auto count = static_cast<double>(j - i);
      sp.lat = lat / count;
      sp.lon = lon / count;
      sp.t_arrive = records[i].timestamp;
      sp.t_leave = records[j - 1].timestamp;
      sp.first = i;
      sp.last = j - 1;
      out.push_back(sp);
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

std::vector<Trajectory> split_days(std::span<const Staypoint> staypoints, const GridSpec& grid, const TimeSpec& ts,
                                   const std::string& user_id, IngestStats* stats) {
  std::map<long long, std::vector<Visit>> days;
  const int slots = ts.slots_per_day();
  for (const auto& sp : staypoints) {
    int location = 0;
    try {
      location = discretize_location(sp.lat, sp.lon, grid);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::OutOfBounds) throw;
      if (stats) ++stats->dropped_out_of_bounds;
      continue;
    }
    const auto day = static_cast<long long>(std::floor(sp.t_arrive / 86400.0));
    const double sod = sp.t_arrive - static_cast<double>(day) * 86400.0;
    const int arrival = discretize_time(std::min(sod, 86399.999), ts);
    auto duration = static_cast<int>(std::lround((sp.t_leave - sp.t_arrive) / ts.slot_seconds()));
    duration = std::clamp(duration, 1, slots - arrival);

    auto& visits = days[day];
    if (!visits.empty()) {
      auto& prev = visits.back();
      if (arrival <= prev.arrival) {
        if (stats) ++stats->dropped_collisions;
        continue;
      }
      prev.duration = std::min(prev.duration, arrival - prev.arrival);
    }
    visits.push_back({arrival, location, duration});
  }

  std::vector<Trajectory> out;
  out.reserve(days.size());
  for (auto& [day, visits] : days) out.push_back({user_id + "-" + std::to_string(day), std::move(visits)});
  return out;
}

TrajectoryDataset filter_short(TrajectoryDataset ds, int min_visits) {
  std::erase_if(ds.trajectories, [&](const Trajectory& t) { return static_cast<int>(t.visits.size()) < min_visits; });
  return ds;
}

TrajectoryDataset build_dataset(std::istream& csv, const GridSpec& grid, const TimeSpec& ts,
                                const IngestParams& params, IngestStats* stats) {
  grid.validate();
  ts.validate();
  IngestStats local;
  IngestStats& st = stats ? *stats : local;

  std::vector<std::string> errors;
  auto records = parse_gps_csv(csv, &errors);
  st.records_read = records.size() + errors.size();
  st.malformed_rows = errors.size();
  for (std::size_t k = 0; k < errors.size() && k < kMaxReportedErrors; ++k) st.errors.push_back(errors[k]);

  TrajectoryDataset ds;
  ds.grid = grid;
  ds.timespec = ts;
  const auto groups = group_by_user(std::move(records));
  st.users = groups.size();
  for (const auto& [user, recs] : groups) {
    const auto sps = extract_staypoints(recs, params.radius_km, params.min_minutes);
    st.staypoints += sps.size();
    for (auto& t : split_days(sps, grid, ts, user, &st)) ds.trajectories.push_back(std::move(t));
  }
  st.trajectories_before_filter = ds.trajectories.size();
  ds = filter_short(std::move(ds), params.min_visits);
  st.trajectories = ds.trajectories.size();
  return ds;
}

TrajectoryDataset build_dataset(const std::filesystem::path& csv, const GridSpec& grid, const TimeSpec& ts,
                                const IngestParams& params, IngestStats* stats) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + csv.string());
  return build_dataset(in, grid, ts, params, stats);
}

}  // namespace trajforge
