#include "trajforge/io.hpp"

#include <fstream>
#include <sstream>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {

template <typename F>
auto guarded(std::size_t line_no, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, "line " + std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace

json to_json(const GridSpec& grid) {
  return {{"origin_lat", grid.origin_lat},
          {"origin_lon", grid.origin_lon},
          {"cell_km", grid.cell_km},
          {"n_rows", grid.n_rows},
          {"n_cols", grid.n_cols}};
}

json to_json(const TimeSpec& ts) { return {{"slot_minutes", ts.slot_minutes}, {"slots_per_day", ts.slots_per_day()}}; }

json to_json(const Trajectory& traj) {
  json visits = json::array();
  for (const auto& v : traj.visits) visits.push_back({v.arrival, v.location, v.duration});
  return {{"id", traj.id}, {"visits", std::move(visits)}};
}

json to_json(const ConstraintSet& cs) {
  json list = json::array();
  for (const auto& c : cs.constraints) {
    json dur = c.duration_hint ? json(*c.duration_hint) : json(nullptr);
    list.push_back({c.location, c.t_start, c.t_end, dur});
  }
  return {{"for", cs.source_id ? json(*cs.source_id) : json(nullptr)}, {"constraints", std::move(list)}};
}

GridSpec grid_from_json(const json& j) {
  GridSpec g;
  g.origin_lat = j.at("origin_lat").get<double>();
  g.origin_lon = j.at("origin_lon").get<double>();
  g.cell_km = j.at("cell_km").get<double>();
  g.n_rows = j.at("n_rows").get<int>();
  g.n_cols = j.at("n_cols").get<int>();
  g.validate();
  return g;
}

TimeSpec timespec_from_json(const json& j) {
  TimeSpec ts;
  ts.slot_minutes = j.at("slot_minutes").get<int>();
  ts.validate();
  if (j.contains("slots_per_day") && j.at("slots_per_day").get<int>() != ts.slots_per_day())
    throw Error(ErrorCode::InvalidConfig, "slots_per_day disagrees with slot_minutes");
  return ts;
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  t.id = j.at("id").get<std::string>();
  for (const auto& v : j.at("visits")) {
    if (!v.is_array() || v.size() != 3) throw Error(ErrorCode::Io, "visit must be [arrival, location, duration]");
    t.visits.push_back({v[0].get<int>(), v[1].get<int>(), v[2].get<int>()});
  }
  return t;
}

ConstraintSet constraint_set_from_json(const json& j) {
  ConstraintSet cs;
  if (j.contains("for") && !j.at("for").is_null()) cs.source_id = j.at("for").get<std::string>();
  for (const auto& c : j.at("constraints")) {
    if (!c.is_array() || c.size() != 4)
      throw Error(ErrorCode::Io, "constraint must be [location, t_start, t_end, duration_or_null]");
    Constraint con{c[0].get<int>(), c[1].get<int>(), c[2].get<int>(), std::nullopt};
    if (!c[3].is_null()) con.duration_hint = c[3].get<int>();
    cs.constraints.push_back(con);
  }
  return cs;
}

std::filesystem::path header_path_for(const std::filesystem::path& jsonl) {
  auto p = jsonl;
  p.replace_extension(".header.json");
  return p;
}

void write_trajectories(std::ostream& os, const std::vector<Trajectory>& trajs) {
  for (const auto& t : trajs) os << to_json(t).dump() << '\n';
}

std::vector<Trajectory> read_trajectories(std::istream& is) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(guarded(line_no, [&] { return trajectory_from_json(json::parse(line)); }));
  }
  return out;
}

void write_dataset(const std::filesystem::path& jsonl, const TrajectoryDataset& ds) {
  std::ostringstream body;
  write_trajectories(body, ds.trajectories);
  write_text_file(jsonl, body.str());
  const json header = {{"grid", to_json(ds.grid)}, {"timespec", to_json(ds.timespec)}};
  write_text_file(header_path_for(jsonl), header.dump(2) + "\n");
}

TrajectoryDataset read_dataset(const std::filesystem::path& jsonl) {
  TrajectoryDataset ds;
  const auto header_text = read_text_file(header_path_for(jsonl));
  guarded(0, [&] {
    const auto header = json::parse(header_text);
    ds.grid = grid_from_json(header.at("grid"));
    ds.timespec = timespec_from_json(header.at("timespec"));
    return 0;
  });
  std::istringstream body(read_text_file(jsonl));
  ds.trajectories = read_trajectories(body);
  const int slots = ds.timespec.slots_per_day();
  for (const auto& t : ds.trajectories) {
    for (const auto& v : t.visits) {
      if (v.location < 1 || v.location > ds.grid.cell_count() || v.arrival < 0 || v.arrival >= slots ||
          v.duration < 1 || v.duration > slots) {
        throw Error(ErrorCode::OutOfRange, "trajectory " + t.id + " has a visit outside the grid/timespec ranges");
      }
    }
  }
  return ds;
}

void write_constraints(std::ostream& os, const std::vector<ConstraintSet>& sets) {
  for (const auto& cs : sets) os << to_json(cs).dump() << '\n';
}

std::vector<ConstraintSet> read_constraints(std::istream& is) {
  std::vector<ConstraintSet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(guarded(line_no, [&] { return constraint_set_from_json(json::parse(line)); }));
  }
  return out;
}

std::vector<ConstraintSet> read_constraints(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  return read_constraints(in);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw Error(ErrorCode::Io, "write to " + path.string() + " failed");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace trajforge
