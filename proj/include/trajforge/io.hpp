#pragma once

// File formats shared by every subcommand:
//   trajectories  JSONL, one {"id": str, "visits": [[arrival, location, duration], ...]} per line
//   header        sidecar JSON next to the JSONL ("x.jsonl" -> "x.header.json") with grid and timespec
//   constraints   JSONL, one {"for": id|null, "constraints": [[loc, t_start, t_end, dur|null], ...]} per line

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajforge/core.hpp"

namespace trajforge {

using nlohmann::json;

json to_json(const GridSpec& grid);
json to_json(const TimeSpec& ts);
json to_json(const Trajectory& traj);
json to_json(const ConstraintSet& cs);

GridSpec grid_from_json(const json& j);
TimeSpec timespec_from_json(const json& j);
Trajectory trajectory_from_json(const json& j);
ConstraintSet constraint_set_from_json(const json& j);

std::filesystem::path header_path_for(const std::filesystem::path& jsonl);

void write_trajectories(std::ostream& os, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> read_trajectories(std::istream& is);

// Writes the JSONL file and its header sidecar.
void write_dataset(const std::filesystem::path& jsonl, const TrajectoryDataset& ds);

// Reads the JSONL file and its sidecar and checks every visit against the
// grid and timespec ranges.
TrajectoryDataset read_dataset(const std::filesystem::path& jsonl);

void write_constraints(std::ostream& os, const std::vector<ConstraintSet>& sets);
std::vector<ConstraintSet> read_constraints(std::istream& is);
std::vector<ConstraintSet> read_constraints(const std::filesystem::path& path);

// Write a file atomically enough for CLI use: throws Io when it cannot be opened.
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace trajforge
