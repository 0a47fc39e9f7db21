#pragma once

// Realism metrics: Jensen-Shannon divergences (natural log, bounded by ln 2)
// between real and generated distributions, and Frobenius distances between
// location transition matrices.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trajforge/core.hpp"

namespace trajforge {

struct Histogram {
  std::vector<double> edges;  // numeric bins: edges.size() == probs.size() (last bin is overflow); empty if categorical
  std::vector<int> labels;    // categorical support; empty if numeric
  std::vector<double> probs;  // sums to 1, or all zero for empty input

  [[nodiscard]] bool is_zero() const noexcept;
};

double shannon_entropy(std::span<const double> p);

// h((p+q)/2) - (h(p)+h(q))/2 on aligned bins; throws BinMismatch. An all-zero
// histogram compared to a non-empty one scores ln 2; two all-zero ones score 0.
double jsd(const Histogram& p, const Histogram& q);
double jsd(std::span<const double> p, std::span<const double> q);

struct BinningConfig {
  int distance_bins = 50;
  int gradius_bins = 50;
  double upper_quantile = 0.99;
  int dailyloc_max = 96;
  int grank_top_k = 100;
  int irank_depth = 10;
  int top_k_transition = 100;

  [[nodiscard]] nlohmann::json to_json() const;
};

// Per-trajectory raw statistics.
double travel_distance_km(const Trajectory& t, const GridSpec& grid);
double radius_of_gyration_km(const Trajectory& t, const GridSpec& grid);

// Linear bins over [0, hi) with an overflow bin for values >= hi.
Histogram numeric_histogram(std::span<const double> values, double hi, int bins);
Histogram categorical_histogram(std::span<const int> values, std::span<const int> support);

struct TrajectoryDistributions {
  Histogram distance, gradius, duration, dailyloc;
};

// Bin edges for distance and gyration come from `reference` (the real data);
// with no reference, the dataset is its own reference.
TrajectoryDistributions trajectory_distributions(const TrajectoryDataset& ds, const BinningConfig& bins,
                                                 const TrajectoryDataset* reference = nullptr);

struct RankDistributions {
  Histogram grank, irank;
};

RankDistributions rank_distributions(const TrajectoryDataset& ds, int top_k = 100, int irank_depth = 10);

// Sparse row-normalized counts of consecutive (l_j -> l_{j+1}) pairs.
struct TransitionMatrix {
  int n_locations = 0;
  std::map<std::pair<int, int>, double> entries;

  [[nodiscard]] double at(int from, int to) const;
  [[nodiscard]] double row_sum(int from) const;
};

TransitionMatrix transition_matrix(const TrajectoryDataset& ds);

// Entries with either endpoint in `restrict_to` contribute when it is given.
double frobenius_diff(const TransitionMatrix& p, const TransitionMatrix& q,
                      const std::set<int>* restrict_to = nullptr);

struct MetricsReport {
  double distance_jsd = 0.0;
  double gradius_jsd = 0.0;
  double duration_jsd = 0.0;
  double dailyloc_jsd = 0.0;
  double grank_jsd = 0.0;
  double irank_jsd = 0.0;
  double transition_frob = 0.0;
  std::optional<double> topk_transition_frob;
  std::size_t real_trajectories = 0;
  std::size_t generated_trajectories = 0;

  [[nodiscard]] nlohmann::json to_json(const BinningConfig& bins, std::optional<std::uint64_t> seed = {}) const;
  static std::string csv_header();
  [[nodiscard]] std::string csv_row() const;
};

// `constraint_locations` lists the location of every constraint (repeats
// count towards popularity); the K most frequent, K capped at
// bins.top_k_transition, restrict the Top-K transition distance.
MetricsReport evaluate(const TrajectoryDataset& real, const TrajectoryDataset& gen,
                       const std::vector<int>* constraint_locations = nullptr, const BinningConfig& bins = {});

}  // namespace trajforge
