#include "trajforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {

std::vector<double> normalized(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  std::vector<double> p(counts.size(), 0.0);
  if (total > 0.0)
    for (std::size_t i = 0; i < counts.size(); ++i) p[i] = counts[i] / total;
  return p;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  // nearest-rank
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

std::vector<double> rank_profile(std::map<int, int> counts, std::size_t depth) {
  std::vector<double> sorted;
  sorted.reserve(counts.size());
  for (const auto& [loc, c] : counts) sorted.push_back(c);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  sorted.resize(depth, 0.0);
  return sorted;
}

std::vector<int> iota_support(int lo, int hi) {
  std::vector<int> s;
  for (int v = lo; v <= hi; ++v) s.push_back(v);
  return s;
}

}  // namespace

bool Histogram::is_zero() const noexcept {
  return std::all_of(probs.begin(), probs.end(), [](double p) { return p == 0.0; });
}

double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(ErrorCode::BinMismatch, "histograms have different bin counts");
  const bool p_zero = std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; });
  const bool q_zero = std::all_of(q.begin(), q.end(), [](double v) { return v == 0.0; });
  if (p_zero || q_zero) return p_zero == q_zero ? 0.0 : std::numbers::ln2;
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = (p[i] + q[i]) / 2.0;
  const double v = shannon_entropy(m) - (shannon_entropy(p) + shannon_entropy(q)) / 2.0;
  return std::clamp(v, 0.0, std::numbers::ln2);
}

double jsd(const Histogram& p, const Histogram& q) {
  if (p.edges != q.edges || p.labels != q.labels) throw Error(ErrorCode::BinMismatch, "histogram bins differ");
  return jsd(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

nlohmann::json BinningConfig::to_json() const {
  return {{"distance_bins", distance_bins},   {"gradius_bins", gradius_bins}, {"upper_quantile", upper_quantile},
          {"dailyloc_max", dailyloc_max},     {"grank_top_k", grank_top_k},   {"irank_depth", irank_depth},
          {"top_k_transition", top_k_transition}};
}

double travel_distance_km(const Trajectory& t, const GridSpec& grid) {
  double total = 0.0;
  for (std::size_t j = 1; j < t.visits.size(); ++j) {
    const auto [la, oa] = cell_centroid(t.visits[j - 1].location, grid);
    const auto [lb, ob] = cell_centroid(t.visits[j].location, grid);
    total += haversine_km(la, oa, lb, ob);
  }
  return total;
}

double radius_of_gyration_km(const Trajectory& t, const GridSpec& grid) {
  if (t.visits.empty()) return 0.0;
  double clat = 0.0, clon = 0.0;
  std::vector<std::pair<double, double>> pts;
  for (const auto& v : t.visits) {
    pts.push_back(cell_centroid(v.location, grid));
    clat += pts.back().first;
    clon += pts.back().second;
  }
  const auto n = static_cast<double>(pts.size());
  clat /= n;
  clon /= n;
  double sq = 0.0;
  for (const auto& [la, lo] : pts) {
    const double dk = haversine_km(la, lo, clat, clon);
    sq += dk * dk;
  }
  return std::sqrt(sq / n);
}

Histogram numeric_histogram(std::span<const double> values, double hi, int bins) {
  if (bins < 1 || !(hi > 0.0)) throw Error(ErrorCode::InvalidArgument, "numeric histogram needs bins >= 1 and hi > 0");
  Histogram h;
  const double width = hi / bins;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(b * width);
  std::vector<double> counts(static_cast<std::size_t>(bins) + 1, 0.0);
  for (double v : values) {
    const auto b = v >= hi ? bins : std::clamp(static_cast<int>(std::floor(v / width)), 0, bins - 1);
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  h.probs = normalized(counts);
  return h;
}

Histogram categorical_histogram(std::span<const int> values, std::span<const int> support) {
  Histogram h;
  h.labels.assign(support.begin(), support.end());
  std::vector<double> counts(support.size(), 0.0);
  for (int v : values) {
    const auto it = std::lower_bound(support.begin(), support.end(), v);
    if (it != support.end() && *it == v) counts[static_cast<std::size_t>(it - support.begin())] += 1.0;
  }
  h.probs = normalized(counts);
  return h;
}

TrajectoryDistributions trajectory_distributions(const TrajectoryDataset& ds, const BinningConfig& bins,
                                                 const TrajectoryDataset* reference) {
  const TrajectoryDataset& ref = reference ? *reference : ds;
  auto stats = [](const TrajectoryDataset& d) {
    std::vector<double> dist, gyr;
    for (const auto& t : d.trajectories) {
      dist.push_back(travel_distance_km(t, d.grid));
      gyr.push_back(radius_of_gyration_km(t, d.grid));
    }
    return std::pair{dist, gyr};
  };
  const auto [dist, gyr] = stats(ds);
  const auto [ref_dist, ref_gyr] = reference ? stats(ref) : std::pair{dist, gyr};
  auto upper = [&](const std::vector<double>& v) {
    const double q = quantile(v, bins.upper_quantile);
    return q > 0.0 ? q : 1.0;
  };

  TrajectoryDistributions out;
  out.distance = numeric_histogram(dist, upper(ref_dist), bins.distance_bins);
  out.gradius = numeric_histogram(gyr, upper(ref_gyr), bins.gradius_bins);

  std::vector<int> durations, lengths;
  for (const auto& t : ds.trajectories) {
    for (const auto& v : t.visits) durations.push_back(v.duration);
    lengths.push_back(std::min(static_cast<int>(t.visits.size()), bins.dailyloc_max));
  }
  const auto dur_support = iota_support(1, ds.timespec.slots_per_day());
  const auto len_support = iota_support(1, bins.dailyloc_max);
  out.duration = categorical_histogram(durations, dur_support);
  out.dailyloc = categorical_histogram(lengths, len_support);
  return out;
}

RankDistributions rank_distributions(const TrajectoryDataset& ds, int top_k, int irank_depth) {
  RankDistributions out;
  std::map<int, int> global;
  std::vector<double> irank(static_cast<std::size_t>(irank_depth), 0.0);
  for (const auto& t : ds.trajectories) {
    std::map<int, int> local;
    for (const auto& v : t.visits) {
      ++global[v.location];
      ++local[v.location];
    }
    if (t.visits.empty()) continue;
    const auto profile = rank_profile(local, static_cast<std::size_t>(irank_depth));
    for (std::size_t r = 0; r < profile.size(); ++r) irank[r] += profile[r] / static_cast<double>(t.visits.size());
  }
  out.grank.labels = iota_support(1, top_k);
  out.grank.probs = normalized(rank_profile(global, static_cast<std::size_t>(top_k)));
  out.irank.labels = iota_support(1, irank_depth);
  out.irank.probs = normalized(irank);
  return out;
}

double TransitionMatrix::at(int from, int to) const {
  const auto it = entries.find({from, to});
  return it == entries.end() ? 0.0 : it->second;
}

double TransitionMatrix::row_sum(int from) const {
  double s = 0.0;
  for (auto it = entries.lower_bound({from, std::numeric_limits<int>::min()});
       it != entries.end() && it->first.first == from; ++it)
    s += it->second;
  return s;
}

TransitionMatrix transition_matrix(const TrajectoryDataset& ds) {
  TransitionMatrix m;
  m.n_locations = ds.grid.cell_count();
  std::map<int, double> out_totals;
  for (const auto& t : ds.trajectories) {
    for (std::size_t j = 1; j < t.visits.size(); ++j) {
      m.entries[{t.visits[j - 1].location, t.visits[j].location}] += 1.0;
      out_totals[t.visits[j - 1].location] += 1.0;
    }
  }
  for (auto& [key, v] : m.entries) v /= out_totals[key.first];
  return m;
}

double frobenius_diff(const TransitionMatrix& p, const TransitionMatrix& q, const std::set<int>* restrict_to) {
  if (p.n_locations != q.n_locations) throw Error(ErrorCode::GridMismatch, "transition matrices cover different grids");
  auto included = [&](const std::pair<int, int>& key) {
    return !restrict_to || restrict_to->contains(key.first) || restrict_to->contains(key.second);
  };
  double sq = 0.0;
  for (const auto& [key, v] : p.entries) {
    if (!included(key)) continue;
    const double diff = v - q.at(key.first, key.second);
    sq += diff * diff;
  }
  for (const auto& [key, v] : q.entries) {
    if (!included(key) || p.entries.contains(key)) continue;
    sq += v * v;
  }
  return std::sqrt(sq);
}

nlohmann::json MetricsReport::to_json(const BinningConfig& bins, std::optional<std::uint64_t> seed) const {
  nlohmann::json meta = {{"real_trajectories", real_trajectories},
                         {"generated_trajectories", generated_trajectories},
                         {"binning", bins.to_json()}};
  meta["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return {{"distance_jsd", distance_jsd},
          {"gradius_jsd", gradius_jsd},
          {"duration_jsd", duration_jsd},
          {"dailyloc_jsd", dailyloc_jsd},
          {"grank_jsd", grank_jsd},
          {"irank_jsd", irank_jsd},
          {"transition_frob", transition_frob},
          {"topk_transition_frob", topk_transition_frob ? nlohmann::json(*topk_transition_frob) : nlohmann::json(nullptr)},
          {"meta", meta}};
}

std::string MetricsReport::csv_header() {
  return "distance_jsd,gradius_jsd,duration_jsd,dailyloc_jsd,irank_jsd,grank_jsd,transition_frob,topk_transition_frob,"
         "real_trajectories,generated_trajectories";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream ss;
  ss.precision(6);
  ss << std::fixed << distance_jsd << ',' << gradius_jsd << ',' << duration_jsd << ',' << dailyloc_jsd << ','
     << irank_jsd << ',' << grank_jsd << ',' << transition_frob << ',';
  if (topk_transition_frob) ss << *topk_transition_frob;
  ss << ',' << real_trajectories << ',' << generated_trajectories;
  return ss.str();
}

MetricsReport evaluate(const TrajectoryDataset& real, const TrajectoryDataset& gen,
                       const std::vector<int>* constraint_locations, const BinningConfig& bins) {
  if (!(real.grid == gen.grid) || !(real.timespec == gen.timespec))
    throw Error(ErrorCode::GridMismatch, "real and generated datasets use different grids or timespecs");
  MetricsReport r;
  r.real_trajectories = real.trajectories.size();
  r.generated_trajectories = gen.trajectories.size();

  const auto td_real = trajectory_distributions(real, bins);
  const auto td_gen = trajectory_distributions(gen, bins, &real);
  r.distance_jsd = jsd(td_real.distance, td_gen.distance);
  r.gradius_jsd = jsd(td_real.gradius, td_gen.gradius);
  r.duration_jsd = jsd(td_real.duration, td_gen.duration);
  r.dailyloc_jsd = jsd(td_real.dailyloc, td_gen.dailyloc);

  const auto rd_real = rank_distributions(real, bins.grank_top_k, bins.irank_depth);
  const auto rd_gen = rank_distributions(gen, bins.grank_top_k, bins.irank_depth);
  r.grank_jsd = jsd(rd_real.grank, rd_gen.grank);
  r.irank_jsd = jsd(rd_real.irank, rd_gen.irank);

  const auto p_real = transition_matrix(real);
  const auto p_gen = transition_matrix(gen);
  r.transition_frob = frobenius_diff(p_real, p_gen);

  if (constraint_locations) {
    std::map<int, int> freq;
    for (int l : *constraint_locations) ++freq[l];
    std::vector<std::pair<int, int>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    const auto k = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max(0, bins.top_k_transition)));
    std::set<int> top;
    for (std::size_t i = 0; i < k; ++i) top.insert(ranked[i].first);
    r.topk_transition_frob = frobenius_diff(p_real, p_gen, &top);
  }
  return r;
}

}  // namespace trajforge
