#include "trajforge/generate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {

constexpr int kCollisionRedraws = 64;

int clip_duration(int duration, int arrival, int slots) { return std::clamp(duration, 1, slots - arrival); }

}  // namespace

void GenConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::InvalidConfig, "temperature must be > 0");
  if (max_new_tokens < 1) throw Error(ErrorCode::InvalidConfig, "max_new_tokens must be >= 1");
  if (max_retries < 0) throw Error(ErrorCode::InvalidConfig, "max_retries must be >= 0");
}

nlohmann::json GenConfig::to_json() const {
  return {{"temperature", temperature}, {"max_new_tokens", max_new_tokens}, {"max_retries", max_retries},
          {"seed", seed}};
}

DurationDistribution::DurationDistribution(std::vector<double> counts) : counts_(std::move(counts)) {
  for (double c : counts_) {
    if (!(c >= 0.0)) throw Error(ErrorCode::InvalidArgument, "duration counts must be non-negative");
    total_ += c;
  }
}

DurationDistribution DurationDistribution::from_dataset(const TrajectoryDataset& ds) {
  std::vector<double> counts(static_cast<std::size_t>(ds.timespec.slots_per_day()), 0.0);
  for (const auto& t : ds.trajectories)
    for (const auto& v : t.visits)
      if (v.duration >= 1 && v.duration <= static_cast<int>(counts.size())) counts[v.duration - 1] += 1.0;
  return DurationDistribution(std::move(counts));
}

int DurationDistribution::sample(Rng& rng) const {
  if (empty()) return 1;
  double u = uniform01(rng) * total_;
  for (std::size_t k = 0; k < counts_.size(); ++k) {
    if (u < counts_[k]) return static_cast<int>(k) + 1;
    u -= counts_[k];
  }
  // rounding fell off the end; return the last supported duration
  for (std::size_t k = counts_.size(); k-- > 0;)
    if (counts_[k] > 0.0) return static_cast<int>(k) + 1;
  return 1;
}

TransformerSource::TransformerSource(const Transformer<float>& net)
    : session_(net), max_len_(static_cast<std::size_t>(net.config().max_seq_len)) {}

TokenSequence build_uncontrolled_prompt(const Vocabulary&) {
  return {Vocabulary::kBos, Vocabulary::kArrival, Vocabulary::kTime, Vocabulary::kIs};
}

TokenSequence build_controlled_prompt(const ConstraintSet& cs, const Vocabulary& vocab,
                                      const DurationDistribution& durations, Rng& rng, std::vector<Visit>* drawn) {
  if (cs.constraints.empty()) throw Error(ErrorCode::EmptyConstraintSet, "controlled prompt needs constraints");
  const int slots = vocab.timespec().slots_per_day();
  for (const auto& c : cs.constraints) validate_constraint(c, vocab.grid(), vocab.timespec());

  std::vector<Visit> visits;
  visits.reserve(cs.constraints.size());
  for (const auto& c : cs.constraints) {
    int arrival = 0;
    bool placed = false;
    for (int attempt = 0; attempt < kCollisionRedraws && !placed; ++attempt) {
      arrival = static_cast<int>(uniform_int(rng, c.t_start, c.t_end));
      placed = std::none_of(visits.begin(), visits.end(), [&](const Visit& v) { return v.arrival == arrival; });
    }
    if (!placed)
      throw Error(ErrorCode::UnresolvableCollision,
                  "no free arrival slot in [" + std::to_string(c.t_start) + "," + std::to_string(c.t_end) + "]");
    const int duration = c.duration_hint ? *c.duration_hint : durations.sample(rng);
    visits.push_back({arrival, c.location, clip_duration(duration, arrival, slots)});
  }

  TokenSequence out{Vocabulary::kBos};
  for (const auto& v : visits) {
    append_visit(out, v, vocab);
    out.push_back(Vocabulary::kSep);
  }
  out.push_back(Vocabulary::kArrival);
  out.push_back(Vocabulary::kTime);
  out.push_back(Vocabulary::kIs);
  if (drawn) *drawn = std::move(visits);
  return out;
}

TokenId sample_next(std::span<const float> logits, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
  if (logits.empty()) throw Error(ErrorCode::InvalidArgument, "no logits to sample from");
  double mx = -std::numeric_limits<double>::infinity();
  for (float l : logits) {
    if (!std::isfinite(l)) throw Error(ErrorCode::NonFiniteLogits, "logit is not finite");
    mx = std::max(mx, static_cast<double>(l));
  }
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    sum += p[i];
  }
  double u = uniform01(rng) * sum;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (u < p[i]) return static_cast<TokenId>(i);
    u -= p[i];
  }
  return static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
}

SequenceResult generate_sequence(LogitSource& model, std::span<const TokenId> prompt, const GenConfig& gc, Rng& rng) {
  if (prompt.empty()) throw Error(ErrorCode::EmptySequence, "empty prompt");
  if (prompt.size() >= model.max_len())
    throw Error(ErrorCode::SequenceTooLong, "prompt of " + std::to_string(prompt.size()) + " tokens leaves no room");
  SequenceResult out;
  out.tokens.assign(prompt.begin(), prompt.end());
  model.reset();
  std::span<const float> logits;
  for (const auto t : prompt) logits = model.push(t);
  for (int k = 0; k < gc.max_new_tokens; ++k) {
    const TokenId next = sample_next(logits, gc.temperature, rng);
    out.tokens.push_back(next);
    if (next == Vocabulary::kEos) {
      out.reached_eos = true;
      break;
    }
    if (out.tokens.size() >= model.max_len()) break;
    logits = model.push(next);
  }
  return out;
}

GenerationOutcome generate_trajectory(LogitSource& model, const Vocabulary& vocab, const ConstraintSet* constraints,
                                      const DurationDistribution& durations, const GenConfig& gc, Rng& rng) {
  gc.validate();
  if (constraints && constraints->constraints.empty())
    throw Error(ErrorCode::EmptyConstraintSet, "controlled generation needs constraints");
  std::map<std::string, int> reasons;
  for (int attempt = 1; attempt <= gc.max_retries; ++attempt) {
    std::vector<Visit> prompted;
    const TokenSequence prompt = constraints ? build_controlled_prompt(*constraints, vocab, durations, rng, &prompted)
                                             : build_uncontrolled_prompt(vocab);
    const auto seq = generate_sequence(model, prompt, gc, rng);
    if (!seq.reached_eos) {
      ++reasons["no_eos"];
      continue;
    }
    Trajectory traj;
    try {
      traj = decode_tokens(seq.tokens, vocab);
    } catch (const Error&) {
      ++reasons["parse_error"];
      continue;
    }
    std::stable_sort(traj.visits.begin(), traj.visits.end(),
                     [](const Visit& a, const Visit& b) { return a.arrival < b.arrival; });
    const bool tie = std::adjacent_find(traj.visits.begin(), traj.visits.end(), [](const Visit& a, const Visit& b) {
                       return a.arrival == b.arrival;
                     }) != traj.visits.end();
    if (tie) {
      ++reasons["duplicate_arrival"];
      continue;
    }
    if (!validate_trajectory(traj, vocab.timespec(), vocab.grid()).empty()) {
      ++reasons["integrity"];
      continue;
    }
    GenerationOutcome out;
    if (constraints) {
      const bool survived = std::all_of(prompted.begin(), prompted.end(), [&](const Visit& p) {
        return std::find(traj.visits.begin(), traj.visits.end(), p) != traj.visits.end();
      });
      const auto report = satisfies_all(traj, *constraints);
      if (!survived || !report.all) {
        ++reasons["constraint_unmet"];
        continue;
      }
      out.constraint_report = report.per_constraint;
    }
    out.trajectory = std::move(traj);
    out.attempts = attempt;
    return out;
  }
  throw RetriesExhausted(std::move(reasons));
}

std::vector<BatchResult> generate_batch(const Transformer<float>& net, const Vocabulary& vocab,
                                        std::span<const ConstraintSet> constraints, std::size_t count,
                                        const DurationDistribution& durations, const GenConfig& gc, int threads) {
  gc.validate();
  const std::size_t n = constraints.empty() ? count : constraints.size();
  std::vector<BatchResult> results(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    TransformerSource source(net);
    for (std::size_t i = next++; i < n; i = next++) {
      Rng rng = make_rng(gc.seed, "generate", i);
      try {
        results[i].outcome = generate_trajectory(source, vocab, constraints.empty() ? nullptr : &constraints[i],
                                                 durations, gc, rng);
        results[i].outcome->trajectory.id = "gen-" + std::to_string(i);
      } catch (const RetriesExhausted& e) {
        results[i].failures = e.reasons();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(workers, n); ++t) pool.emplace_back(worker);
  }
  return results;
}

Trajectory forcible_insert(const Trajectory& traj, const ConstraintSet& cs, const DurationDistribution& durations,
                           Rng& rng, const TimeSpec& ts, const GridSpec& grid) {
  if (cs.constraints.empty()) return traj;
  const int slots = ts.slots_per_day();
  for (const auto& c : cs.constraints) validate_constraint(c, grid, ts);

  // Place the constrained visits so they do not overlap each other.
  std::vector<Visit> inserted;
  bool placed_all = false;
  for (int attempt = 0; attempt < kCollisionRedraws && !placed_all; ++attempt) {
    inserted.clear();
    placed_all = true;
    for (const auto& c : cs.constraints) {
      const int arrival = static_cast<int>(uniform_int(rng, c.t_start, c.t_end));
      const int duration = clip_duration(c.duration_hint ? *c.duration_hint : durations.sample(rng), arrival, slots);
      const Visit v{arrival, c.location, duration};
      const bool clash = std::any_of(inserted.begin(), inserted.end(), [&](const Visit& o) {
        return v.arrival < o.arrival + o.duration && o.arrival < v.arrival + v.duration;
      });
      if (clash) {
        placed_all = false;
        break;
      }
      inserted.push_back(v);
    }
  }
  if (!placed_all) throw Error(ErrorCode::Unsatisfiable, "constrained visits cannot be placed without overlap");

  std::vector<Visit> kept;
  for (Visit inc : traj.visits) {
    bool alive = true;
    for (const auto& nv : inserted) {
      const int s = nv.arrival, e = nv.arrival + nv.duration;
      const int a = inc.arrival, b = inc.arrival + inc.duration;
      if (b <= s || a >= e) continue;
      if (a < s) {
        inc.duration = s - a;
      } else if (b <= e) {
        alive = false;
        break;
      } else {
        inc.arrival = e;
        inc.duration = b - e;
      }
    }
    if (alive) kept.push_back(inc);
  }
  kept.insert(kept.end(), inserted.begin(), inserted.end());
  std::sort(kept.begin(), kept.end(), [](const Visit& x, const Visit& y) { return x.arrival < y.arrival; });
  return {traj.id, std::move(kept)};
}

std::vector<ConstraintSet> make_constraints(const TrajectoryDataset& ds, Rng& rng,
                                            const ConstraintSamplingParams& params) {
  if (params.n_min < 1 || params.n_max < params.n_min || params.window_halfwidth < 0 || params.fraction < 0.0 ||
      params.fraction > 1.0)
    throw Error(ErrorCode::InvalidConfig, "constraint sampling parameters out of range");
  const int last_slot = ds.timespec.slots_per_day() - 1;
  std::vector<ConstraintSet> out;
  for (const auto& t : ds.trajectories) {
    if (t.visits.empty()) continue;
    if (params.fraction < 1.0 && !(uniform01(rng) < params.fraction)) continue;
    const auto L = static_cast<int>(t.visits.size());
    const int k = std::min(L, static_cast<int>(uniform_int(rng, params.n_min, params.n_max)));
    std::vector<std::size_t> idx(t.visits.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (int i = 0; i < k; ++i) {
      const auto j = static_cast<std::size_t>(i) + uniform_index(rng, idx.size() - static_cast<std::size_t>(i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    ConstraintSet cs;
    cs.source_id = t.id;
    for (const auto i : idx) {
      const auto& v = t.visits[i];
      cs.constraints.push_back({v.location, std::max(0, v.arrival - params.window_halfwidth),
                                std::min(last_slot, v.arrival + params.window_halfwidth), v.duration});
    }
    out.push_back(std::move(cs));
  }
  return out;
}

}  // namespace trajforge
