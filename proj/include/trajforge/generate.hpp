#pragma once

// Prompting, temperature sampling and the accept/retry loop that turns raw
// model output into valid (and, when asked, constraint-satisfying)
// trajectories. Also hosts the forcible-insert baseline and the constraint
// sampler.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajforge/core.hpp"
#include "trajforge/encode.hpp"
#include "trajforge/model.hpp"
#include "trajforge/rng.hpp"

namespace trajforge {

struct GenConfig {
  double temperature = 1.2;
  int max_new_tokens = 200;
  int max_retries = 10;  // attempts per trajectory
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidConfig
  [[nodiscard]] nlohmann::json to_json() const;
};

// Empirical marginal over visit durations 1..slots_per_day.
class DurationDistribution {
 public:
  DurationDistribution() = default;
  explicit DurationDistribution(std::vector<double> counts);
  static DurationDistribution from_dataset(const TrajectoryDataset& ds);

  // Draws a duration; 1 when the distribution is empty.
  int sample(Rng& rng) const;
  [[nodiscard]] bool empty() const noexcept { return total_ <= 0.0; }
  [[nodiscard]] const std::vector<double>& counts() const noexcept { return counts_; }

 private:
  std::vector<double> counts_;  // counts_[k] is the weight of duration k + 1
  double total_ = 0.0;
};

// Next-token logits, fed one token at a time.
class LogitSource {
 public:
  virtual ~LogitSource() = default;
  virtual void reset() = 0;
  virtual std::span<const float> push(TokenId token) = 0;
  [[nodiscard]] virtual std::size_t max_len() const = 0;
};

class TransformerSource final : public LogitSource {
 public:
  explicit TransformerSource(const Transformer<float>& net);
  void reset() override { session_.reset(); }
  std::span<const float> push(TokenId token) override { return session_.push(token); }
  [[nodiscard]] std::size_t max_len() const override { return max_len_; }

 private:
  InferenceSession<float> session_;
  std::size_t max_len_;
};

// [<BOS>, arrival, time, is]
TokenSequence build_uncontrolled_prompt(const Vocabulary& vocab);

// One full visit block per constraint, in the given order, then "=> arrival
// time is". Each arrival is drawn uniformly from its window (redrawn while it
// collides with an earlier one). Durations come from the hint, else from
// `durations`, clipped to the end of the day. The drawn visits are returned
// through `drawn` when non-null.
TokenSequence build_controlled_prompt(const ConstraintSet& cs, const Vocabulary& vocab,
                                      const DurationDistribution& durations, Rng& rng,
                                      std::vector<Visit>* drawn = nullptr);

// Categorical draw from softmax(logits / temperature).
TokenId sample_next(std::span<const float> logits, double temperature, Rng& rng);

struct SequenceResult {
  TokenSequence tokens;  // prompt followed by sampled tokens
  bool reached_eos = false;
};

SequenceResult generate_sequence(LogitSource& model, std::span<const TokenId> prompt, const GenConfig& gc, Rng& rng);

struct GenerationOutcome {
  Trajectory trajectory;
  int attempts = 0;
  std::vector<bool> constraint_report;  // controlled mode only
};

// Sample, parse, sort by arrival, validate and (controlled mode) check that
// every prompted visit survived and every constraint holds. The first
// accepted attempt is returned; RetriesExhausted carries a histogram of
// rejection reasons otherwise.
GenerationOutcome generate_trajectory(LogitSource& model, const Vocabulary& vocab, const ConstraintSet* constraints,
                                      const DurationDistribution& durations, const GenConfig& gc, Rng& rng);

struct BatchResult {
  std::optional<GenerationOutcome> outcome;
  std::map<std::string, int> failures;  // filled when outcome is empty
};

// Item i draws from the stream (gc.seed, "generate", i), so results do not
// depend on the thread count. An empty `constraints` span means uncontrolled
// generation of `count` trajectories; otherwise one item per constraint set.
std::vector<BatchResult> generate_batch(const Transformer<float>& net, const Vocabulary& vocab,
                                        std::span<const ConstraintSet> constraints, std::size_t count,
                                        const DurationDistribution& durations, const GenConfig& gc, int threads = 1);

// Splices one visit per constraint into `traj`. Incumbent visits that start
// before an inserted visit are cut short, those it covers entirely are
// dropped, and those that start inside it keep their tail.
Trajectory forcible_insert(const Trajectory& traj, const ConstraintSet& cs, const DurationDistribution& durations,
                           Rng& rng, const TimeSpec& ts, const GridSpec& grid);

struct ConstraintSamplingParams {
  int n_min = 1;
  int n_max = 3;
  int window_halfwidth = 1;  // slots
  double fraction = 1.0;     // share of trajectories that receive constraints
};

// For each selected trajectory, k ~ U[n_min, n_max] (capped at its length)
// distinct visits become constraints centered on their arrival slots.
std::vector<ConstraintSet> make_constraints(const TrajectoryDataset& ds, Rng& rng,
                                            const ConstraintSamplingParams& params = {});

}  // namespace trajforge
