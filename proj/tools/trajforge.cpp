// trajforge: ingest -> train -> generate -> evaluate, plus constraint sampling.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajforge/checkpoint.hpp"
#include "trajforge/config.hpp"
#include "trajforge/encode.hpp"
#include "trajforge/error.hpp"
#include "trajforge/generate.hpp"
#include "trajforge/ingest.hpp"
#include "trajforge/io.hpp"
#include "trajforge/metrics.hpp"
#include "trajforge/model.hpp"
#include "trajforge/rng.hpp"
#include "trajforge/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trajforge;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool verbose = false;
};

int kExitError = 2;
int kExitPartial = 3;

bool g_verbose = false;

void log(const std::string& msg) {
  if (g_verbose) std::cerr << "[trajforge] " << msg << "\n";
}

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  return cfg;
}

std::string pick(const std::string& arg, const std::string& fallback, const char* what) {
  if (!arg.empty()) return arg;
  if (!fallback.empty()) return fallback;
  throw Error(ErrorCode::InvalidArgument, std::string("no ") + what + " given on the command line or in [paths]");
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

fs::path sibling(const fs::path& p, const std::string& suffix) {
  auto out = p;
  out.replace_extension();
  return out.string() + suffix;
}

// ---- ingest ----

struct IngestArgs {
  std::string csv, out_dir;
};

int cmd_ingest(const Globals& g, const IngestArgs& a) {
  auto cfg = resolve_config(g);
  cfg.finalize();
  const fs::path csv = pick(a.csv, cfg.paths.gps_csv, "GPS CSV");
  const fs::path out = pick(a.out_dir, cfg.paths.out_dir, "output directory");
  IngestStats stats;
  log("reading " + csv.string());
  const auto ds = build_dataset(csv, cfg.grid, cfg.timespec, cfg.ingest, &stats);
  fs::create_directories(out);
  write_dataset(out / "trajectories.jsonl", ds);
  json js = stats.to_json();
  js["config"] = cfg.to_json();
  write_json(out / "stats.json", js);
  log(std::to_string(ds.trajectories.size()) + " trajectories written to " + (out / "trajectories.jsonl").string());
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string trajectories, checkpoint, base;
  std::string mode, permute;
  std::optional<int> epochs;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  auto cfg = resolve_config(g);
  if (!a.mode.empty()) cfg.train.mode = parse_train_mode(a.mode);
  if (!a.permute.empty()) cfg.train.permute = parse_permute_mode(a.permute);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (cfg.train.mode == TrainMode::LoraOnly) cfg.use_lora = true;
  cfg.finalize();
  const fs::path data = pick(a.trajectories, cfg.paths.trajectories, "trajectory file");
  const fs::path out = pick(a.checkpoint, cfg.paths.checkpoint, "checkpoint path");

  const auto ds = read_dataset(data);
  const auto vocab = build_vocabulary(ds.grid, ds.timespec);
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();

  Model<float> model;
  if (!a.base.empty()) {
    auto base = load_checkpoint_file(a.base);
    if (base.vocab_hash != vocab.content_hash())
      throw Error(ErrorCode::GridMismatch, "base checkpoint vocabulary differs from the dataset's");
    model = std::move(base.model);
  } else {
    model = init_model<float>(mc, cfg.seed);
  }
  std::optional<LoraAdapter<float>> adapter;
  if (cfg.use_lora) adapter = init_adapter<float>(model.config, cfg.lora, cfg.seed);

  log("training on " + std::to_string(ds.trajectories.size()) + " trajectories, vocab " +
      std::to_string(vocab.size()));
  const auto result = train(model, adapter ? &*adapter : nullptr, ds, vocab, cfg.train, [](int epoch, double loss) {
    log("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  });

  const auto durations = DurationDistribution::from_dataset(ds);
  json extra = {{"config", cfg.to_json()}, {"durations", durations.counts()}, {"steps", result.steps}};
  save_checkpoint_file(out, model, adapter ? &*adapter : nullptr, vocab, cfg.train.to_json(), extra);

  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, result.loss_history[e]);
    csv += buf;
  }
  write_text_file(out.string() + ".loss.csv", csv);
  return 0;
}

// ---- generate ----

struct GenerateArgs {
  std::vector<std::string> positional;  // [checkpoint] out
  std::optional<std::size_t> n;
  std::string constraints, fi_baseline;
  std::optional<double> temperature;
  std::optional<int> max_retries;
};

int cmd_generate_fi(const RunConfig& cfg, const GenerateArgs& a, const fs::path& out) {
  const auto base = read_dataset(a.fi_baseline);
  if (base.trajectories.empty()) throw Error(ErrorCode::InvalidArgument, "FI baseline is empty");
  const auto sets = read_constraints(pick(a.constraints, cfg.paths.constraints, "constraint file"));
  const auto durations = DurationDistribution::from_dataset(base);
  TrajectoryDataset gen{{}, base.grid, base.timespec};
  std::size_t satisfied = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    Rng rng = make_rng(cfg.seed, "fi", i);
    auto t = forcible_insert(base.trajectories[i % base.trajectories.size()], sets[i], durations, rng, base.timespec,
                             base.grid);
    t.id = "fi-" + std::to_string(i);
    if (satisfies_all(t, sets[i]).all) ++satisfied;
    gen.trajectories.push_back(std::move(t));
  }
  write_dataset(out, gen);
  json manifest = {{"mode", "forcible-insert"},
                   {"seed", cfg.seed},
                   {"baseline", a.fi_baseline},
                   {"requested", sets.size()},
                   {"produced", gen.trajectories.size()},
                   {"satisfaction_rate", sets.empty() ? 1.0 : static_cast<double>(satisfied) / sets.size()},
                   {"config", cfg.to_json()}};
  write_json(sibling(out, ".manifest.json"), manifest);
  return 0;
}

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  auto cfg = resolve_config(g);
  if (a.temperature) cfg.gen.temperature = *a.temperature;
  if (a.max_retries) cfg.gen.max_retries = *a.max_retries;
  cfg.finalize();

  const bool fi = !a.fi_baseline.empty();
  std::string ckpt_path, out_path;
  if (a.positional.size() == 2) {
    ckpt_path = a.positional[0];
    out_path = a.positional[1];
  } else if (a.positional.size() == 1) {
    out_path = a.positional[0];
    if (!fi) ckpt_path = cfg.paths.checkpoint;
  } else {
    out_path = cfg.paths.generated;
    if (!fi) ckpt_path = cfg.paths.checkpoint;
  }
  const fs::path out = pick(out_path, "", "output path");
  if (fi) return cmd_generate_fi(cfg, a, out);
  if (a.n.has_value() == !a.constraints.empty())
    throw Error(ErrorCode::InvalidArgument, "give exactly one of -n or --constraints");

  const auto ck = load_checkpoint_file(pick(ckpt_path, "", "checkpoint"));
  const auto vocab = ck.vocabulary();
  DurationDistribution durations;
  if (ck.extra.is_object() && ck.extra.contains("durations"))
    durations = DurationDistribution(ck.extra["durations"].get<std::vector<double>>());
  const Transformer<float> net(ck.model, ck.adapter ? &*ck.adapter : nullptr);

  std::vector<ConstraintSet> sets;
  if (!a.constraints.empty()) sets = read_constraints(a.constraints);
  const bool controlled = !a.constraints.empty();
  if (controlled && sets.empty()) throw Error(ErrorCode::EmptyConstraintSet, "constraint file has no lines");
  log(std::string(controlled ? "controlled" : "uncontrolled") + " generation of " +
      std::to_string(controlled ? sets.size() : *a.n) + " trajectories");

  const auto results = generate_batch(net, vocab, sets, a.n.value_or(0), durations, cfg.gen, cfg.threads);

  TrajectoryDataset gen{{}, ck.grid, ck.timespec};
  std::map<int, int> attempts_hist;
  std::map<std::string, int> rejections;
  std::size_t failed = 0, satisfied = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (!r.outcome) {
      ++failed;
      for (const auto& [why, c] : r.failures) rejections[why] += c;
      if (g.verbose)
        std::cerr << json{{"error", "RetriesExhausted"}, {"index", i}, {"reasons", r.failures}}.dump() << "\n";
      continue;
    }
    ++attempts_hist[r.outcome->attempts];
    if (controlled && satisfies_all(r.outcome->trajectory, sets[i]).all) ++satisfied;
    gen.trajectories.push_back(r.outcome->trajectory);
  }
  write_dataset(out, gen);
  if (failed) std::cerr << failed << " of " << results.size() << " trajectories exhausted their retries\n";

  json retries = json::object();
  for (const auto& [k, c] : attempts_hist) retries[std::to_string(k)] = c;
  json manifest = {{"mode", controlled ? "controlled" : "uncontrolled"},
                   {"seed", cfg.seed},
                   {"temperature", cfg.gen.temperature},
                   {"max_retries", cfg.gen.max_retries},
                   {"checkpoint", ckpt_path},
                   {"requested", results.size()},
                   {"produced", gen.trajectories.size()},
                   {"failed", failed},
                   {"retries_histogram", retries},
                   {"rejections", rejections},
                   {"config", cfg.to_json()}};
  if (controlled) {
    manifest["constraints"] = a.constraints;
    manifest["satisfaction_rate"] =
        gen.trajectories.empty() ? 1.0 : static_cast<double>(satisfied) / static_cast<double>(gen.trajectories.size());
  }
  write_json(sibling(out, ".manifest.json"), manifest);
  return failed ? kExitPartial : 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string real, generated, report, constraints, csv;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
  auto cfg = resolve_config(g);
  cfg.finalize();
  const auto real = read_dataset(pick(a.real, cfg.paths.trajectories, "real trajectory file"));
  const auto gen = read_dataset(pick(a.generated, cfg.paths.generated, "generated trajectory file"));
  const fs::path report_path = pick(a.report, cfg.paths.report, "report path");

  std::optional<std::vector<int>> locations;
  if (!a.constraints.empty()) {
    locations.emplace();
    for (const auto& cs : read_constraints(a.constraints))
      for (const auto& c : cs.constraints) locations->push_back(c.location);
  }
  const auto report = evaluate(real, gen, locations ? &*locations : nullptr, cfg.metrics);
  json j = report.to_json(cfg.metrics, cfg.seed);
  j["meta"]["config"] = cfg.to_json();
  write_json(report_path, j);

  if (!a.csv.empty()) {
    const bool fresh = !fs::exists(a.csv) || fs::file_size(a.csv) == 0;
    std::ofstream os(a.csv, std::ios::app | std::ios::binary);
    if (!os) throw Error(ErrorCode::Io, "cannot open " + a.csv);
    if (fresh) os << MetricsReport::csv_header() << "\n";
    os << report.csv_row() << "\n";
  }
  return 0;
}

// ---- make-constraints ----

struct ConstraintArgs {
  std::string trajectories, out;
  std::optional<int> n_min, n_max, window;
  std::optional<double> fraction;
  bool verify = false;
};

int cmd_make_constraints(const Globals& g, const ConstraintArgs& a) {
  auto cfg = resolve_config(g);
  if (a.n_min) cfg.constraints.n_min = *a.n_min;
  if (a.n_max) cfg.constraints.n_max = *a.n_max;
  if (a.window) cfg.constraints.window_halfwidth = *a.window;
  if (a.fraction) cfg.constraints.fraction = *a.fraction;
  cfg.finalize();
  const auto ds = read_dataset(pick(a.trajectories, cfg.paths.trajectories, "trajectory file"));
  if (ds.trajectories.empty()) throw Error(ErrorCode::InvalidArgument, "dataset is empty");
  Rng rng = make_rng(cfg.seed, "constraints");
  const auto sets = make_constraints(ds, rng, cfg.constraints);

  if (a.verify) {
    std::map<std::string, const Trajectory*> by_id;
    for (const auto& t : ds.trajectories) by_id[t.id] = &t;
    for (const auto& cs : sets) {
      const auto it = cs.source_id ? by_id.find(*cs.source_id) : by_id.end();
      if (it == by_id.end() || !satisfies_all(*it->second, cs).all)
        throw Error(ErrorCode::Unsatisfiable,
                    "constraint set not satisfied by its source " + cs.source_id.value_or("<none>"));
    }
    log("verified " + std::to_string(sets.size()) + " constraint sets against their sources");
  }
  std::ostringstream os;
  write_constraints(os, sets);
  write_text_file(pick(a.out, cfg.paths.constraints, "output path"), os.str());
  return 0;
}

void report_error(const std::exception& e) {
  json err = {{"message", e.what()}};
  if (const auto* te = dynamic_cast<const Error*>(&e)) err["code"] = std::string(to_string(te->code()));
  if (const auto* re = dynamic_cast<const RetriesExhausted*>(&e)) err["reasons"] = re->reasons();
  std::cerr << json{{"error", err}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory generation with a small decoder-only language model"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "TOML-like run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--threads", g.threads, "Worker cap")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr");

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "GPS CSV to trajectory JSONL");
  ingest->add_option("csv", ia.csv, "GPS CSV (user_id,timestamp,lat,lon)");
  ingest->add_option("out_dir", ia.out_dir, "Output directory");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a model on trajectories");
  trainc->add_option("trajectories", ta.trajectories, "Trajectory JSONL");
  trainc->add_option("checkpoint", ta.checkpoint, "Output checkpoint");
  trainc->add_option("--mode", ta.mode, "full | lora-only")->check(CLI::IsMember({"full", "lora-only"}));
  trainc->add_option("--permute", ta.permute, "per-epoch | once | off")
      ->check(CLI::IsMember({"per-epoch", "once", "off"}));
  trainc->add_option("--epochs", ta.epochs, "Override train.epochs");
  trainc->add_option("--base", ta.base, "Start from this checkpoint's base weights")->check(CLI::ExistingFile);

  GenerateArgs ga;
  auto* genc = app.add_subcommand("generate", "Sample trajectories from a checkpoint");
  genc->add_option("args", ga.positional, "[checkpoint] output.jsonl")->expected(0, 2);
  genc->add_option("-n", ga.n, "Uncontrolled: number of trajectories");
  genc->add_option("--constraints", ga.constraints, "Controlled: constraint JSONL, one output per line")
      ->check(CLI::ExistingFile);
  genc->add_option("--fi", ga.fi_baseline, "Forcible-insert the constraints into this trajectory JSONL instead")
      ->check(CLI::ExistingFile);
  genc->add_option("--temperature", ga.temperature, "Sampling temperature");
  genc->add_option("--max-retries", ga.max_retries, "Attempts per trajectory");

  EvaluateArgs ea;
  auto* evalc = app.add_subcommand("evaluate", "Compare generated trajectories with real ones");
  evalc->add_option("real", ea.real, "Real trajectory JSONL");
  evalc->add_option("generated", ea.generated, "Generated trajectory JSONL");
  evalc->add_option("report", ea.report, "Output report JSON");
  evalc->add_option("--constraints", ea.constraints, "Constraint JSONL; adds the Top-K transition distance")
      ->check(CLI::ExistingFile);
  evalc->add_option("--csv", ea.csv, "Append one row to this CSV table");

  ConstraintArgs ca;
  auto* mkc = app.add_subcommand("make-constraints", "Sample constraint sets from trajectories");
  mkc->add_option("trajectories", ca.trajectories, "Trajectory JSONL");
  mkc->add_option("out", ca.out, "Output constraint JSONL");
  mkc->add_option("--n-min", ca.n_min, "Fewest constraints per set");
  mkc->add_option("--n-max", ca.n_max, "Most constraints per set");
  mkc->add_option("--window", ca.window, "Half-width of each arrival window in slots");
  mkc->add_option("--fraction", ca.fraction, "Share of trajectories that get constraints");
  mkc->add_flag("--verify", ca.verify, "Check every set against its source trajectory");

  CLI11_PARSE(app, argc, argv);
  g_verbose = g.verbose;

  try {
    if (ingest->parsed()) return cmd_ingest(g, ia);
    if (trainc->parsed()) return cmd_train(g, ta);
    if (genc->parsed()) return cmd_generate(g, ga);
    if (evalc->parsed()) return cmd_evaluate(g, ea);
    if (mkc->parsed()) return cmd_make_constraints(g, ca);
  } catch (const std::exception& e) {
    report_error(e);
    return kExitError;
  }
  return kExitError;
}
