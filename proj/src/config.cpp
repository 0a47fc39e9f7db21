#include "trajforge/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <functional>
#include <sstream>
#include <vector>

#include "trajforge/error.hpp"
#include "trajforge/io.hpp"

namespace trajforge {

namespace {

using nlohmann::json;

struct Field {
  std::string section;  // empty for top level
  std::string key;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename T>
T as(const json& v, const std::string& name) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw Error(ErrorCode::InvalidConfig, name + ": expected true or false");
    return v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw Error(ErrorCode::InvalidConfig, name + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_integer() && v.get<std::int64_t>() < 0)
        throw Error(ErrorCode::InvalidConfig, name + ": expected a non-negative integer");
    }
    return v.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw Error(ErrorCode::InvalidConfig, name + ": expected a number");
    return v.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw Error(ErrorCode::InvalidConfig, name + ": expected a quoted string");
    return v.get<std::string>();
  } else {
    if (!v.is_array()) throw Error(ErrorCode::InvalidConfig, name + ": expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(as<std::string>(e, name));
    return out;
  }
}

#define TF_FIELD(sec, name, member)                                                                      \
  Field {                                                                                                \
    sec, name,                                                                                           \
        [](RunConfig& c, const json& v) {                                                                \
          c.member = as<std::decay_t<decltype(c.member)>>(v, std::string(sec).empty() ? std::string(name) \
                                                                                      : std::string(sec) + "." + name); \
        },                                                                                               \
        [](const RunConfig& c) { return json(c.member); }                                                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      TF_FIELD("", "seed", seed),
      TF_FIELD("", "threads", threads),
      TF_FIELD("grid", "origin_lat", grid.origin_lat),
      TF_FIELD("grid", "origin_lon", grid.origin_lon),
      TF_FIELD("grid", "cell_km", grid.cell_km),
      TF_FIELD("grid", "n_rows", grid.n_rows),
      TF_FIELD("grid", "n_cols", grid.n_cols),
      TF_FIELD("timespec", "slot_minutes", timespec.slot_minutes),
      TF_FIELD("ingest", "radius_km", ingest.radius_km),
      TF_FIELD("ingest", "min_minutes", ingest.min_minutes),
      TF_FIELD("ingest", "min_visits", ingest.min_visits),
      TF_FIELD("model", "d_model", model.d_model),
      TF_FIELD("model", "n_layers", model.n_layers),
      TF_FIELD("model", "n_heads", model.n_heads),
      TF_FIELD("model", "max_seq_len", model.max_seq_len),
      TF_FIELD("model", "dropout", model.dropout),
      TF_FIELD("lora", "enabled", use_lora),
      TF_FIELD("lora", "rank", lora.rank),
      TF_FIELD("lora", "alpha", lora.alpha),
      TF_FIELD("lora", "dropout", lora.dropout),
      TF_FIELD("lora", "targets", lora.targets),
      TF_FIELD("train", "epochs", train.epochs),
      TF_FIELD("train", "batch_size", train.batch_size),
      TF_FIELD("train", "learning_rate", train.learning_rate),
      TF_FIELD("train", "beta1", train.beta1),
      TF_FIELD("train", "beta2", train.beta2),
      TF_FIELD("train", "eps", train.eps),
      TF_FIELD("train", "grad_clip", train.grad_clip),
      Field{"train", "permute", [](RunConfig& c, const json& v) {
              c.train.permute = parse_permute_mode(as<std::string>(v, "train.permute"));
            },
            [](const RunConfig& c) { return json(std::string(to_string(c.train.permute))); }},
      Field{"train", "mode", [](RunConfig& c, const json& v) {
              c.train.mode = parse_train_mode(as<std::string>(v, "train.mode"));
            },
            [](const RunConfig& c) { return json(std::string(to_string(c.train.mode))); }},
      TF_FIELD("gen", "temperature", gen.temperature),
      TF_FIELD("gen", "max_new_tokens", gen.max_new_tokens),
      TF_FIELD("gen", "max_retries", gen.max_retries),
      TF_FIELD("metrics", "distance_bins", metrics.distance_bins),
      TF_FIELD("metrics", "gradius_bins", metrics.gradius_bins),
      TF_FIELD("metrics", "upper_quantile", metrics.upper_quantile),
      TF_FIELD("metrics", "dailyloc_max", metrics.dailyloc_max),
      TF_FIELD("metrics", "grank_top_k", metrics.grank_top_k),
      TF_FIELD("metrics", "irank_depth", metrics.irank_depth),
      TF_FIELD("metrics", "top_k_transition", metrics.top_k_transition),
      TF_FIELD("constraints", "n_min", constraints.n_min),
      TF_FIELD("constraints", "n_max", constraints.n_max),
      TF_FIELD("constraints", "window", constraints.window_halfwidth),
      TF_FIELD("constraints", "fraction", constraints.fraction),
      TF_FIELD("paths", "gps_csv", paths.gps_csv),
      TF_FIELD("paths", "out_dir", paths.out_dir),
      TF_FIELD("paths", "trajectories", paths.trajectories),
      TF_FIELD("paths", "checkpoint", paths.checkpoint),
      TF_FIELD("paths", "generated", paths.generated),
      TF_FIELD("paths", "constraints", paths.constraints),
      TF_FIELD("paths", "report", paths.report),
  };
  return table;
}

#undef TF_FIELD

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing comment, ignoring '#' inside quotes.
std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

bool is_bare_key(std::string_view s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') return false;
  return true;
}

json parse_scalar(std::string_view s) {
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '\\' && i + 2 < s.size()) {
        ++i;
        out += s[i] == 'n' ? '\n' : s[i] == 't' ? '\t' : s[i];
      } else if (s[i] == '"') {
        throw std::invalid_argument("stray quote");
      } else {
        out += s[i];
      }
    }
    return out;
  }
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const bool integral = s.find_first_of(".eE") == std::string_view::npos;
  if (integral) {
    if (!s.empty() && s.front() != '-') {
      std::uint64_t u = 0;
      const auto [p, ec] = std::from_chars(first, last, u);
      if (ec == std::errc() && p == last) return u;
    } else {
      std::int64_t i = 0;
      const auto [p, ec] = std::from_chars(first, last, i);
      if (ec == std::errc() && p == last) return i;
    }
  }
  double d = 0.0;
  const auto [p, ec] = std::from_chars(first, last, d);
  if (ec == std::errc() && p == last) return d;
  throw std::invalid_argument("not a value");
}

json parse_value(std::string_view s) {
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') {
    json arr = json::array();
    std::string_view body = trim(s.substr(1, s.size() - 2));
    while (!body.empty()) {
      std::size_t cut = 0;
      bool quoted = false;
      while (cut < body.size() && (quoted || body[cut] != ',')) {
        if (body[cut] == '"') quoted = !quoted;
        ++cut;
      }
      arr.push_back(parse_scalar(trim(body.substr(0, cut))));
      body = cut < body.size() ? trim(body.substr(cut + 1)) : std::string_view{};
    }
    return arr;
  }
  return parse_scalar(s);
}

std::string format_value(const json& v) {
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i].dump();
    return out + "]";
  }
  if (v.is_number_float()) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v.get<double>();
    auto s = ss.str();
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
  }
  return v.dump();
}

}  // namespace

void RunConfig::finalize() {
  train.seed = seed;
  gen.seed = seed;
  validate();
}

void RunConfig::validate() const {
  grid.validate();
  timespec.validate();
  if (!(ingest.radius_km > 0.0)) throw Error(ErrorCode::InvalidConfig, "ingest.radius_km must be positive");
  if (!(ingest.min_minutes >= 0.0)) throw Error(ErrorCode::InvalidConfig, "ingest.min_minutes must be >= 0");
  if (ingest.min_visits < 1) throw Error(ErrorCode::InvalidConfig, "ingest.min_visits must be >= 1");
  if (threads < 1) throw Error(ErrorCode::InvalidConfig, "threads must be >= 1");
  // vocab_size is unknown until a vocabulary exists; check the rest with a placeholder
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 1;
  m.validate();
  if (use_lora) lora.validate();
  train.validate();
  gen.validate();
  if (metrics.distance_bins < 1 || metrics.gradius_bins < 1 || metrics.dailyloc_max < 1 || metrics.grank_top_k < 1 ||
      metrics.irank_depth < 1 || metrics.top_k_transition < 1)
    throw Error(ErrorCode::InvalidConfig, "metrics bin counts must be >= 1");
  if (!(metrics.upper_quantile > 0.0 && metrics.upper_quantile <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "metrics.upper_quantile must lie in (0, 1]");
  if (constraints.n_min < 1 || constraints.n_max < constraints.n_min)
    throw Error(ErrorCode::InvalidConfig, "constraints need 1 <= n_min <= n_max");
  if (constraints.window_halfwidth < 0) throw Error(ErrorCode::InvalidConfig, "constraints.window must be >= 0");
  if (!(constraints.fraction > 0.0 && constraints.fraction <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "constraints.fraction must lie in (0, 1]");
}

nlohmann::json RunConfig::to_json() const {
  json out = json::object();
  for (const auto& f : fields()) {
    if (f.section.empty())
      out[f.key] = f.get(*this);
    else
      out[f.section][f.key] = f.get(*this);
  }
  return out;
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::InvalidConfig, "config line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return !f.section.empty() && f.section == name; });
      if (!known) fail("unknown section [" + std::string(name) + "]");
      section = name;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value_text = trim(line.substr(eq + 1));
    if (!is_bare_key(key)) fail("bad key '" + std::string(key) + "'");
    const auto it = std::find_if(fields().begin(), fields().end(),
                                 [&](const Field& f) { return f.section == section && f.key == key; });
    if (it == fields().end())
      fail("unknown key '" + (section.empty() ? std::string(key) : section + "." + std::string(key)) + "'");
    json value;
    try {
      value = parse_value(value_text);
    } catch (const std::invalid_argument&) {
      fail("cannot parse value '" + std::string(value_text) + "'");
    }
    try {
      it->set(base, value);
    } catch (const Error& e) {
      fail(e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text_file(path)); }

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      section = f.section;
      out += "\n[" + section + "]\n";
    }
    out += f.key + " = " + format_value(f.get(cfg)) + "\n";
  }
  return out;
}

}  // namespace trajforge
