#pragma once

// Experiment configuration. A config is a flat JSON object; command-line
// flags are merged over the file contents key by key, so a flag always wins.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnflow/dynamics.hpp"
#include "attnflow/errors.hpp"
#include "attnflow/models.hpp"
#include "attnflow/training.hpp"

namespace attnflow::harness {

/// Malformed input: unknown key, wrong type, unreadable file.
class UsageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// The only environment variable consulted; it replaces the default output
/// directory (an explicit `out` key or flag still wins).
inline constexpr const char* kOutDirEnv = "ATTNFLOW_OUT_DIR";

struct ExperimentConfig {
  std::string command;

  Dims dims{4, 8, 4};
  ModelKind model = ModelKind::linear;
  GradForm form = GradForm::exact;
  std::size_t layers = 4;
  bool shared = true;
  bool label_free = false;
  double h = 0.1;
  std::size_t steps = 1000;
  Integrator method = Integrator::rk4;
  std::uint64_t seed = 0;
  double lr = 1.0;
  std::size_t epochs = 200;
  std::size_t instances = 50;
  std::size_t samples = 256;
  double rel_tol = kDefaultRelTol;
  double abs_tol = kDefaultAbsTol;
  double fd_step = kDefaultFdStep;
  double init_scale = 0.1;
  double param_scale = 1.0;
  double t_end = 1.0;
  std::vector<double> h_values{0.2, 0.1, 0.05, 0.025};
  std::string out = "out";
  std::string checkpoint;
  bool dump_states = false;
  std::size_t jobs = 1;
};

struct KeyDoc {
  const char* key;
  const char* help;
};

/// Every accepted key with its documented default; drives --help and the
/// unknown-key check.
inline const std::vector<KeyDoc>& config_keys() {
  static const std::vector<KeyDoc> keys = {
      {"seed", "master RNG seed (required)"},
      {"S", "sequence length (default 4)"},
      {"Fi", "input feature width (default 8)"},
      {"Fo", "output feature width / classes (default 4)"},
      {"model", "linear | quadratic (default linear)"},
      {"form", "quadratic gradient form: exact | paper_literal (default exact)"},
      {"layers", "number of blocks (default 4)"},
      {"shared", "tie all block parameters to one matrix (default true)"},
      {"label_free", "skip the label sub-step in blocks (default false)"},
      {"h", "step size (default 0.1)"},
      {"steps", "flow integration steps (default 1000)"},
      {"method", "flow integrator: euler | rk4 (default rk4)"},
      {"lr", "outer gradient-descent learning rate (default 1.0)"},
      {"epochs", "training epochs (default 200)"},
      {"instances", "random instances for check-grad (default 50)"},
      {"samples", "planted dataset size (default 256)"},
      {"rel_tol", "gradient check relative tolerance (default 1e-6)"},
      {"abs_tol", "gradient check absolute floor (default 1e-8)"},
      {"fd_step", "central-difference step (default 1e-5)"},
      {"init_scale", "std-dev of initial block parameters (default 0.1)"},
      {"param_scale", "scale of fixture parameters for flow/blocks/order (default 1.0)"},
      {"T", "final time of the order study (default 1.0)"},
      {"h_values", "descending step sizes of the order study (default [0.2,0.1,0.05,0.025])"},
      {"out", "output directory (default out, or $ATTNFLOW_OUT_DIR)"},
      {"checkpoint", "checkpoint.json to resume from"},
      {"dump_states", "write full Z snapshots to states.jsonl (default false)"},
      {"jobs", "worker threads for independent instances (default 1)"},
  };
  return keys;
}

namespace detail {

template <typename T>
T get_as(const nlohmann::json& doc, const char* key) {
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("config key \"" + std::string(key) + "\" has the wrong type");
  }
}

inline std::size_t get_count(const nlohmann::json& doc, const char* key) {
  const auto& v = doc.at(key);
  if (!v.is_number_integer()) throw UsageError("config key \"" + std::string(key) + "\" must be an integer");
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  const auto s = v.get<std::int64_t>();
  if (s < 1) throw ValidationError("config key \"" + std::string(key) + "\" must be >= 1");
  return static_cast<std::size_t>(s);
}

inline double get_real(const nlohmann::json& doc, const char* key) {
  const auto& v = doc.at(key);
  if (!v.is_number()) throw UsageError("config key \"" + std::string(key) + "\" must be a number");
  return v.get<double>();
}

inline void require_valid(bool ok, const char* key, const std::string& what) {
  if (!ok) throw ValidationError("config key \"" + std::string(key) + "\" " + what);
}

}  // namespace detail

inline const char* to_string(ModelKind m) { return m == ModelKind::linear ? "linear" : "quadratic"; }
inline const char* to_string(GradForm f) { return f == GradForm::exact ? "exact" : "paper_literal"; }
inline const char* to_string(Integrator m) { return m == Integrator::rk4 ? "rk4" : "euler"; }

/// Builds and validates a config from the file document with `flags` merged
/// over it. Unknown keys and type errors raise UsageError; invariant
/// violations raise ValidationError naming the key.
inline ExperimentConfig parse_config(const nlohmann::json& file_doc, const nlohmann::json& flags = nlohmann::json::object(),
                                     const std::string& command = "") {
  if (!file_doc.is_object()) throw UsageError("config document must be a JSON object");
  if (!flags.is_null() && !flags.is_object()) throw UsageError("flag overrides must be a JSON object");
  nlohmann::json doc = file_doc;
  if (flags.is_object()) doc.update(flags);

  std::set<std::string> known;
  for (const auto& k : config_keys()) known.insert(k.key);
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw UsageError("unknown config key \"" + key + "\"");
  }

  ExperimentConfig cfg;
  cfg.command = command;
  if (!doc.contains("seed")) throw ValidationError("config key \"seed\" is required");
  {
    const auto& v = doc.at("seed");
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw UsageError("config key \"seed\" must be a non-negative integer");
    }
    cfg.seed = v.get<std::uint64_t>();
  }

  if (doc.contains("S")) cfg.dims.seq = detail::get_count(doc, "S");
  if (doc.contains("Fi")) cfg.dims.in = detail::get_count(doc, "Fi");
  if (doc.contains("Fo")) cfg.dims.out = detail::get_count(doc, "Fo");
  if (doc.contains("model")) {
    const auto m = detail::get_as<std::string>(doc, "model");
    detail::require_valid(m == "linear" || m == "quadratic", "model", "must be linear or quadratic");
    cfg.model = m == "linear" ? ModelKind::linear : ModelKind::quadratic;
  }
  if (doc.contains("form")) {
    const auto f = detail::get_as<std::string>(doc, "form");
    detail::require_valid(f == "exact" || f == "paper_literal", "form", "must be exact or paper_literal");
    cfg.form = f == "exact" ? GradForm::exact : GradForm::paper_literal;
  }
  if (doc.contains("layers")) {
    // Zero layers is the pure-regression baseline for training.
    const auto& v = doc.at("layers");
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw ValidationError("config key \"layers\" must be a non-negative integer");
    }
    cfg.layers = v.get<std::size_t>();
  }
  if (doc.contains("shared")) cfg.shared = detail::get_as<bool>(doc, "shared");
  if (doc.contains("label_free")) cfg.label_free = detail::get_as<bool>(doc, "label_free");
  if (doc.contains("h")) cfg.h = detail::get_real(doc, "h");
  if (doc.contains("steps")) cfg.steps = detail::get_count(doc, "steps");
  if (doc.contains("method")) {
    const auto m = detail::get_as<std::string>(doc, "method");
    detail::require_valid(m == "euler" || m == "rk4", "method", "must be euler or rk4");
    cfg.method = m == "rk4" ? Integrator::rk4 : Integrator::euler;
  }
  if (doc.contains("lr")) cfg.lr = detail::get_real(doc, "lr");
  if (doc.contains("epochs")) cfg.epochs = detail::get_count(doc, "epochs");
  if (doc.contains("instances")) cfg.instances = detail::get_count(doc, "instances");
  if (doc.contains("samples")) cfg.samples = detail::get_count(doc, "samples");
  if (doc.contains("rel_tol")) cfg.rel_tol = detail::get_real(doc, "rel_tol");
  if (doc.contains("abs_tol")) cfg.abs_tol = detail::get_real(doc, "abs_tol");
  if (doc.contains("fd_step")) cfg.fd_step = detail::get_real(doc, "fd_step");
  if (doc.contains("init_scale")) cfg.init_scale = detail::get_real(doc, "init_scale");
  if (doc.contains("param_scale")) cfg.param_scale = detail::get_real(doc, "param_scale");
  if (doc.contains("T")) cfg.t_end = detail::get_real(doc, "T");
  if (doc.contains("h_values")) cfg.h_values = detail::get_as<std::vector<double>>(doc, "h_values");
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') cfg.out = env;
  if (doc.contains("out")) cfg.out = detail::get_as<std::string>(doc, "out");
  if (doc.contains("checkpoint")) cfg.checkpoint = detail::get_as<std::string>(doc, "checkpoint");
  if (doc.contains("dump_states")) cfg.dump_states = detail::get_as<bool>(doc, "dump_states");
  if (doc.contains("jobs")) cfg.jobs = detail::get_count(doc, "jobs");

  detail::require_valid(cfg.h > 0.0 && std::isfinite(cfg.h), "h", "must be > 0");
  detail::require_valid(cfg.lr >= 0.0 && std::isfinite(cfg.lr), "lr", "must be >= 0");
  detail::require_valid(cfg.rel_tol > 0.0, "rel_tol", "must be > 0");
  detail::require_valid(cfg.abs_tol > 0.0, "abs_tol", "must be > 0");
  detail::require_valid(cfg.fd_step > 0.0, "fd_step", "must be > 0");
  detail::require_valid(cfg.init_scale >= 0.0, "init_scale", "must be >= 0");
  detail::require_valid(cfg.param_scale >= 0.0, "param_scale", "must be >= 0");
  detail::require_valid(cfg.model == ModelKind::linear || cfg.param_scale > 0.0, "param_scale",
                        "must be > 0 for the quadratic model");
  detail::require_valid(cfg.t_end > 0.0, "T", "must be > 0");
  detail::require_valid(!cfg.h_values.empty(), "h_values", "must be non-empty");
  for (std::size_t i = 0; i < cfg.h_values.size(); ++i) {
    detail::require_valid(cfg.h_values[i] > 0.0, "h_values", "entries must be > 0");
    detail::require_valid(i == 0 || cfg.h_values[i] < cfg.h_values[i - 1], "h_values",
                          "must be strictly descending");
  }
  detail::require_valid(!cfg.out.empty(), "out", "must be non-empty");
  return cfg;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file \"" + path + "\"");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config file \"" + path + "\" is not valid JSON: " + e.what());
  }
}

/// The config echoed into manifests and checkpoints.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {
      {"seed", c.seed},         {"S", c.dims.seq},
      {"Fi", c.dims.in},        {"Fo", c.dims.out},
      {"model", to_string(c.model)},
      {"form", to_string(c.form)},
      {"layers", c.layers},     {"shared", c.shared},
      {"label_free", c.label_free},
      {"h", c.h},               {"steps", c.steps},
      {"method", to_string(c.method)},
      {"lr", c.lr},             {"epochs", c.epochs},
      {"instances", c.instances},
      {"samples", c.samples},   {"rel_tol", c.rel_tol},
      {"abs_tol", c.abs_tol},   {"fd_step", c.fd_step},
      {"init_scale", c.init_scale},
      {"param_scale", c.param_scale},
      {"T", c.t_end},           {"h_values", c.h_values},
      {"out", c.out},           {"checkpoint", c.checkpoint},
      {"dump_states", c.dump_states},
      {"jobs", c.jobs},
  };
}

}  // namespace attnflow::harness
