#include "anyway/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "anyway/errors.hpp"

namespace anyway {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(out);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_count(key, item));
  return out;
}

std::string real_text(double v) { return fmt::format("{}", v); }

std::string counts_text(const std::vector<std::size_t>& v) { return fmt::format("{}", fmt::join(v, ",")); }

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define COUNT_FIELD(name)                                                                 \
  Field {                                                                                 \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = parse_count(#name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.name); }                 \
  }
#define REAL_FIELD(name)                                                                 \
  Field {                                                                                \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = parse_real(#name, v); }, \
        [](const ExperimentConfig& c) { return real_text(c.name); }                     \
  }
#define FLAG_FIELD(name)                                                                 \
  Field {                                                                                \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = parse_flag(#name, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); } \
  }
#define STRING_FIELD(name)                                                  \
  Field {                                                                   \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = v; },  \
        [](const ExperimentConfig& c) { return c.name; }                    \
  }
#define COUNTS_FIELD(name)                                                                 \
  Field {                                                                                  \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = parse_counts(#name, v); }, \
        [](const ExperimentConfig& c) { return counts_text(c.name); }                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"backend", [](ExperimentConfig& c, const std::string& v) { c.backend = parse_backend(v); },
            [](const ExperimentConfig& c) { return to_string(c.backend); }},
      Field{"mode", [](ExperimentConfig& c, const std::string& v) { c.mode = parse_train_mode(v); },
            [](const ExperimentConfig& c) { return to_string(c.mode); }},
      COUNT_FIELD(output_width),
      COUNTS_FIELD(cardinality_pool),
      Field{"fixed_n",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "none" || v.empty()) {
                c.fixed_n.reset();
              } else {
                c.fixed_n = parse_count("fixed_n", v);
              }
            },
            [](const ExperimentConfig& c) {
              return c.fixed_n ? std::to_string(*c.fixed_n) : std::string("none");
            }},
      COUNT_FIELD(shots),
      COUNT_FIELD(queries),
      COUNTS_FIELD(hidden),
      COUNT_FIELD(feature_dim),
      REAL_FIELD(inner_lr),
      COUNT_FIELD(inner_steps),
      Field{"outer_optimizer",
            [](ExperimentConfig& c, const std::string& v) { c.outer_optimizer = parse_optimizer(v); },
            [](const ExperimentConfig& c) { return to_string(c.outer_optimizer); }},
      REAL_FIELD(outer_lr),
      COUNT_FIELD(episodes),
      COUNT_FIELD(meta_batch),
      COUNT_FIELD(eval_interval),
      COUNT_FIELD(val_episodes),
      FLAG_FIELD(semantic_enabled),
      Field{"lambda",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto" || v.empty()) {
                c.lambda.reset();
              } else {
                c.lambda = parse_real("lambda", v);
              }
            },
            [](const ExperimentConfig& c) {
              return c.lambda ? real_text(*c.lambda) : std::string("auto");
            }},
      FLAG_FIELD(mixup_enabled),
      STRING_FIELD(mixup_labels),
      FLAG_FIELD(semantic_outer_to_encoder),
      Field{"ema_rate",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto" || v.empty()) {
                c.ema_rate.reset();
              } else {
                c.ema_rate = parse_real("ema_rate", v);
              }
            },
            [](const ExperimentConfig& c) {
              return c.ema_rate ? real_text(*c.ema_rate) : std::string("auto");
            }},
      STRING_FIELD(train_data),
      STRING_FIELD(val_data),
      STRING_FIELD(test_data),
      COUNT_FIELD(data_dim),
      COUNT_FIELD(train_classes),
      COUNT_FIELD(val_classes),
      COUNT_FIELD(test_classes),
      COUNT_FIELD(per_class),
      REAL_FIELD(mean_scale),
      REAL_FIELD(noise_sigma),
      COUNT_FIELD(data_seed),
      COUNT_FIELD(test_rotation_seed),
      REAL_FIELD(test_sigma_scale),
      COUNTS_FIELD(eval_ns),
      COUNT_FIELD(eval_episodes),
      COUNTS_FIELD(j_repeats),
      Field{"ensemble_methods",
            [](ExperimentConfig& c, const std::string& v) {
              c.ensemble_methods = split_list(v);
              for (const auto& m : c.ensemble_methods) parse_ensemble_method(m);
            },
            [](const ExperimentConfig& c) {
              return fmt::format("{}", fmt::join(c.ensemble_methods, ","));
            }},
      COUNT_FIELD(stall_window),
      REAL_FIELD(stall_eps),
      COUNT_FIELD(seed),
  };
  return table;
}

}  // namespace

double default_lambda(Backend backend, std::size_t shots) {
  if (backend == Backend::maml) return shots <= 1 ? 0.1 : 0.5;
  return shots <= 1 ? 0.01 : 0.1;
}

double default_ema_rate(std::size_t shots) { return shots <= 1 ? 0.01 : 0.05; }

void ExperimentConfig::apply(const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->set(*this, trim(value));
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(key + ":", 0) == 0) throw;
    throw ConfigError(key + ": " + what);
  }
}

void ExperimentConfig::apply_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    apply(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void ExperimentConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

std::size_t ExperimentConfig::effective_output_width() const {
  return mode == TrainMode::fixed && fixed_n ? *fixed_n : output_width;
}

double ExperimentConfig::effective_lambda() const {
  return lambda ? *lambda : default_lambda(backend, shots);
}

double ExperimentConfig::effective_ema_rate() const {
  return ema_rate ? *ema_rate : default_ema_rate(shots);
}

void ExperimentConfig::validate() const {
  if (mode == TrainMode::fixed && !fixed_n) throw ConfigError("fixed_n: required when mode=fixed");
  if (fixed_n && *fixed_n == 0) throw ConfigError("fixed_n: must be at least 1");
  if (!fixed_n && cardinality_pool.empty()) throw ConfigError("cardinality_pool: must not be empty");
  for (std::size_t n : cardinality_pool) {
    if (n == 0) throw ConfigError("cardinality_pool: entries must be at least 1");
  }
  if (shots == 0) throw ConfigError("shots: must be at least 1");
  if (queries == 0) throw ConfigError("queries: must be at least 1");
  if (feature_dim == 0) throw ConfigError("feature_dim: must be at least 1");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden: widths must be positive");
  }
  if (inner_lr < 0.0) throw ConfigError("inner_lr: must be non-negative");
  if (outer_lr < 0.0) throw ConfigError("outer_lr: must be non-negative");
  if (meta_batch == 0) throw ConfigError("meta_batch: must be at least 1");
  if (lambda && *lambda < 0.0) throw ConfigError("lambda: must be non-negative");
  if (ema_rate && !(*ema_rate > 0.0 && *ema_rate <= 1.0)) {
    throw ConfigError("ema_rate: must lie in (0, 1]");
  }
  if (stall_window < 2) throw ConfigError("stall_window: must be at least 2");
  parse_mixup_label_mode(mixup_labels);
  for (const auto& m : ensemble_methods) parse_ensemble_method(m);
  for (std::size_t j : j_repeats) {
    if (j == 0) throw ConfigError("j_repeats: entries must be at least 1");
  }
  if (mixup_enabled && !semantic_enabled) {
    throw ConfigError("mixup_enabled: requires semantic_enabled=true");
  }
  if (backend == Backend::maml) {
    if (output_width == 0) throw ConfigError("output_width: must be at least 1");
    const std::size_t O = effective_output_width();
    if (mode == TrainMode::anyway) {
      std::size_t widest = fixed_n.value_or(0);
      for (std::size_t n : cardinality_pool) widest = std::max(widest, n);
      for (std::size_t n : eval_ns) widest = std::max(widest, n);
      if (widest > O) {
        throw ConfigError("output_width: " + std::to_string(O) + " is smaller than cardinality " +
                          std::to_string(widest));
      }
      if (mixup_enabled) {
        std::size_t pool_max = fixed_n.value_or(0);
        for (std::size_t n : cardinality_pool) pool_max = std::max(pool_max, n);
        if (pool_max + 1 > O) {
          throw ConfigError("output_width: mixup needs room for label N+1 (N=" +
                            std::to_string(pool_max) + ")");
        }
      }
    } else {
      if (mixup_enabled) throw ConfigError("mixup_enabled: not available in fixed mode");
      for (std::size_t n : eval_ns) {
        if (n > O) {
          throw ConfigError("eval_ns: " + std::to_string(n) + " exceeds the fixed head width " +
                            std::to_string(O));
        }
      }
    }
  } else if (mixup_enabled) {
    throw ConfigError("mixup_enabled: only available for the maml backend");
  }
  if (train_data.empty()) {
    if (data_dim == 0) throw ConfigError("data_dim: must be at least 1");
    if (train_classes < 2) throw ConfigError("train_classes: must be at least 2");
    if (per_class < shots + queries) {
      throw ConfigError("per_class: " + std::to_string(per_class) + " < shots + queries");
    }
    if (!(noise_sigma > 0.0)) throw ConfigError("noise_sigma: must be positive");
    if (mean_scale < 0.0) throw ConfigError("mean_scale: must be non-negative");
    if (!(test_sigma_scale > 0.0)) throw ConfigError("test_sigma_scale: must be positive");
  }
}

EpisodeSpec ExperimentConfig::episode_spec() const {
  EpisodeSpec spec;
  spec.cardinality_pool = cardinality_pool;
  spec.shots = shots;
  spec.queries = queries;
  if (mode == TrainMode::fixed) spec.fixed_n = fixed_n;
  return spec;
}

InnerConfig ExperimentConfig::inner_config() const { return InnerConfig{inner_steps, inner_lr, true}; }

OuterConfig ExperimentConfig::outer_config() const {
  return OuterConfig{outer_optimizer, outer_lr, episodes, meta_batch, eval_interval, val_episodes};
}

SemanticConfig ExperimentConfig::semantic_config(std::size_t semantic_classes) const {
  SemanticConfig sem;
  sem.enabled = semantic_enabled;
  sem.classes = semantic_classes;
  sem.lambda = effective_lambda();
  sem.mixup = mixup_enabled;
  sem.label_mode = parse_mixup_label_mode(mixup_labels);
  sem.outer_to_encoder = semantic_outer_to_encoder;
  return sem;
}

std::vector<EnsembleMethod> ExperimentConfig::methods() const {
  std::vector<EnsembleMethod> out;
  for (const auto& m : ensemble_methods) out.push_back(parse_ensemble_method(m));
  return out;
}

}  // namespace anyway
