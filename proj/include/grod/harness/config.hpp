#pragma once

// Flat `key = value` experiment configs. '#' starts a comment; blank lines are
// ignored; later keys override earlier ones.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "grod/errors.hpp"
#include "grod/grod.hpp"
#include "grod/postprocess.hpp"
#include "grod/transformer.hpp"

namespace grod::harness {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto end = pos == std::string_view::npos ? s.size() : pos;
    if (auto item = trim(s.substr(start, end - start)); !item.empty()) out.push_back(std::move(item));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorKind::ConfigError, "key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& is, const std::string& origin = "<config>") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ConfigError, origin + " line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorKind::ConfigError, origin + " line " + std::to_string(lineno) + ": empty key");
    }
    kv[key] = detail::trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot read config " + path);
  return parse_key_values(is, path);
}

/// FNV-1a 64 over the canonical "key=value\n" text in key order.
inline std::uint64_t config_hash(const KeyValues& kv) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : kv) {
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

enum class Task { AppendixC, CapacitySweep, Ingest };

enum class OptimizerKind { AdamW, Sgd };

/// One sweep row: depth l and per-block budget m.
struct ModelShape {
  int depth = 2;
  Budget budget{2, 2, 1, 1, 4};
};

struct ExperimentConfig {
  Task task = Task::AppendixC;
  ModelShape model;
  double init_scale = 0.1;
  GrodConfig grod;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double lr = 1e-4;
  double weight_decay = 5e-2;
  int epochs = 10;
  int batch_size = 64;
  double validation_fraction = 0.1;
  std::vector<std::uint64_t> seeds{1};
  Scorer scorer = Scorer::Msp;
  double temperature = 1.0;
  int vim_dim = 0;  // 0 = default_vim_dim(s)

  int train_per_component = 1000;
  int test_per_component = 500;

  int ingest_classes = 4;
  int ingest_dim = 64;
  int ingest_train_per_class = 200;
  int ingest_test_per_class = 100;
  int ingest_ood = 400;
  double ingest_separation = 8.0;

  std::vector<ModelShape> sweep;
  int histogram_bins = 10;

  std::string train_file;
  std::string test_file;
  std::string ood_file;
  std::string checkpoint;

  KeyValues raw;
  std::uint64_t hash = 0;

  std::uint64_t seed() const { return seeds.front(); }

  void validate() const {
    if (batch_size < 2) throw Error(ErrorKind::ConfigError, "batch_size must be >= 2");
    if (epochs < 1) throw Error(ErrorKind::ConfigError, "epochs must be >= 1");
    if (seeds.empty()) throw Error(ErrorKind::ConfigError, "seeds must not be empty");
    if (!(lr > 0.0)) throw Error(ErrorKind::ConfigError, "optimizer.lr must be > 0");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
      throw Error(ErrorKind::ConfigError, "validation_fraction must be in [0,1)");
    }
    if (!model.budget.valid() || model.depth < 0) throw Error(ErrorKind::ConfigError, "invalid model shape");
    if (histogram_bins < 1) throw Error(ErrorKind::ConfigError, "histogram_bins must be >= 1");
    grod.validate();
  }
};

namespace detail {

inline Budget parse_budget(const std::string& key, const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 5) {
    throw Error(ErrorKind::ConfigError, "key '" + key + "': budget needs 5 integers d_hat,h,m_h,m_v,r");
  }
  Budget b{parse_number<int>(key, parts[0]), parse_number<int>(key, parts[1]), parse_number<int>(key, parts[2]),
           parse_number<int>(key, parts[3]), parse_number<int>(key, parts[4])};
  if (!b.valid()) throw Error(ErrorKind::ConfigError, "key '" + key + "': budget entries must be >= 1");
  return b;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorKind::ConfigError, "key '" + key + "': expected a boolean, got '" + text + "'");
}

}  // namespace detail

/// Builds a config from parsed keys. Unknown keys are rejected so typos surface.
inline ExperimentConfig make_config(const KeyValues& kv) {
  using detail::parse_number;
  ExperimentConfig c;
  c.raw = kv;
  c.hash = config_hash(kv);
  std::vector<int> sweep_depths;
  Budget sweep_budget = c.model.budget;
  std::vector<ModelShape> sweep_extra;

  for (const auto& [k, v] : kv) {
    if (k == "task") {
      if (v == "appendix_c") c.task = Task::AppendixC;
      else if (v == "capacity_sweep") c.task = Task::CapacitySweep;
      else if (v == "ingest") c.task = Task::Ingest;
      else throw Error(ErrorKind::ConfigError, "unknown task '" + v + "'");
    } else if (k == "model.depth") c.model.depth = parse_number<int>(k, v);
    else if (k == "model.budget") c.model.budget = detail::parse_budget(k, v);
    else if (k == "model.init_scale") c.init_scale = parse_number<double>(k, v);
    else if (k == "grod.a") c.grod.a = parse_number<double>(k, v);
    else if (k == "grod.gamma") c.grod.gamma = parse_number<double>(k, v);
    else if (k == "grod.gamma_opt") c.grod.gamma_opt = parse_number<double>(k, v);
    else if (k == "grod.num") c.grod.num = parse_number<int>(k, v);
    else if (k == "grod.warmup_batches") c.grod.warmup_batches = parse_number<int>(k, v);
    else if (k == "grod.lambda") c.grod.lambda_filter = parse_number<double>(k, v);
    else if (k == "grod.adapt_lambda") c.grod.adapt_lambda = detail::parse_bool(k, v);
    else if (k == "grod.eps") c.grod.eps = parse_number<double>(k, v);
    else if (k == "grod.eps0") c.grod.eps0 = parse_number<double>(k, v);
    else if (k == "grod.pca_axes") c.grod.pca_axes = parse_number<int>(k, v);
    else if (k == "grod.lda_axes") c.grod.lda_axes = parse_number<int>(k, v);
    else if (k == "grod.sources") {
      c.grod.use_pca = c.grod.use_lda = false;
      for (const auto& s : detail::split(v, ',')) {
        if (s == "pca") c.grod.use_pca = true;
        else if (s == "lda") c.grod.use_lda = true;
        else if (s != "none") throw Error(ErrorKind::ConfigError, "grod.sources: unknown source '" + s + "'");
      }
    } else if (k == "optimizer") {
      if (v == "adamw") c.optimizer = OptimizerKind::AdamW;
      else if (v == "sgd") c.optimizer = OptimizerKind::Sgd;
      else throw Error(ErrorKind::ConfigError, "unknown optimizer '" + v + "'");
    } else if (k == "optimizer.lr") c.lr = parse_number<double>(k, v);
    else if (k == "optimizer.weight_decay") c.weight_decay = parse_number<double>(k, v);
    else if (k == "epochs") c.epochs = parse_number<int>(k, v);
    else if (k == "batch_size") c.batch_size = parse_number<int>(k, v);
    else if (k == "validation_fraction") c.validation_fraction = parse_number<double>(k, v);
    else if (k == "seeds" || k == "seed") {
      c.seeds.clear();
      for (const auto& s : detail::split(v, ',')) c.seeds.push_back(parse_number<std::uint64_t>(k, s));
    } else if (k == "scorer") c.scorer = parse_scorer(v);
    else if (k == "scorer.temperature") c.temperature = parse_number<double>(k, v);
    else if (k == "scorer.vim_dim") c.vim_dim = parse_number<int>(k, v);
    else if (k == "data.train_per_component") c.train_per_component = parse_number<int>(k, v);
    else if (k == "data.test_per_component") c.test_per_component = parse_number<int>(k, v);
    else if (k == "ingest.classes") c.ingest_classes = parse_number<int>(k, v);
    else if (k == "ingest.dim") c.ingest_dim = parse_number<int>(k, v);
    else if (k == "ingest.train_per_class") c.ingest_train_per_class = parse_number<int>(k, v);
    else if (k == "ingest.test_per_class") c.ingest_test_per_class = parse_number<int>(k, v);
    else if (k == "ingest.ood") c.ingest_ood = parse_number<int>(k, v);
    else if (k == "ingest.separation") c.ingest_separation = parse_number<double>(k, v);
    else if (k == "sweep.depths") {
      for (const auto& s : detail::split(v, ',')) sweep_depths.push_back(parse_number<int>(k, s));
    } else if (k == "sweep.budget") sweep_budget = detail::parse_budget(k, v);
    else if (k == "sweep.extra") {
      // "depth@d_hat,h,m_h,m_v,r; ..."
      for (const auto& item : detail::split(v, ';')) {
        const auto at = item.find('@');
        if (at == std::string::npos) throw Error(ErrorKind::ConfigError, "sweep.extra: expected depth@budget");
        sweep_extra.push_back({parse_number<int>(k, detail::trim(item.substr(0, at))),
                               detail::parse_budget(k, item.substr(at + 1))});
      }
    } else if (k == "sweep.histogram_bins") c.histogram_bins = parse_number<int>(k, v);
    else if (k == "paths.train") c.train_file = v;
    else if (k == "paths.test") c.test_file = v;
    else if (k == "paths.ood") c.ood_file = v;
    else if (k == "paths.checkpoint") c.checkpoint = v;
    else throw Error(ErrorKind::ConfigError, "unknown key '" + k + "'");
  }
  for (int d : sweep_depths) c.sweep.push_back({d, sweep_budget});
  c.sweep.insert(c.sweep.end(), sweep_extra.begin(), sweep_extra.end());
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) { return make_config(load_key_values(path)); }

}  // namespace grod::harness
