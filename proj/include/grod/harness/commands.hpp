#pragma once

// The five CLI commands. Each writes its artifacts into an output directory and
// returns the JSON report it wrote.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "grod/checkpoint.hpp"
#include "grod/harness/config.hpp"
#include "grod/harness/evaluation.hpp"
#include "grod/harness/feature_file.hpp"
#include "grod/harness/report.hpp"
#include "grod/harness/training.hpp"
#include "grod/synthdata.hpp"

namespace grod::harness {

namespace fs = std::filesystem;

struct DataPaths {
  std::string train, test, ood;
};

inline DataPaths data_paths(const ExperimentConfig& cfg, const std::string& out_dir) {
  const fs::path out(out_dir);
  return {cfg.train_file.empty() ? (out / "train.csv").string() : cfg.train_file,
          cfg.test_file.empty() ? (out / "test.csv").string() : cfg.test_file,
          cfg.ood_file.empty() ? (out / "ood.csv").string() : cfg.ood_file};
}

inline std::string checkpoint_path(const ExperimentConfig& cfg, const std::string& out_dir) {
  return cfg.checkpoint.empty() ? (fs::path(out_dir) / "model.ckpt").string() : cfg.checkpoint;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::IoError, "cannot create directory " + dir);
}

/// Same config with outlier synthesis switched off and gamma = 0.
inline ExperimentConfig cross_entropy_only(ExperimentConfig cfg) {
  cfg.grod.gamma = 0.0;
  cfg.grod.use_pca = false;
  cfg.grod.use_lda = false;
  return cfg;
}

struct GeneratedData {
  FeatureBatch train, test, ood;
};

inline GeneratedData generate(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.task == Task::Ingest) {
    auto t = gen_feature_task(cfg.ingest_classes, cfg.ingest_dim, cfg.ingest_train_per_class,
                              cfg.ingest_test_per_class, cfg.ingest_ood, cfg.ingest_separation, seed);
    return {std::move(t.train), std::move(t.test), std::move(t.ood)};
  }
  auto d = gen_appendix_c(seed, cfg.train_per_component, cfg.test_per_component);
  return {std::move(d.train), std::move(d.test), std::move(d.ood)};
}

inline Json cmd_gen_data(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  ensure_dir(out_dir);
  const GeneratedData d = generate(cfg, seed);
  const DataPaths p = data_paths(cfg, out_dir);
  save_features(p.train, d.train);
  save_features(p.test, d.test);
  save_features(p.ood, d.ood);
  Json rep = report_header("gen-data", cfg, seed);
  rep["files"] = Json{{"train", {{"path", p.train}, {"rows", d.train.rows()}}},
                      {"test", {{"path", p.test}, {"rows", d.test.rows()}}},
                      {"ood", {{"path", p.ood}, {"rows", d.ood.rows()}}}};
  rep["dim"] = d.train.dim();
  rep["classes"] = d.train.classes;
  return rep;
}

inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, const TrainResult& tr, const FeatureBatch& train) {
  Checkpoint ck;
  ck.model = tr.model;
  store_state(ck, tr.state);
  store_calibration(ck, calibrate_scorer(cfg.scorer, tr.model, train.features, cfg.vim_dim));
  return ck;
}

inline Json training_log(const TrainResult& tr) {
  Json epochs = Json::array();
  for (const auto& e : tr.log) epochs.push_back(to_json(e));
  return Json{{"best_epoch", tr.best_epoch}, {"epochs", epochs}};
}

inline Json cmd_train(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  ensure_dir(out_dir);
  const DataPaths p = data_paths(cfg, out_dir);
  const FeatureBatch train = load_features(p.train, false);
  const bool head_only = cfg.task == Task::Ingest;
  const TrainResult tr = train_model(cfg, cfg.model, train, seed, head_only);
  const std::string ck_path = checkpoint_path(cfg, out_dir);
  save_checkpoint(ck_path, make_checkpoint(cfg, tr, train));

  Json rep = report_header("train", cfg, seed);
  rep["checkpoint"] = ck_path;
  rep["parameters"] = parameter_count(tr.model);
  rep["training"] = training_log(tr);
  write_json((fs::path(out_dir) / "train_log.json").string(), rep);
  return rep;
}

namespace detail {

inline void append_number(std::string& s, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  s.append(buf, end);
}

inline void write_scores_csv(const std::string& path, const Evaluation& ev) {
  std::string text = "set,row,label,score,prediction\n";
  auto dump = [&text](const std::string& name, const ScoredSet& s) {
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      text += name + "," + std::to_string(i) + "," + std::to_string(s.labels[i]) + ",";
      append_number(text, s.report.scores[i]);
      text += "," + std::to_string(s.report.predictions[i]) + "\n";
    }
  };
  dump("id", ev.id);
  for (const auto& [name, s] : ev.ood) dump(name, s);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !(os << text)) throw Error(ErrorKind::IoError, "cannot write " + path);
}

}  // namespace detail

inline Json evaluation_json(const Evaluation& ev, Scorer scorer) {
  Json per_set = Json::object();
  for (const auto& [name, m] : ev.per_set) per_set[name] = to_json(m);
  return Json{{"scorer", std::string(scorer_name(scorer))},
              {"threshold", ev.threshold},
              {"metrics", to_json(ev.overall)},
              {"per_set", per_set}};
}

inline Json cmd_eval(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  ensure_dir(out_dir);
  const DataPaths p = data_paths(cfg, out_dir);
  const Checkpoint ck = load_checkpoint(checkpoint_path(cfg, out_dir));
  const FeatureBatch test = load_features(p.test, true);
  std::map<std::string, FeatureBatch> ood{{"ood", load_features(p.ood, true)}};
  if (test.classes != ck.model.classes) {
    throw Error(ErrorKind::ShapeMismatch, "test file has " + std::to_string(test.classes) +
                                              " classes, checkpoint " + std::to_string(ck.model.classes));
  }
  const auto calib = load_calibration(ck);
  if (cfg.scorer == Scorer::Vim && !calib) {
    throw Error(ErrorKind::UninitializedState, "checkpoint was not calibrated for the vim scorer");
  }
  const Evaluation ev = evaluate(ck.model, test, ood, cfg.scorer, calib, cfg.temperature);
  detail::write_scores_csv((fs::path(out_dir) / "scores.csv").string(), ev);

  Json rep = report_header("eval", cfg, seed);
  const Json body = evaluation_json(ev, cfg.scorer);
  for (const auto& [k, v] : body.items()) rep[k] = v;
  write_json((fs::path(out_dir) / "report.json").string(), rep);
  return rep;
}

// --- capacity sweep -------------------------------------------------------

struct SweepRow {
  ModelShape shape;
  std::uint64_t seed = 0;
  double train_id_acc = 0.0;
  double test_id_acc = 0.0;
  double ood_acc = 0.0;
  std::vector<double> mean_score;               // per category: ID class 1..K, then OOD
  std::vector<std::vector<long>> histograms;    // same order, bins over [0, 1]
};

/// Max softmax probability over the K ID outputs (softmax taken over all K+1).
inline double id_likelihood(const Vector& logits) {
  return softmax(logits).head(logits.size() - 1).maxCoeff();
}

inline double full_argmax_accuracy(const Matrix& logits, const std::vector<int>& labels) {
  std::vector<int> pred;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) pred.push_back(classify_max(logits.row(r).transpose()));
  return id_accuracy(pred, labels, static_cast<int>(logits.cols()), false);
}

inline SweepRow sweep_row(const ExperimentConfig& cfg, const ModelShape& shape, std::uint64_t seed) {
  const ExperimentConfig ce = cross_entropy_only(cfg);
  const GeneratedData d = generate(cfg, seed);
  const TrainResult tr = train_model(ce, shape, d.train, seed);
  const int k = d.train.classes;

  SweepRow row;
  row.shape = shape;
  row.seed = seed;
  const Inference train_inf = run_model(tr.model, d.train.features);
  const Inference test_inf = run_model(tr.model, d.test.features);
  const Inference ood_inf = run_model(tr.model, d.ood.features);
  row.train_id_acc = full_argmax_accuracy(train_inf.logits, d.train.labels);
  row.test_id_acc = full_argmax_accuracy(test_inf.logits, d.test.labels);
  row.ood_acc = full_argmax_accuracy(ood_inf.logits, d.ood.labels);

  const auto bins = static_cast<std::size_t>(cfg.histogram_bins);
  row.mean_score.assign(static_cast<std::size_t>(k + 1), 0.0);
  row.histograms.assign(static_cast<std::size_t>(k + 1), std::vector<long>(bins, 0));
  std::vector<long> counts(static_cast<std::size_t>(k + 1), 0);
  auto add = [&](const Matrix& logits, const std::vector<int>& labels) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(r)] - 1);
      const double e = id_likelihood(logits.row(r).transpose());
      row.mean_score[c] += e;
      ++counts[c];
      const auto b = std::min(bins - 1, static_cast<std::size_t>(e * static_cast<double>(bins)));
      ++row.histograms[c][b];
    }
  };
  add(test_inf.logits, d.test.labels);
  add(ood_inf.logits, d.ood.labels);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) row.mean_score[c] /= static_cast<double>(counts[c]);
  }
  return row;
}

struct SweepSummary {
  std::vector<SweepRow> rows;
  long shapes_meeting = 0;  // seed-averaged OOD acc <= 0.10 and test ID acc >= 0.90
  double fraction_meeting = 0.0;
};

inline SweepSummary run_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep.empty()) throw Error(ErrorKind::ConfigError, "capacity sweep needs sweep.depths or sweep.extra");
  SweepSummary s;
  for (const auto& shape : cfg.sweep) {
    double ood = 0.0, id = 0.0;
    for (auto seed : cfg.seeds) {
      s.rows.push_back(sweep_row(cfg, shape, seed));
      ood += s.rows.back().ood_acc;
      id += s.rows.back().test_id_acc;
    }
    const double n = static_cast<double>(cfg.seeds.size());
    if (ood / n <= 0.10 && id / n >= 0.90) ++s.shapes_meeting;
  }
  s.fraction_meeting = static_cast<double>(s.shapes_meeting) / static_cast<double>(cfg.sweep.size());
  return s;
}

inline Json cmd_sweep_capacity(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  ensure_dir(out_dir);
  const SweepSummary s = run_sweep(cfg);
  Json rows = Json::array();
  std::string csv = "depth,d_hat,heads,m_h,m_v,r,seed,train_id_acc,test_id_acc,ood_acc\n";
  for (const auto& r : s.rows) {
    const Budget& b = r.shape.budget;
    rows.push_back(Json{{"depth", r.shape.depth},
                        {"budget", {b.d_hat, b.heads, b.m_h, b.m_v, b.r}},
                        {"seed", r.seed},
                        {"train_id_acc", r.train_id_acc},
                        {"test_id_acc", r.test_id_acc},
                        {"ood_acc", r.ood_acc},
                        {"mean_id_likelihood", r.mean_score},
                        {"histograms", r.histograms}});
    csv += std::to_string(r.shape.depth) + "," + std::to_string(b.d_hat) + "," + std::to_string(b.heads) + "," +
           std::to_string(b.m_h) + "," + std::to_string(b.m_v) + "," + std::to_string(b.r) + "," +
           std::to_string(r.seed) + ",";
    detail::append_number(csv, r.train_id_acc);
    csv += ",";
    detail::append_number(csv, r.test_id_acc);
    csv += ",";
    detail::append_number(csv, r.ood_acc);
    csv += "\n";
  }
  Json rep = report_header("sweep-capacity", cfg, seed);
  rep["seeds"] = cfg.seeds;
  rep["shapes_meeting"] = s.shapes_meeting;
  rep["fraction_meeting"] = s.fraction_meeting;
  rep["rows"] = rows;
  write_json((fs::path(out_dir) / "sweep.json").string(), rep);
  std::ofstream os((fs::path(out_dir) / "sweep.csv").string(), std::ios::binary | std::ios::trunc);
  if (!os || !(os << csv)) throw Error(ErrorKind::IoError, "cannot write sweep.csv");
  return rep;
}

// --- ingestion --------------------------------------------------------------

struct IngestRun {
  std::uint64_t seed = 0;
  Evaluation grod;
  Evaluation baseline;  // cross-entropy only, MSP scorer
};

inline IngestRun ingest_once(const ExperimentConfig& cfg, std::uint64_t seed, const FeatureBatch& train,
                             const FeatureBatch& test, const FeatureBatch& ood) {
  IngestRun run;
  run.seed = seed;
  const std::map<std::string, FeatureBatch> sets{{"ood", ood}};
  const TrainResult g = train_model(cfg, cfg.model, train, seed, true);
  run.grod = evaluate(g.model, test, sets, cfg.scorer,
                      calibrate_scorer(cfg.scorer, g.model, train.features, cfg.vim_dim), cfg.temperature);
  const TrainResult b = train_model(cross_entropy_only(cfg), cfg.model, train, seed, true);
  run.baseline = evaluate(b.model, test, sets, Scorer::Msp, std::nullopt);
  return run;
}

/// Trains the classifier head with GROD on fixed features (files from the
/// config paths when given, synthetic clusters otherwise) for every seed and
/// compares against a cross-entropy MSP baseline.
inline std::vector<IngestRun> run_ingest(const ExperimentConfig& cfg) {
  std::vector<IngestRun> runs;
  const bool from_files = !cfg.train_file.empty();
  std::optional<GeneratedData> files;
  if (from_files) {
    if (cfg.test_file.empty() || cfg.ood_file.empty()) {
      throw Error(ErrorKind::ConfigError, "ingest from files needs paths.train, paths.test and paths.ood");
    }
    files = GeneratedData{load_features(cfg.train_file, false), load_features(cfg.test_file, true),
                          load_features(cfg.ood_file, true)};
  }
  for (auto seed : cfg.seeds) {
    const GeneratedData d = from_files ? *files : generate(cfg, seed);
    runs.push_back(ingest_once(cfg, seed, d.train, d.test, d.ood));
  }
  return runs;
}

inline Json cmd_ingest(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto runs = run_ingest(cfg);
  MetricSummary mean_grod, mean_base;
  Json per_seed = Json::array();
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    per_seed.push_back(Json{{"seed", r.seed},
                            {"grod", evaluation_json(r.grod, cfg.scorer)},
                            {"baseline", evaluation_json(r.baseline, Scorer::Msp)}});
    for (auto [mean, ev] : {std::pair{&mean_grod, &r.grod.overall}, std::pair{&mean_base, &r.baseline.overall}}) {
      mean->id_acc += ev->id_acc / n;
      mean->fpr_at_95 += ev->fpr_at_95 / n;
      mean->auroc += ev->auroc / n;
      mean->aupr_in += ev->aupr_in / n;
      mean->aupr_out += ev->aupr_out / n;
    }
  }
  Json rep = report_header("ingest", cfg, seed);
  rep["seeds"] = cfg.seeds;
  rep["scorer"] = std::string(scorer_name(cfg.scorer));
  rep["metrics"] = to_json(mean_grod);
  rep["per_set"] = Json{{"grod", to_json(mean_grod)}, {"msp_baseline", to_json(mean_base)}};
  rep["runs"] = per_seed;
  write_json((fs::path(out_dir) / "ingest.json").string(), rep);
  return rep;
}

}  // namespace grod::harness
