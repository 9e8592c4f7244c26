#pragma once

// JSON reports. Keys keep insertion order and carry no timestamps, so a fixed
// config and seed reproduce the same bytes.

#include <fstream>
#include <string>

#include <json.hpp>

#include "grod/harness/config.hpp"
#include "grod/harness/training.hpp"
#include "grod/metrics.hpp"

namespace grod::harness {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

inline Json to_json(const MetricSummary& m) {
  return Json{{"id_acc", m.id_acc},
              {"fpr_at_95", m.fpr_at_95},
              {"auroc", m.auroc},
              {"aupr_in", m.aupr_in},
              {"aupr_out", m.aupr_out}};
}

inline MetricSummary metrics_from_json(const Json& j) {
  MetricSummary m;
  m.id_acc = j.at("id_acc").get<double>();
  m.fpr_at_95 = j.at("fpr_at_95").get<double>();
  m.auroc = j.at("auroc").get<double>();
  m.aupr_in = j.at("aupr_in").get<double>();
  m.aupr_out = j.at("aupr_out").get<double>();
  return m;
}

inline Json to_json(const EpochLog& e) {
  Json j{{"epoch", e.epoch},       {"loss", e.loss},
         {"l1", e.l1},             {"l2", e.l2},
         {"retained_ood", e.retained_ood}, {"warmup_batches", e.warmup_batches},
         {"val_acc", e.val_acc}};
  j["val_auroc"] = e.val_auroc ? Json(*e.val_auroc) : Json(nullptr);
  return j;
}

/// Skeleton shared by every report: schema version, config hash and seed.
inline Json report_header(const std::string& command, const ExperimentConfig& cfg, std::uint64_t seed) {
  return Json{{"schema_version", kReportSchemaVersion},
              {"command", command},
              {"config_hash", hex64(cfg.hash)},
              {"seed", seed}};
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  os << j.dump(2) << '\n';
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

inline Json read_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + path);
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, path + ": " + e.what());
  }
}

}  // namespace grod::harness
