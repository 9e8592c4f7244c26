// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any of them fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "grod/harness/commands.hpp"
#include "support/filter_audit.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"

using namespace grod;
using namespace grod::harness;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

ExperimentConfig shipped(const char* name) {
  return load_config((fs::path(GROD_SOURCE_DIR) / "configs" / name).string());
}

// --- 2 ------------------------------------------------------------------------

Outcome capacity_sweep() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = shipped("sweep.cfg");
  const SweepSummary s = run_sweep(cfg);
  const double secs = seconds_since(t0);
  const std::size_t seeds = cfg.seeds.size();
  std::ostringstream shapes;
  for (std::size_t i = 0; i < cfg.sweep.size(); ++i) {
    double ood = 0.0, id = 0.0;
    for (std::size_t k = 0; k < seeds; ++k) {
      ood += s.rows[i * seeds + k].ood_acc;
      id += s.rows[i * seeds + k].test_id_acc;
    }
    shapes << (i ? " " : "") << "l=" << cfg.sweep[i].depth << "/d=" << cfg.sweep[i].budget.d_hat << ":"
           << fmt("%.3f/%.3f", id / static_cast<double>(seeds), ood / static_cast<double>(seeds));
  }
  return {s.fraction_meeting >= 0.70 && secs <= 600.0,
          fmt("fraction of depths with ood_acc<=0.10 and id_acc>=0.90 = %.3f (need >= 0.70), %.1fs; ",
              s.fraction_meeting, secs) +
              "id/ood acc per shape: " + shapes.str()};
}

// --- 3 ------------------------------------------------------------------------

Outcome grod_beats_baseline() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = shipped("appendix_c.cfg");
  const ExperimentConfig base = cross_entropy_only(cfg);
  double grod_auroc = 0.0, base_auroc = 0.0;
  for (auto seed : cfg.seeds) {
    const GeneratedData d = generate(cfg, seed);
    const std::map<std::string, FeatureBatch> sets{{"ood", d.ood}};
    const TrainResult g = train_model(cfg, cfg.model, d.train, seed);
    const TrainResult b = train_model(base, base.model, d.train, seed);
    grod_auroc += evaluate(g.model, d.test, sets, cfg.scorer, std::nullopt).overall.auroc;
    base_auroc += evaluate(b.model, d.test, sets, cfg.scorer, std::nullopt).overall.auroc;
  }
  const double n = static_cast<double>(cfg.seeds.size());
  grod_auroc /= n;
  base_auroc /= n;
  const double secs = seconds_since(t0);
  return {grod_auroc - base_auroc >= 0.15 && secs <= 900.0,
          fmt("mean AUROC grod %.4f vs gamma=0 %.4f, gain %.4f (need >= 0.15), %zu seeds, %.1fs", grod_auroc,
              base_auroc, grod_auroc - base_auroc, cfg.seeds.size(), secs)};
}

// --- 4 ------------------------------------------------------------------------

Outcome gradients() {
  CounterRng rng(2024, 4);
  oracle::GradCheck model;
  for (int t = 0; t < 20; ++t) {
    const TransformerModel m = oracle::random_tiny_model(1 + t % 2, rng);
    const oracle::GradCheck g = oracle::check_model_gradient(m, rng);
    model.max_rel_error = std::max(model.max_rel_error, g.max_rel_error);
    model.checked += g.checked;
    model.skipped += g.skipped;
  }
  oracle::GradCheck loss;
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index outputs = 3 + static_cast<Eigen::Index>(rng.below(4));
    const Vector y = oracle::random_label(outputs, rng);
    Vector z(outputs);
    for (Eigen::Index i = 0; i < outputs; ++i) z(i) = 3.0 * rng.normal();
    const oracle::GradCheck g = oracle::check_loss_gradient(y, z, rng.uniform(), oracle::Stencil::FivePoint, 1e-3);
    loss.max_rel_error = std::max(loss.max_rel_error, g.max_rel_error);
    loss.checked += g.checked;
  }
  return {model.max_rel_error <= 1e-4 && loss.max_rel_error <= 1e-6,
          fmt("model max rel err %.3g over %zu entries (%zu below 1e-8 skipped, need <= 1e-4); "
              "loss max rel err %.3g over %zu entries (need <= 1e-6), five-point stencil, h 1e-4 model / 1e-3 loss",
              model.max_rel_error, model.checked, model.skipped, loss.max_rel_error, loss.checked)};
}

// --- 5 ------------------------------------------------------------------------

Outcome metric_oracles() {
  const oracle::MetricOracleReport r = oracle::check_metric_oracles(200, 5);
  return {r.passed(1e-12), fmt("AUROC exact %d/%d, FPR@95 exact %d/%d, AUPR-in err %.3g, AUPR-out err %.3g "
                               "(need <= 1e-12)",
                               r.auroc_exact, r.instances, r.fpr_exact, r.instances, r.max_aupr_in_error,
                               r.max_aupr_out_error)};
}

// --- 6 ------------------------------------------------------------------------

Outcome filter_invariants() {
  const oracle::FilterAudit a = oracle::audit_filter(50, 6);
  std::string detail = fmt("%d batches (%d with retained fakes, %zu fakes): min distance slack %.3g, "
                           "max cap excess %ld, max center offset/a %.4f, max row-sum err %.3g",
                           a.batches, a.batches_with_fakes, a.fakes, a.min_margin_slack, a.max_cap_excess,
                           a.max_center_offset_over_a, a.max_row_sum_error);
  if (!a.failures.empty()) detail += "; first failure: " + a.failures.front();
  return {a.passed() && a.batches == 50, detail};
}

// --- 7 ------------------------------------------------------------------------

Matrix random_matrix(Eigen::Index r, Eigen::Index c, CounterRng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix random_spd(Eigen::Index n, double cond, CounterRng& rng) {
  const Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(n, n, rng)).householderQ();
  Vector spectrum(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    spectrum(i) = std::pow(cond, n == 1 ? 0.0 : -static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return q * spectrum.asDiagonal() * q.transpose();
}

double inf_norm(const Matrix& m) { return m.cwiseAbs().rowwise().sum().maxCoeff(); }

Outcome numerics() {
  CounterRng rng(7, 7);
  const double eps0 = GrodConfig{}.eps0;
  double residual = 0.0, residual_raw = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(32));
    const double cond = std::pow(10.0, rng.uniform(0.0, 6.0));
    const Matrix sigma = random_spd(n, cond, rng);
    const Matrix eye = Matrix::Identity(n, n);
    residual = std::max(residual, inf_norm((sigma + eps0 * eye) * regularized_inverse(sigma, eps0) - eye));
    residual_raw = std::max(residual_raw, inf_norm(sigma * regularized_inverse(sigma, 0.0) - eye));
  }
  double affine = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const Matrix sigma = random_spd(n, 100.0, rng);
    Matrix a = random_matrix(n, n, rng);
    a.diagonal().array() += 3.0;
    const Vector x = random_matrix(n, 1, rng);
    const Vector mu = random_matrix(n, 1, rng);
    const double before = mahalanobis_sq(x, mu, regularized_inverse(sigma, 0.0));
    const double after = mahalanobis_sq(a * x, a * mu, regularized_inverse(a * sigma * a.transpose(), 0.0));
    affine = std::max(affine, std::abs(after - before) / std::max(1.0, before));
  }
  return {residual <= 1e-8 && residual_raw <= 1e-8 && affine <= 1e-8,
          fmt("inverse residual inf-norm %.3g with eps0 %.0e, %.3g with eps0 0, on 100 SPD (cond <= 1e6, "
              "dim <= 32); affine invariance rel err %.3g (need <= 1e-8)",
              residual, eps0, residual_raw, affine)};
}

// --- 8 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism() {
  const ExperimentConfig cfg = shipped("appendix_c.cfg");
  const fs::path root = fs::temp_directory_path() / "grod_acceptance_determinism";
  fs::remove_all(root);
  std::string reports[2], stdout_json[2], ckpts[2];
  for (int i = 0; i < 2; ++i) {
    const std::string out = (root / ("run" + std::to_string(i))).string();
    cmd_gen_data(cfg, 1, out);
    cmd_train(cfg, 1, out);
    stdout_json[i] = cmd_eval(cfg, 1, out).dump();
    reports[i] = slurp(fs::path(out) / "report.json");
    ckpts[i] = slurp(fs::path(out) / "model.ckpt");
  }
  const Checkpoint ck = load_checkpoint((root / "run0" / "model.ckpt").string());
  const bool round_trip = checkpoint_bytes(ck) == ckpts[0];
  const bool same = !reports[0].empty() && reports[0] == reports[1] && stdout_json[0] == stdout_json[1];
  fs::remove_all(root);
  return {same && ckpts[0] == ckpts[1] && round_trip,
          fmt("report.json identical: %s (%zu bytes), checkpoints identical: %s, checkpoint re-encode bit-exact: %s",
              same ? "yes" : "no", reports[0].size(), ckpts[0] == ckpts[1] ? "yes" : "no",
              round_trip ? "yes" : "no")};
}

// --- 9 ------------------------------------------------------------------------

Outcome ingest() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = shipped("ingest.cfg");
  const auto runs = run_ingest(cfg);
  const double secs = seconds_since(t0);
  double g = 0.0, b = 0.0;
  for (const auto& r : runs) {
    g += r.grod.overall.auroc;
    b += r.baseline.overall.auroc;
  }
  g /= static_cast<double>(runs.size());
  b /= static_cast<double>(runs.size());
  return {g >= b && secs <= 120.0 && cfg.ingest_dim == 64 && cfg.ingest_classes == 4,
          fmt("%d-dim %d-class, mean AUROC grod %.4f vs msp baseline %.4f over %zu seeds, %.1fs (need <= 120s)",
              cfg.ingest_dim, cfg.ingest_classes, g, b, runs.size(), secs)};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {2, capacity_sweep}, {3, grod_beats_baseline}, {4, gradients},   {5, metric_oracles},
      {6, filter_invariants}, {7, numerics},        {8, determinism}, {9, ingest},
  };
  std::printf("SKIP criterion 1: full-scale benchmark results need pretrained backbones; not run\n");
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
