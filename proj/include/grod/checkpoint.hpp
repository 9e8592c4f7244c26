#pragma once

// Versioned little-endian binary checkpoints.
//
//   "GRODCKPT" | u32 version | i32 d_in, tau, classes, depth, d_hat, heads, m_h, m_v, r
//   u32 tensor count | per tensor: u32 name length, name, u32 rows, u32 cols, rows*cols f64 (column-major)
//
// Model parameters come first in parameters() order, followed by any extra
// named tensors (GROD state, VIM calibration, ...). Doubles are copied
// verbatim, so a save/load cycle is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "grod/grod.hpp"
#include "grod/transformer.hpp"

namespace grod {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'G', 'R', 'O', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TransformerModel model;
  std::map<std::string, Matrix> extras;

  const Matrix& extra(const std::string& name) const {
    auto it = extras.find(name);
    if (it == extras.end()) throw Error(ErrorKind::FormatError, "checkpoint lacks tensor '" + name + "'");
    return it->second;
  }
  std::optional<double> scalar(const std::string& name) const {
    auto it = extras.find(name);
    if (it == extras.end() || it->second.size() != 1) return std::nullopt;
    return it->second(0, 0);
  }
  void set_scalar(const std::string& name, double v) { extras[name] = Matrix::Constant(1, 1, v); }
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorKind::FormatError, "truncated checkpoint");
  }
  return v;
}

inline void put_tensor(std::ostream& os, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline std::pair<std::string, Matrix> take_tensor(std::istream& is) {
  const auto len = take<std::uint32_t>(is);
  if (len > 4096) throw Error(ErrorKind::FormatError, "tensor name too long");
  std::string name(len, '\0');
  if (!is.read(name.data(), len)) throw Error(ErrorKind::FormatError, "truncated tensor name");
  const auto rows = take<std::uint32_t>(is);
  const auto cols = take<std::uint32_t>(is);
  if (static_cast<std::uint64_t>(rows) * cols > (1ULL << 32)) {
    throw Error(ErrorKind::FormatError, "tensor '" + name + "' too large");
  }
  Matrix m(rows, cols);
  if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
    throw Error(ErrorKind::FormatError, "truncated tensor '" + name + "'");
  }
  return {std::move(name), std::move(m)};
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const TransformerModel& m = ck.model;
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  for (int v : {m.d_in, m.tau, m.classes, m.depth(), m.budget.d_hat, m.budget.heads, m.budget.m_h,
                m.budget.m_v, m.budget.r}) {
    detail::put<std::int32_t>(os, v);
  }
  const auto params = parameters(m);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size() + ck.extras.size()));
  for (const auto& [name, p] : params) detail::put_tensor(os, name, *p);
  for (const auto& [name, t] : ck.extras) detail::put_tensor(os, name, t);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::FormatError, "not a GROD checkpoint");
  }
  const auto version = detail::take<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::FormatError, "unsupported checkpoint version " + std::to_string(version));
  }
  int h[9];
  for (int& v : h) v = detail::take<std::int32_t>(is);
  const Budget budget{h[4], h[5], h[6], h[7], h[8]};
  Checkpoint ck;
  ck.model = make_model(h[0], h[1], h[3], budget, h[2]);

  const auto count = detail::take<std::uint32_t>(is);
  std::map<std::string, Matrix> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = detail::take_tensor(is);
    if (!tensors.emplace(name, std::move(t)).second) {
      throw Error(ErrorKind::FormatError, "duplicate tensor '" + name + "'");
    }
  }
  for (auto& [name, p] : parameters(ck.model)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorKind::FormatError, "checkpoint lacks parameter '" + name + "'");
    if (it->second.rows() != p->rows() || it->second.cols() != p->cols()) {
      throw Error(ErrorKind::ShapeMismatch, "parameter '" + name + "' is " + shape_of(it->second) +
                                                ", expected " + shape_of(*p));
    }
    *p = std::move(it->second);
    tensors.erase(it);
  }
  ck.extras = std::move(tensors);
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  write_checkpoint(os, ck);
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + path);
  return read_checkpoint(is);
}

inline std::string checkpoint_bytes(const Checkpoint& ck) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, ck);
  return os.str();
}

/// GrodState as "state.*" tensors, so training can resume from a checkpoint.
inline void store_state(Checkpoint& ck, const GrodState& s) {
  ck.set_scalar("state.initialized", s.initialized ? 1.0 : 0.0);
  ck.set_scalar("state.batch_index", static_cast<double>(s.batch_index));
  ck.set_scalar("state.classes", s.classes);
  ck.set_scalar("state.lambda", s.lambda_filter);
  ck.set_scalar("state.dist_id_pca", s.dist_id_pca);
  ck.extras["state.mu_pca"] = s.mu_pca;
  ck.extras["state.cov_pca"] = s.cov_pca;
  ck.extras["state.cov_pca_inv"] = s.cov_pca_inv;
  for (std::size_t c = 0; c < s.per_class.size(); ++c) {
    const ClassStats& cs = s.per_class[c];
    const std::string p = "state.class" + std::to_string(c + 1) + ".";
    ck.set_scalar(p + "ready", cs.ready ? 1.0 : 0.0);
    ck.set_scalar(p + "dist_id", cs.dist_id);
    ck.extras[p + "mean"] = cs.mean;
    ck.extras[p + "cov"] = cs.cov;
    ck.extras[p + "cov_inv"] = cs.cov_inv;
  }
  ck.extras["state.warmup_pool"] = s.warmup_pool;
  Matrix labels(static_cast<Eigen::Index>(s.warmup_labels.size()), 1);
  for (std::size_t i = 0; i < s.warmup_labels.size(); ++i) labels(static_cast<Eigen::Index>(i), 0) = s.warmup_labels[i];
  ck.extras["state.warmup_labels"] = labels;
}

inline GrodState restore_state(const Checkpoint& ck) {
  GrodState s;
  s.initialized = ck.extra("state.initialized")(0, 0) != 0.0;
  s.batch_index = static_cast<long>(ck.extra("state.batch_index")(0, 0));
  s.classes = static_cast<int>(ck.extra("state.classes")(0, 0));
  s.lambda_filter = ck.extra("state.lambda")(0, 0);
  s.dist_id_pca = ck.extra("state.dist_id_pca")(0, 0);
  s.mu_pca = ck.extra("state.mu_pca");
  s.cov_pca = ck.extra("state.cov_pca");
  s.cov_pca_inv = ck.extra("state.cov_pca_inv");
  s.per_class.resize(static_cast<std::size_t>(s.classes));
  for (std::size_t c = 0; c < s.per_class.size(); ++c) {
    ClassStats& cs = s.per_class[c];
    const std::string p = "state.class" + std::to_string(c + 1) + ".";
    cs.ready = ck.extra(p + "ready")(0, 0) != 0.0;
    cs.dist_id = ck.extra(p + "dist_id")(0, 0);
    cs.mean = ck.extra(p + "mean");
    cs.cov = ck.extra(p + "cov");
    cs.cov_inv = ck.extra(p + "cov_inv");
  }
  s.warmup_pool = ck.extra("state.warmup_pool");
  const Matrix& labels = ck.extra("state.warmup_labels");
  for (Eigen::Index i = 0; i < labels.rows(); ++i) s.warmup_labels.push_back(static_cast<int>(labels(i, 0)));
  return s;
}

}  // namespace grod
