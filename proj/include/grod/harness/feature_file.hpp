#pragma once

// CSV feature files:
//
//   dim=<s>,classes=<K>,rows=<n>
//   x_1,...,x_s,label        (n lines)
//
// Reals are written in shortest round-trip form, so write/read is exact.
// Train files hold labels 1..K; evaluation files may also use K+1 (OOD).

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "grod/feature_batch.hpp"
#include "grod/harness/config.hpp"

namespace grod::harness {

inline void write_features(std::ostream& os, const FeatureBatch& b) {
  os << "dim=" << b.dim() << ",classes=" << b.classes << ",rows=" << b.rows() << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < b.features.rows(); ++r) {
    for (Eigen::Index c = 0; c < b.features.cols(); ++c) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), b.features(r, c));
      os.write(buf, end - buf);
      os << ',';
    }
    os << b.labels[static_cast<std::size_t>(r)] << '\n';
  }
}

inline void save_features(const std::string& path, const FeatureBatch& b) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  write_features(os, b);
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

/// Parses a feature file. Labels run 1..K, or 1..K+1 when allow_ood is set.
/// Errors name the 1-based line of the offending row.
inline FeatureBatch read_features(std::istream& is, bool allow_ood, const std::string& origin = "<features>") {
  auto fail = [&origin](int line, const std::string& what) -> Error {
    return Error(ErrorKind::FormatError, origin + " line " + std::to_string(line) + ": " + what);
  };
  std::string line;
  if (!std::getline(is, line)) throw fail(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  long dim = -1, classes = -1, rows = -1;
  for (const auto& field : detail::split(line, ',')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw fail(1, "malformed header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    long v = 0;
    auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
    if (ec != std::errc() || ptr != val.data() + val.size() || v < 0) {
      throw fail(1, "bad header value '" + val + "'");
    }
    if (key == "dim") dim = v;
    else if (key == "classes") classes = v;
    else if (key == "rows") rows = v;
    else throw fail(1, "unknown header key '" + key + "'");
  }
  if (dim < 1 || classes < 1 || rows < 0) throw fail(1, "header needs dim>=1, classes>=1, rows>=0");

  FeatureBatch b;
  b.classes = static_cast<int>(classes);
  b.features.resize(rows, dim);
  b.labels.reserve(static_cast<std::size_t>(rows));
  const int max_label = allow_ood ? b.classes + 1 : b.classes;
  for (long r = 0; r < rows; ++r) {
    const int lineno = static_cast<int>(r) + 2;
    if (!std::getline(is, line)) throw fail(lineno, "expected " + std::to_string(rows) + " rows");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const char* p = line.data();
    const char* end = p + line.size();
    for (long c = 0; c < dim; ++c) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || ptr == end || *ptr != ',') {
        throw fail(lineno, "column " + std::to_string(c + 1) + " is not a number followed by ','");
      }
      b.features(r, c) = v;
      p = ptr + 1;
    }
    int label = 0;
    auto [ptr, ec] = std::from_chars(p, end, label);
    if (ec != std::errc() || ptr != end) throw fail(lineno, "label is not an integer or row has extra columns");
    if (label < 1 || label > max_label) {
      throw fail(lineno, "label " + std::to_string(label) + " outside 1.." + std::to_string(max_label));
    }
    b.labels.push_back(label);
  }
  for (int lineno = static_cast<int>(rows) + 2; std::getline(is, line); ++lineno) {
    if (detail::trim(line).empty()) continue;
    throw fail(lineno, "more rows than the header declares");
  }
  return b;
}

inline FeatureBatch load_features(const std::string& path, bool allow_ood) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + path);
  return read_features(is, allow_ood, path);
}

}  // namespace grod::harness
