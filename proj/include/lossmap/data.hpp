#pragma once

#include "lossmap/common.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace lossmap {

struct ColumnStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct Dataset {
  Mat features;             // N x d
  std::vector<int> labels;  // length N, values in [0, n_classes)
  std::vector<std::string> feature_names;
  std::optional<std::vector<ColumnStats>> standardization;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  int n_classes() const {
    int m = 0;
    for (int y : labels) m = std::max(m, y + 1);
    return m;
  }

  void validate() const {
    if (features.rows() != static_cast<Eigen::Index>(labels.size()))
      throw std::invalid_argument("dataset: feature/label count mismatch");
    if (!features.allFinite())
      throw std::invalid_argument("dataset: non-finite feature value");
    for (int y : labels)
      if (y < 0) throw std::invalid_argument("dataset: negative label");
  }

  std::uint64_t digest() const {
    std::uint64_t h = fnv1a(features.data(), sizeof(double) * features.size());
    h = fnv1a(labels.data(), sizeof(int) * labels.size(), h);
    return h;
  }
};

// Uniform points on [0,1]^2, label = tile parity, optionally noise-flipped.
inline Dataset gen_checkerboard(int n_samples, int tiles_per_axis,
                                double label_noise, std::uint64_t seed) {
  if (tiles_per_axis <= 0)
    throw std::invalid_argument("gen_checkerboard: tiles_per_axis must be positive");
  if (n_samples <= 0)
    throw std::invalid_argument("gen_checkerboard: n_samples must be positive");
  if (label_noise < 0.0 || label_noise >= 1.0)
    throw std::invalid_argument("gen_checkerboard: label_noise must be in [0,1)");

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Dataset ds;
  ds.features.resize(n_samples, 2);
  ds.labels.resize(n_samples);
  ds.feature_names = {"x", "y"};
  const int t = tiles_per_axis;
  for (int i = 0; i < n_samples; ++i) {
    double x = unif(rng);
    double y = unif(rng);
    ds.features(i, 0) = x;
    ds.features(i, 1) = y;
    int tx = std::min(static_cast<int>(x * t), t - 1);
    int ty = std::min(static_cast<int>(y * t), t - 1);
    int label = (tx + ty) % 2;
    double flip = unif(rng);
    if (flip < label_noise) label = 1 - label;
    ds.labels[i] = label;
  }
  return ds;
}

inline int checkerboard_parity_label(double x, double y, int tiles_per_axis) {
  int tx = std::min(static_cast<int>(x * tiles_per_axis), tiles_per_axis - 1);
  int ty = std::min(static_cast<int>(y * tiles_per_axis), tiles_per_axis - 1);
  return (tx + ty) % 2;
}

using LabelColumn = std::variant<std::string, int>;

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_numeric(const std::string& cell, std::size_t row, std::size_t col) {
  char* end = nullptr;
  const char* begin = cell.c_str();
  double v = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  if (end == begin || (end && *end != '\0') || !std::isfinite(v)) {
    std::ostringstream msg;
    msg << "csv: non-numeric cell '" << cell << "' at row " << row << ", column " << col;
    throw std::runtime_error(msg.str());
  }
  return v;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const LabelColumn& label_column,
                        bool has_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);

  std::string line;
  std::vector<std::string> header;
  std::size_t row_no = 0;
  if (has_header) {
    if (!std::getline(in, line)) throw std::runtime_error("csv: empty file " + path);
    header = detail::split_csv_line(line);
    ++row_no;
  }

  std::vector<std::vector<double>> rows;
  std::size_t n_cols = header.size();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (n_cols == 0) n_cols = cells.size();
    if (cells.size() != n_cols)
      throw std::runtime_error("csv: inconsistent column count at row " +
                               std::to_string(row_no));
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      vals[c] = detail::parse_numeric(cells[c], row_no, c);
    rows.push_back(std::move(vals));
    ++row_no;
  }
  if (rows.empty()) throw std::runtime_error("csv: no data rows in " + path);

  int label_idx = -1;
  if (std::holds_alternative<int>(label_column)) {
    label_idx = std::get<int>(label_column);
  } else {
    const auto& name = std::get<std::string>(label_column);
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) label_idx = static_cast<int>(c);
    if (label_idx < 0)
      throw std::runtime_error("csv: label column '" + name + "' not found");
  }
  if (label_idx < 0 || label_idx >= static_cast<int>(n_cols))
    throw std::runtime_error("csv: label column index out of range");

  Dataset ds;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(n_cols) - 1;
  ds.features.resize(n, d);
  ds.labels.resize(n);
  for (std::size_t c = 0; c < n_cols; ++c) {
    if (static_cast<int>(c) == label_idx || header.empty()) continue;
    ds.feature_names.push_back(header[c]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index fc = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      double v = rows[i][c];
      if (static_cast<int>(c) == label_idx) {
        int y = static_cast<int>(std::lround(v));
        if (std::abs(v - y) > 1e-9 || y < 0)
          throw std::runtime_error("csv: label not a non-negative integer at row " +
                                   std::to_string(i));
        ds.labels[i] = y;
      } else {
        ds.features(i, fc++) = v;
      }
    }
  }
  ds.validate();
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  if (!ds.feature_names.empty()) {
    for (const auto& n : ds.feature_names) out << n << ',';
    out << "label\n";
  }
  char buf[64];
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index c = 0; c < ds.dim(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features(i, c));
      out << buf << ',';
    }
    out << ds.labels[i] << '\n';
  }
  if (!out) throw std::runtime_error("csv: write failed for " + path);
}

// Per-column z-score with population (divide-by-N) stddev. Constant columns
// map to zero with stddev recorded as 1.
inline Dataset standardize(const Dataset& ds) {
  if (ds.size() < 2) throw std::invalid_argument("standardize: need at least 2 rows");
  Dataset out = ds;
  std::vector<ColumnStats> stats(static_cast<std::size_t>(ds.dim()));
  const double n = static_cast<double>(ds.size());
  for (Eigen::Index c = 0; c < ds.dim(); ++c) {
    double mean = ds.features.col(c).mean();
    double var = (ds.features.col(c).array() - mean).square().sum() / n;
    double sd = std::sqrt(var);
    if (sd < 1e-12) {
      out.features.col(c).setZero();
      stats[c] = {mean, 1.0};
    } else {
      out.features.col(c) = (ds.features.col(c).array() - mean) / sd;
      stats[c] = {mean, sd};
    }
  }
  out.standardization = std::move(stats);
  return out;
}

}  // namespace lossmap
