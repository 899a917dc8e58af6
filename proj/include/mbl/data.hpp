#pragma once

// Sparse binary-classification datasets: LIBSVM text I/O and a seeded
// synthetic generator with a planted separating hyperplane.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "mbl/error.hpp"

namespace mbl {

struct Feature {
  std::uint32_t index;  // 0-based
  double value;

  friend bool operator==(const Feature&, const Feature&) = default;
};

/// Immutable row-major sparse example matrix with +-1 labels.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::size_t dim, std::vector<std::size_t> row_offsets,
          std::vector<Feature> entries, std::vector<double> labels)
      : dim_(dim),
        row_offsets_(std::move(row_offsets)),
        entries_(std::move(entries)),
        labels_(std::move(labels)) {
    if (row_offsets_.empty()) row_offsets_.push_back(0);
    if (row_offsets_.size() != labels_.size() + 1)
      throw DomainError("dataset: row count does not match label count");
    if (row_offsets_.front() != 0 || row_offsets_.back() != entries_.size())
      throw DomainError("dataset: row offsets do not span the entries");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] != 1.0 && labels_[i] != -1.0)
        throw DomainError("dataset: label must be +1 or -1");
      if (row_offsets_[i] > row_offsets_[i + 1])
        throw DomainError("dataset: decreasing row offsets");
      for (std::size_t j = row_offsets_[i]; j < row_offsets_[i + 1]; ++j) {
        if (entries_[j].index >= dim_)
          throw DomainError("dataset: feature index out of range");
        if (j > row_offsets_[i] && entries_[j].index <= entries_[j - 1].index)
          throw DomainError("dataset: feature indices must increase within a row");
      }
    }
  }

  std::size_t n() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t nnz() const { return entries_.size(); }

  std::span<const Feature> row(std::size_t i) const {
    return {entries_.data() + row_offsets_[i], row_offsets_[i + 1] - row_offsets_[i]};
  }
  double label(std::size_t i) const { return labels_[i]; }
  std::span<const double> labels() const { return labels_; }

  double row_squared_norm(std::size_t i) const {
    double acc = 0.0;
    for (const auto& f : row(i)) acc += f.value * f.value;
    return acc;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> row_offsets_{0};
  std::vector<Feature> entries_;
  std::vector<double> labels_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

struct ParseOptions {
  /// Accept 0/1 labels, mapping 0 to -1.
  bool zero_one_labels = false;
  /// Lower bound on the feature dimension; the result uses
  /// max(dim_override, largest index seen).
  std::size_t dim_override = 0;
};

namespace detail {

inline bool parse_real(std::string_view text, double& out) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size() && std::isfinite(out);
}

inline bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\r'; }

}  // namespace detail

/// Reads `<label> <idx>:<val> ...` lines. Indices are 1-based in the text and
/// must strictly increase within a line. Text after '#' is ignored, as are
/// blank lines.
inline Dataset parse_libsvm(std::istream& in, const ParseOptions& options = {}) {
  std::vector<std::size_t> offsets{0};
  std::vector<Feature> entries;
  std::vector<double> labels;
  std::size_t max_index = 0;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);

    std::size_t pos = 0;
    bool have_label = false;
    std::int64_t previous = 0;
    while (true) {
      while (pos < view.size() && detail::is_blank(view[pos])) ++pos;
      if (pos >= view.size()) break;
      const std::size_t start = pos;
      while (pos < view.size() && !detail::is_blank(view[pos])) ++pos;
      const std::string_view token = view.substr(start, pos - start);
      const std::size_t column = start + 1;

      if (!have_label) {
        double label = 0.0;
        if (!detail::parse_real(token, label))
          throw ParseError(line_no, column, "malformed label '" + std::string(token) + "'");
        if (options.zero_one_labels && label == 0.0) label = -1.0;
        if (label != 1.0 && label != -1.0)
          throw ParseError(line_no, column, "label outside accepted set '" + std::string(token) + "'");
        labels.push_back(label);
        have_label = true;
        continue;
      }

      const auto colon = token.find(':');
      if (colon == std::string_view::npos || colon == 0)
        throw ParseError(line_no, column, "malformed feature '" + std::string(token) + "'");
      std::uint64_t index = 0;
      const auto idx_text = token.substr(0, colon);
      auto [ptr, ec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), index);
      if (ec != std::errc{} || ptr != idx_text.data() + idx_text.size() || index == 0 ||
          index > std::numeric_limits<std::uint32_t>::max())
        throw ParseError(line_no, column, "malformed feature index '" + std::string(idx_text) + "'");
      double value = 0.0;
      if (!detail::parse_real(token.substr(colon + 1), value))
        throw ParseError(line_no, column + colon + 1,
                         "malformed feature value '" + std::string(token.substr(colon + 1)) + "'");
      if (static_cast<std::int64_t>(index) <= previous)
        throw ParseError(line_no, column, "feature index " + std::to_string(index) +
                                              " does not increase within the line");
      previous = static_cast<std::int64_t>(index);
      max_index = std::max<std::size_t>(max_index, index);
      entries.push_back({static_cast<std::uint32_t>(index - 1), value});
    }
    if (have_label) offsets.push_back(entries.size());
  }
  return Dataset(std::max(max_index, options.dim_override), std::move(offsets),
                 std::move(entries), std::move(labels));
}

/// Shortest round-trip decimal form, independent of the global locale.
inline std::string format_real(double value) {
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

inline void write_libsvm(std::ostream& out, const Dataset& data) {
  for (std::size_t i = 0; i < data.n(); ++i) {
    out << (data.label(i) > 0 ? "+1" : "-1");
    for (const auto& f : data.row(i)) out << ' ' << (f.index + 1) << ':' << format_real(f.value);
    out << '\n';
  }
}

struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t d = 100;
  std::size_t nnz_per_row = 10;
  std::uint64_t seed = 1;
  /// Probability that a planted label is flipped.
  double flip_probability = 0.0;
};

/// Rows carry exactly `nnz_per_row` distinct uniformly chosen features with
/// standard-normal values. Labels are the sign of the score against a
/// standard-normal planted hyperplane, then flipped with `flip_probability`.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 1) throw ConfigError("synthetic: n must be at least 1");
  if (spec.nnz_per_row < 1 || spec.nnz_per_row > spec.d)
    throw ConfigError("synthetic: nnz_per_row must lie in [1, d]");
  if (spec.d > std::numeric_limits<std::uint32_t>::max())
    throw ConfigError("synthetic: d too large");
  if (!(spec.flip_probability >= 0.0 && spec.flip_probability < 1.0))
    throw ConfigError("synthetic: flip probability must lie in [0, 1)");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> planted(spec.d);
  for (auto& v : planted) v = normal(rng);

  std::vector<std::size_t> offsets{0};
  std::vector<Feature> entries;
  entries.reserve(spec.n * spec.nnz_per_row);
  std::vector<double> labels;
  labels.reserve(spec.n);

  std::vector<std::uint32_t> chosen;
  chosen.reserve(spec.nnz_per_row);
  for (std::size_t i = 0; i < spec.n; ++i) {
    chosen.clear();
    // Floyd's sampling keeps `chosen` sorted via ordered insertion.
    for (std::size_t j = spec.d - spec.nnz_per_row; j < spec.d; ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, j);
      auto candidate = static_cast<std::uint32_t>(pick(rng));
      auto at = std::lower_bound(chosen.begin(), chosen.end(), candidate);
      if (at != chosen.end() && *at == candidate) {
        candidate = static_cast<std::uint32_t>(j);
        at = std::lower_bound(chosen.begin(), chosen.end(), candidate);
      }
      chosen.insert(at, candidate);
    }
    double score = 0.0;
    for (auto idx : chosen) {
      const double value = normal(rng);
      score += value * planted[idx];
      entries.push_back({idx, value});
    }
    double label = score >= 0.0 ? 1.0 : -1.0;
    if (unit(rng) < spec.flip_probability) label = -label;
    labels.push_back(label);
    offsets.push_back(entries.size());
  }
  return Dataset(spec.d, std::move(offsets), std::move(entries), std::move(labels));
}

/// 64-bit FNV-1a over raw bytes; used as a dataset content fingerprint.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace mbl
