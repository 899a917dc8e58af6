#pragma once

// Trace and summary CSV files, run manifests, and atomic file output.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mbl/data.hpp"
#include "mbl/error.hpp"
#include "mbl/solver.hpp"

namespace mbl {

inline constexpr std::string_view kTraceHeader =
    "k,epoch,F_batch,grad_norm_batch,F_full,grad_norm_full,skipped,batch_size,overlap_size,elapsed_ns";
inline constexpr std::string_view kSummaryHeader = "epoch,seeds,mean,min,max";

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << kTraceHeader << '\n';
  for (const auto& r : trace.records) {
    out << r.k << ',' << r.epoch << ',' << format_real(r.f_batch) << ',' << format_real(r.grad_norm_batch) << ',';
    if (r.f_full) out << format_real(*r.f_full);
    out << ',';
    if (r.grad_norm_full) out << format_real(*r.grad_norm_full);
    out << ',' << (r.pair_skipped ? 1 : 0) << ',' << r.batch_size << ',' << r.overlap_size << ','
        << r.elapsed_ns << '\n';
  }
}

/// Comma-separated table with a header row; cells are kept as text.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
};

namespace detail {

inline std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_commas(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != table.header.size()) throw ConfigError("csv: row width differs from header");
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) throw ConfigError("csv: missing header");
  return table;
}

inline CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read_csv(in);
}

inline std::optional<double> parse_cell(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size())
    throw ConfigError("csv: malformed number '" + std::string(cell) + "'");
  return value;
}

/// One row per epoch: mean/min/max over seeds of the last full gradient norm
/// recorded in that epoch. `seeds` counts the traces that reached the epoch.
struct SummaryRow {
  std::size_t epoch = 0;
  std::size_t seeds = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline std::map<std::size_t, double> per_epoch_grad_norm(const Trace& trace) {
  std::map<std::size_t, double> out;
  for (const auto& r : trace.records)
    if (r.grad_norm_full) out[r.epoch] = *r.grad_norm_full;
  return out;
}

inline std::map<std::size_t, double> per_epoch_grad_norm(const CsvTable& table) {
  const auto epoch = table.column("epoch");
  const auto grad = table.column("grad_norm_full");
  if (!epoch || !grad) throw ConfigError("trace csv lacks epoch or grad_norm_full");
  std::map<std::size_t, double> out;
  for (const auto& row : table.rows) {
    const auto g = parse_cell(row[*grad]);
    const auto e = parse_cell(row[*epoch]);
    if (g && e) out[static_cast<std::size_t>(*e)] = *g;
  }
  return out;
}

inline std::vector<SummaryRow> summarize(const std::vector<std::map<std::size_t, double>>& per_seed) {
  std::map<std::size_t, std::vector<double>> by_epoch;
  for (const auto& seed : per_seed)
    for (const auto& [epoch, value] : seed) by_epoch[epoch].push_back(value);
  std::vector<SummaryRow> rows;
  for (const auto& [epoch, values] : by_epoch) {
    SummaryRow row;
    row.epoch = epoch;
    row.seeds = values.size();
    double sum = 0.0;
    row.min = std::numeric_limits<double>::infinity();
    row.max = -std::numeric_limits<double>::infinity();
    for (double v : values) {
      sum += v;
      row.min = std::min(row.min, v);
      row.max = std::max(row.max, v);
    }
    row.mean = sum / static_cast<double>(values.size());
    rows.push_back(row);
  }
  return rows;
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows)
    out << r.epoch << ',' << r.seeds << ',' << format_real(r.mean) << ',' << format_real(r.min) << ','
        << format_real(r.max) << '\n';
}

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ConfigError("cannot rename onto " + path.string());
  }
}

/// key=value lines, in insertion order.
class Manifest {
 public:
  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = std::move(value);
        return;
      }
    entries_.emplace_back(std::move(key), std::move(value));
  }

  std::optional<std::string> get(std::string_view key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    return std::nullopt;
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::string hex64(std::uint64_t value) {
  char buffer[17];
  auto [ptr, ec] = std::to_chars(buffer, buffer + 16, value, 16);
  std::string digits(buffer, ptr);
  return std::string(16 - digits.size(), '0') + digits;
}

inline void echo_config(Manifest& m, const SolverConfig& c) {
  m.set("method", std::string(to_string(c.method)));
  m.set("alpha", format_real(c.alpha));
  m.set("memory", std::to_string(c.memory));
  m.set("epsilon", format_real(c.epsilon));
  m.set("cautious", c.cautious ? "true" : "false");
  m.set("strategy", std::string(to_string(c.strategy)));
  m.set("r", format_real(c.r));
  m.set("o", format_real(c.o));
  m.set("nodes", std::to_string(c.nodes));
  m.set("p", format_real(c.p));
  m.set("redistribute_every", std::to_string(c.redistribute_every));
  m.set("epochs", c.epochs ? std::to_string(*c.epochs) : "");
  m.set("max_iters", c.max_iters ? std::to_string(*c.max_iters) : "");
  m.set("seed", std::to_string(c.seed));
  m.set("eval_every", std::to_string(c.eval_every));
  m.set("chunk_count", std::to_string(c.chunk_count));
  m.set("init", c.init == InitialPoint::zeros ? "zeros" : "gaussian");
  m.set("record_timing", c.record_timing ? "true" : "false");
}

}  // namespace mbl
