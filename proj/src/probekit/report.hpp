#pragma once

// Result emitters: wide CSV/JSON tables, layer × task SVG heatmaps
// and per-layer perplexity curves. Every emitter is byte-deterministic.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/trainer.hpp"

namespace probekit::report {

/// Rounds to 2 decimals, half-to-even on the shortest decimal form of `v`
/// (73.195 -> "73.20", 0.125 -> "0.12").
std::string format_2dp(double v);

// ---------------------------------------------------------------------------
// Tables: rows = (representation, layer), columns = tasks.

struct TableCell {
  std::string representation;
  std::string layer;  // "0", "1", ... or "mix"
  std::string task;
  double value = 0.0;
};

struct Table {
  std::vector<std::string> tasks;                                  // column order
  std::vector<std::pair<std::string, std::string>> rows;          // (representation, layer)
  std::vector<std::vector<std::optional<double>>> values;         // [row][task]
};

std::vector<TableCell> cells_from_reports(const std::vector<train::ProbeReport>& reports);
/// Columns in first-appearance order; rows grouped by representation with
/// numeric layers ascending and "mix" last. Throws DataError on duplicates.
Table build_table(const std::vector<TableCell>& cells);

std::string emit_csv(const Table& table);
nlohmann::json emit_json(const Table& table);
/// Inverse of emit_csv; values come back at 2-decimal precision.
Table parse_csv(std::string_view csv);

// ---------------------------------------------------------------------------
// SVG

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  auto operator<=>(const Rgb&) const = default;
};

inline constexpr Rgb kRampLow{0xf7, 0xfb, 0xff};
inline constexpr Rgb kRampHigh{0x08, 0x30, 0x6b};

/// Linear interpolation between kRampLow (min) and kRampHigh (max), each
/// channel rounded to nearest. A flat matrix (max == min) maps to kRampHigh.
Rgb ramp_color(double value, double min, double max);
std::string hex(Rgb c);

/// Matrix rows are layers, columns are tasks. One <rect class="cell"> per
/// value with the value printed inside; min/max legend below.
std::string emit_heatmap(const std::vector<std::vector<double>>& matrix, const std::vector<std::string>& row_labels,
                         const std::vector<std::string>& col_labels, std::string_view title = "");

struct CurveSeries {
  std::string name;
  std::vector<double> values;  // one per layer
};

/// Perplexity per layer, one polyline per series.
std::string emit_ppl_curve(const std::vector<CurveSeries>& series, std::string_view title = "");

}  // namespace probekit::report
