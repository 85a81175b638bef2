#include "probekit/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "probekit/error.hpp"

namespace probekit::report {

std::string format_2dp(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[400];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  std::string s(buf, res.ptr);
  const bool neg = !s.empty() && s[0] == '-';
  if (neg) s.erase(0, 1);
  const auto dot = s.find('.');
  std::string ip = dot == std::string::npos ? s : s.substr(0, dot);
  std::string fp = dot == std::string::npos ? "" : s.substr(dot + 1);
  std::string kept = fp.substr(0, std::min<std::size_t>(2, fp.size()));
  kept.resize(2, '0');
  const std::string rest = fp.size() > 2 ? fp.substr(2) : "";

  bool up = false;
  if (!rest.empty()) {
    if (rest[0] > '5') {
      up = true;
    } else if (rest[0] == '5') {
      const bool beyond = rest.find_first_not_of('0', 1) != std::string::npos;
      up = beyond || ((kept[1] - '0') % 2 == 1);
    }
  }
  std::string digits = ip + kept;
  if (up) {
    int i = static_cast<int>(digits.size()) - 1;
    while (i >= 0 && digits[static_cast<std::size_t>(i)] == '9') digits[static_cast<std::size_t>(i--)] = '0';
    if (i < 0)
      digits.insert(digits.begin(), '1');
    else
      ++digits[static_cast<std::size_t>(i)];
  }
  std::string out = digits.substr(0, digits.size() - 2) + "." + digits.substr(digits.size() - 2);
  const bool zero = out.find_first_not_of("0.") == std::string::npos;
  return (neg && !zero) ? "-" + out : out;
}

// ---------------------------------------------------------------------------

std::vector<TableCell> cells_from_reports(const std::vector<train::ProbeReport>& reports) {
  std::vector<TableCell> cells;
  for (const auto& r : reports)
    cells.push_back({r.representation, r.layer ? std::to_string(*r.layer) : "mix", r.task, r.metric.value});
  return cells;
}

namespace {

// Numeric layers ascending, anything else (mix) after them in name order.
bool layer_less(const std::string& a, const std::string& b) {
  auto num = [](const std::string& s) -> long long {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return -1;
    return std::stoll(s);
  };
  const long long x = num(a), y = num(b);
  if (x >= 0 && y >= 0) return x < y;
  if (x >= 0) return true;
  if (y >= 0) return false;
  return a < b;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv_rows(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    any = true;
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", rows.size() + 1);
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

Table build_table(const std::vector<TableCell>& cells) {
  Table t;
  std::vector<std::string> reps;
  std::map<std::string, std::vector<std::string>> layers_of;
  for (const auto& c : cells) {
    if (std::find(t.tasks.begin(), t.tasks.end(), c.task) == t.tasks.end()) t.tasks.push_back(c.task);
    if (std::find(reps.begin(), reps.end(), c.representation) == reps.end()) reps.push_back(c.representation);
    auto& ls = layers_of[c.representation];
    if (std::find(ls.begin(), ls.end(), c.layer) == ls.end()) ls.push_back(c.layer);
  }
  for (const auto& r : reps) {
    auto ls = layers_of[r];
    std::sort(ls.begin(), ls.end(), layer_less);
    for (auto& l : ls) t.rows.emplace_back(r, l);
  }
  t.values.assign(t.rows.size(), std::vector<std::optional<double>>(t.tasks.size()));
  for (const auto& c : cells) {
    const auto ri = static_cast<std::size_t>(
        std::find(t.rows.begin(), t.rows.end(), std::make_pair(c.representation, c.layer)) - t.rows.begin());
    const auto ti = static_cast<std::size_t>(std::find(t.tasks.begin(), t.tasks.end(), c.task) - t.tasks.begin());
    if (t.values[ri][ti])
      throw DataError("duplicate result for representation '" + c.representation + "', layer " + c.layer +
                      ", task '" + c.task + "'");
    t.values[ri][ti] = c.value;
  }
  return t;
}

std::string emit_csv(const Table& t) {
  std::string out = "representation,layer";
  for (const auto& task : t.tasks) out += "," + csv_field(task);
  out += "\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out += csv_field(t.rows[r].first) + "," + csv_field(t.rows[r].second);
    for (const auto& v : t.values[r]) out += "," + (v ? format_2dp(*v) : std::string{});
    out += "\n";
  }
  return out;
}

nlohmann::json emit_json(const Table& t) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    nlohmann::json values = nlohmann::json::object();
    for (std::size_t c = 0; c < t.tasks.size(); ++c)
      values[t.tasks[c]] = t.values[r][c] ? nlohmann::json(std::stod(format_2dp(*t.values[r][c]))) : nlohmann::json();
    rows.push_back({{"representation", t.rows[r].first}, {"layer", t.rows[r].second}, {"values", values}});
  }
  return {{"columns", t.tasks}, {"rows", rows}, {"precision", 2}};
}

Table parse_csv(std::string_view csv) {
  const auto rows = parse_csv_rows(csv);
  if (rows.empty() || rows[0].size() < 2 || rows[0][0] != "representation" || rows[0][1] != "layer")
    throw ParseError("table CSV must start with a 'representation,layer' header", 1);
  Table t;
  t.tasks.assign(rows[0].begin() + 2, rows[0].end());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != rows[0].size())
      throw ParseError("expected " + std::to_string(rows[0].size()) + " fields, got " + std::to_string(row.size()),
                       i + 1);
    t.rows.emplace_back(row[0], row[1]);
    std::vector<std::optional<double>> vals;
    for (std::size_t c = 2; c < row.size(); ++c) {
      if (row[c].empty()) {
        vals.emplace_back();
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(row[c].data(), row[c].data() + row[c].size(), v);
      if (res.ec != std::errc{} || res.ptr != row[c].data() + row[c].size())
        throw ParseError("bad numeric cell '" + row[c] + "'", i + 1);
      vals.emplace_back(v);
    }
    t.values.push_back(std::move(vals));
  }
  return t;
}

// ---------------------------------------------------------------------------

Rgb ramp_color(double value, double min, double max) {
  double t = max > min ? (value - min) / (max - min) : 1.0;
  t = std::clamp(t, 0.0, 1.0);
  auto mix = [t](std::uint8_t a, std::uint8_t b) {
    return static_cast<std::uint8_t>(std::lround(double(a) + t * (double(b) - double(a))));
  };
  return {mix(kRampLow.r, kRampHigh.r), mix(kRampLow.g, kRampHigh.g), mix(kRampLow.b, kRampHigh.b)};
}

std::string hex(Rgb c) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s = "#";
  for (auto v : {c.r, c.g, c.b}) {
    s += digits[v >> 4];
    s += digits[v & 15];
  }
  return s;
}

std::string emit_heatmap(const std::vector<std::vector<double>>& m, const std::vector<std::string>& row_labels,
                         const std::vector<std::string>& col_labels, std::string_view title) {
  if (m.empty() || m[0].empty()) throw DataError("heatmap matrix is empty");
  for (const auto& row : m)
    if (row.size() != m[0].size()) throw DataError("heatmap matrix is not rectangular");
  if (row_labels.size() != m.size() || col_labels.size() != m[0].size())
    throw DataError("heatmap labels do not match the matrix shape");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : m)
    for (double v : row)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  const bool any = std::isfinite(lo);
  if (!any) lo = hi = 0.0;

  constexpr int cw = 80, ch = 36, left = 110, top_pad = 30;
  const int rows = static_cast<int>(m.size()), cols = static_cast<int>(m[0].size());
  const int top = top_pad + (title.empty() ? 0 : 24) + 24;
  const int width = left + cols * cw + 20;
  const int height = top + rows * ch + 70;

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
    << "\" fill=\"#ffffff\"/>\n";
  if (!title.empty())
    o << "<text class=\"title\" x=\"" << width / 2 << "\" y=\"" << top_pad << "\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
  for (int c = 0; c < cols; ++c)
    o << "<text class=\"col-label\" x=\"" << left + c * cw + cw / 2 << "\" y=\"" << top - 8
      << "\" text-anchor=\"middle\">" << xml_escape(col_labels[static_cast<std::size_t>(c)]) << "</text>\n";
  for (int r = 0; r < rows; ++r) {
    o << "<text class=\"row-label\" x=\"" << left - 8 << "\" y=\"" << top + r * ch + ch / 2 + 4
      << "\" text-anchor=\"end\">" << xml_escape(row_labels[static_cast<std::size_t>(r)]) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const double v = m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const bool ok = std::isfinite(v);
      const double t = hi > lo ? (v - lo) / (hi - lo) : 1.0;
      const std::string fill = ok ? hex(ramp_color(v, lo, hi)) : "#d9d9d9";
      const int x = left + c * cw, y = top + r * ch;
      o << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << ch
        << "\" fill=\"" << fill << "\" stroke=\"#ffffff\"/>\n";
      o << "<text class=\"value\" x=\"" << x + cw / 2 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
        << (ok && t > 0.5 ? "#ffffff" : "#000000") << "\">" << (ok ? format_2dp(v) : "n/a") << "</text>\n";
    }
  }

  // Legend: gradient bar annotated with the scale's min and max.
  const int ly = top + rows * ch + 24, lw = std::max(160, std::min(cols * cw, 320));
  o << "<defs><linearGradient id=\"ramp\" x1=\"0\" x2=\"1\" y1=\"0\" y2=\"0\">"
    << "<stop offset=\"0\" stop-color=\"" << hex(kRampLow) << "\"/>"
    << "<stop offset=\"1\" stop-color=\"" << hex(kRampHigh) << "\"/></linearGradient></defs>\n";
  o << "<rect class=\"legend\" x=\"" << left << "\" y=\"" << ly << "\" width=\"" << lw
    << "\" height=\"12\" fill=\"url(#ramp)\" stroke=\"#999999\"/>\n";
  o << "<text class=\"legend-min\" x=\"" << left << "\" y=\"" << ly + 28 << "\" text-anchor=\"start\">min "
    << format_2dp(lo) << "</text>\n";
  o << "<text class=\"legend-max\" x=\"" << left + lw << "\" y=\"" << ly + 28 << "\" text-anchor=\"end\">max "
    << format_2dp(hi) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

std::string emit_ppl_curve(const std::vector<CurveSeries>& series, std::string_view title) {
  if (series.empty()) throw DataError("perplexity curve needs at least one series");
  std::size_t n = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    if (s.values.empty()) throw DataError("perplexity series '" + s.name + "' is empty");
    n = std::max(n, s.values.size());
    for (double v : s.values) {
      if (!std::isfinite(v)) throw DataError("perplexity series '" + s.name + "' has a non-finite value");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) {
    lo -= 1.0;
    hi += 1.0;
  }
  constexpr int width = 520, height = 340, left = 70, right = 140, top = 40, bottom = 50;
  const int pw = width - left - right, ph = height - top - bottom;
  auto px = [&](std::size_t i) { return n > 1 ? left + static_cast<int>(std::lround(double(i) * pw / double(n - 1))) : left + pw / 2; };
  auto py = [&](double v) { return top + static_cast<int>(std::lround((hi - v) / (hi - lo) * ph)); };
  static constexpr const char* palette[] = {"#08306b", "#d94801", "#238b45", "#6a51a3", "#cb181d", "#737373"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
    << "\" fill=\"#ffffff\"/>\n";
  if (!title.empty())
    o << "<text class=\"title\" x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
  o << "<line class=\"axis\" x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
    << top + ph << "\" stroke=\"#000000\"/>\n";
  o << "<line class=\"axis\" x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"#000000\"/>\n";
  for (std::size_t i = 0; i < n; ++i)
    o << "<text class=\"x-tick\" x=\"" << px(i) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << i
      << "</text>\n";
  o << "<text class=\"x-label\" x=\"" << left + pw / 2 << "\" y=\"" << height - 10
    << "\" text-anchor=\"middle\">layer</text>\n";
  o << "<text class=\"y-tick\" x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << format_2dp(hi)
    << "</text>\n";
  o << "<text class=\"y-tick\" x=\"" << left - 6 << "\" y=\"" << top + ph + 4 << "\" text-anchor=\"end\">"
    << format_2dp(lo) << "</text>\n";
  o << "<text class=\"y-label\" x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + ph / 2 << ")\">perplexity</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = palette[k % std::size(palette)];
    const auto& s = series[k];
    o << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i) o << (i ? " " : "") << px(i) << ',' << py(s.values[i]);
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.values.size(); ++i)
      o << "<circle class=\"point\" cx=\"" << px(i) << "\" cy=\"" << py(s.values[i]) << "\" r=\"3\" fill=\"" << color
        << "\"><title>" << xml_escape(s.name) << " layer " << i << ": " << format_2dp(s.values[i])
        << "</title></circle>\n";
    const int ly = top + 10 + static_cast<int>(k) * 18;
    o << "<line class=\"legend\" x1=\"" << left + pw + 14 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 34
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text class=\"legend\" x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace probekit::report
