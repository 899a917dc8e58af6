#pragma once

// Minimal line-chart writer for per-epoch summaries: one colour per series,
// the mean drawn solid and the min/max envelope dashed.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mbl/data.hpp"
#include "mbl/error.hpp"

namespace mbl {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> min;
  std::vector<double> max;
};

struct PlotOptions {
  bool logy = false;
  double width = 720;
  double height = 440;
  std::string x_label = "epoch";
  std::string y_label = "||grad F(w)||";
};

inline constexpr double kLogClamp = 1e-16;

struct PlotResult {
  std::string svg;
  std::size_t clamped = 0;  // values raised to kLogClamp on a log axis
};

namespace detail {

inline std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

inline std::string fixed2(double v) {
  const double r = std::round(v * 100.0) / 100.0;
  return format_real(r == 0.0 ? 0.0 : r);
}

}  // namespace detail

inline PlotResult render_svg(const std::vector<PlotSeries>& series, const PlotOptions& opt = {}) {
  static const char* const palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                        "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  if (series.empty()) throw ConfigError("plot: no series");
  PlotResult result;

  auto transform = [&](double v) {
    if (!opt.logy) return v;
    if (!(v > kLogClamp)) {
      ++result.clamped;
      v = kLogClamp;
    }
    return std::log10(v);
  };

  std::vector<PlotSeries> t = series;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (auto& s : t) {
    if (s.x.size() != s.mean.size() || s.x.size() != s.min.size() || s.x.size() != s.max.size())
      throw ConfigError("plot: series columns differ in length");
    for (auto* col : {&s.mean, &s.min, &s.max})
      for (auto& v : *col) {
        v = transform(v);
        if (std::isfinite(v)) {
          y0 = std::min(y0, v);
          y1 = std::max(y1, v);
        }
      }
    for (double v : s.x) {
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
  }
  if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
  if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
  if (!std::isfinite(x0) || !std::isfinite(y0)) throw ConfigError("plot: no finite data");

  const double left = 80, right = 170, top = 20, bottom = 50;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fixed2(opt.width) << "\" height=\""
      << detail::fixed2(opt.height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n"
      << "<line x1=\"" << detail::fixed2(left) << "\" y1=\"" << detail::fixed2(top + ph) << "\" x2=\""
      << detail::fixed2(left + pw) << "\" y2=\"" << detail::fixed2(top + ph) << "\"/>\n"
      << "<line x1=\"" << detail::fixed2(left) << "\" y1=\"" << detail::fixed2(top) << "\" x2=\""
      << detail::fixed2(left) << "\" y2=\"" << detail::fixed2(top + ph) << "\"/>\n</g>\n";

  out << "<g class=\"ticks\" fill=\"black\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    out << "<text x=\"" << detail::fixed2(px(xv)) << "\" y=\"" << detail::fixed2(top + ph + 16)
        << "\" text-anchor=\"middle\">" << format_real(std::round(xv * 100.0) / 100.0) << "</text>\n";
    const double shown = opt.logy ? std::pow(10.0, yv) : yv;
    char label[32];
    auto [end, ec] = std::to_chars(label, label + sizeof label, shown, std::chars_format::general, 3);
    out << "<text x=\"" << detail::fixed2(left - 6) << "\" y=\"" << detail::fixed2(py(yv) + 4)
        << "\" text-anchor=\"end\">" << std::string_view(label, static_cast<std::size_t>(end - label))
        << "</text>\n";
  }
  out << "</g>\n";
  out << "<text x=\"" << detail::fixed2(left + pw / 2) << "\" y=\"" << detail::fixed2(opt.height - 10)
      << "\" text-anchor=\"middle\">" << detail::xml_escape(opt.x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << detail::fixed2(top + ph / 2) << "\" transform=\"rotate(-90 16 "
      << detail::fixed2(top + ph / 2) << ")\" text-anchor=\"middle\">"
      << detail::xml_escape(opt.y_label + (opt.logy ? " (log)" : "")) << "</text>\n";

  auto path = [&](const std::vector<double>& xs, const std::vector<double>& ys) {
    std::string d;
    bool pen_down = false;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(ys[i])) {
        pen_down = false;
        continue;
      }
      d += pen_down ? " L" : (d.empty() ? "M" : " M");
      d += detail::fixed2(px(xs[i])) + " " + detail::fixed2(py(ys[i]));
      pen_down = true;
    }
    return d;
  };

  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& s = t[i];
    const char* colour = palette[i % std::size(palette)];
    out << "<g class=\"series\" stroke=\"" << colour << "\" fill=\"none\" stroke-width=\"1.5\">\n";
    out << "<path class=\"mean\" d=\"" << path(s.x, s.mean) << "\"/>\n";
    out << "<path class=\"min\" stroke-dasharray=\"5,4\" d=\"" << path(s.x, s.min) << "\"/>\n";
    out << "<path class=\"max\" stroke-dasharray=\"5,4\" d=\"" << path(s.x, s.max) << "\"/>\n";
    out << "</g>\n";
  }

  out << "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    const double lx = left + pw + 14;
    out << "<line x1=\"" << detail::fixed2(lx) << "\" y1=\"" << detail::fixed2(ly) << "\" x2=\""
        << detail::fixed2(lx + 24) << "\" y2=\"" << detail::fixed2(ly) << "\" stroke=\""
        << palette[i % std::size(palette)] << "\" stroke-width=\"2\"/>\n";
    out << "<text class=\"legend-entry\" x=\"" << detail::fixed2(lx + 30) << "\" y=\"" << detail::fixed2(ly + 4)
        << "\">" << detail::xml_escape(t[i].label) << "</text>\n";
  }
  out << "</g>\n</svg>\n";
  result.svg = out.str();
  return result;
}

}  // namespace mbl
