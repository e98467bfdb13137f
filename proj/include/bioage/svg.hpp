#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace bioage::svg {

// Minimal self-contained SVG emission for the two figure styles the report
// produces: cumulative-percentage line charts and deviation histograms with
// normal-fit overlays. Static markup only, no scripting.

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct HistogramSeries {
  std::string label;
  std::vector<double> values;
  double fit_mean = 0.0;
  double fit_std = 0.0;
};

namespace detail {

inline const char* kPalette[] = {"#3366cc", "#dc3912", "#ff9900", "#109618", "#990099", "#0099c6"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Frame {
  double width = 760, height = 420;
  double left = 64, right = 24, top = 40, bottom = 48;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  double px(double x) const {
    return left + (x - x_min) / (x_max - x_min) * (width - left - right);
  }
  double py(double y) const {
    return height - bottom - (y - y_min) / (y_max - y_min) * (height - top - bottom);
  }
};

inline void open_svg(std::ostringstream& out, const Frame& f, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
      << "\" viewBox=\"0 0 " << f.width << " " << f.height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"15\" font-weight=\"bold\">" << title << "</text>\n";
}

inline void axes(std::ostringstream& out, const Frame& f, const std::string& x_label,
                 const std::string& y_label, int ticks = 5) {
  out << "<line x1=\"" << f.left << "\" y1=\"" << f.height - f.bottom << "\" x2=\"" << f.width - f.right
      << "\" y2=\"" << f.height - f.bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\""
      << f.height - f.bottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= ticks; ++i) {
    const double tx = f.x_min + (f.x_max - f.x_min) * i / ticks;
    const double ty = f.y_min + (f.y_max - f.y_min) * i / ticks;
    out << "<text x=\"" << num(f.px(tx)) << "\" y=\"" << f.height - f.bottom + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(tx)
        << "</text>\n";
    out << "<line x1=\"" << num(f.px(tx)) << "\" y1=\"" << f.height - f.bottom << "\" x2=\""
        << num(f.px(tx)) << "\" y2=\"" << f.height - f.bottom + 4 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << f.left - 8 << "\" y=\"" << num(f.py(ty) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(ty)
        << "</text>\n";
    out << "<line x1=\"" << f.left - 4 << "\" y1=\"" << num(f.py(ty)) << "\" x2=\"" << f.left
        << "\" y2=\"" << num(f.py(ty)) << "\" stroke=\"black\"/>\n";
  }
  out << "<text x=\"" << (f.left + f.width - f.right) / 2 << "\" y=\"" << f.height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << (f.top + f.height - f.bottom) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
      << (f.top + f.height - f.bottom) / 2 << ")\">" << y_label << "</text>\n";
}

inline void legend(std::ostringstream& out, const Frame& f, const std::vector<std::string>& labels) {
  double y = f.top + 8;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = f.width - f.right - 170;
    out << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
        << kPalette[i % 6] << "\"/>\n";
    out << "<text x=\"" << x + 18 << "\" y=\"" << y + 2
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << labels[i] << "</text>\n";
    y += 18;
  }
}

}  // namespace detail

inline std::string line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<Series>& series) {
  detail::Frame f;
  f.x_min = 1e300;
  f.x_max = -1e300;
  f.y_min = 0.0;
  f.y_max = -1e300;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      f.x_min = std::min(f.x_min, x);
      f.x_max = std::max(f.x_max, x);
      f.y_max = std::max(f.y_max, y);
    }
  }
  if (f.x_min > f.x_max) {
    f.x_min = 0;
    f.x_max = 1;
  }
  if (f.x_max == f.x_min) f.x_max = f.x_min + 1;
  if (f.y_max <= f.y_min) f.y_max = f.y_min + 1;
  f.y_max *= 1.05;

  std::ostringstream out;
  detail::open_svg(out, f, title);
  detail::axes(out, f, x_label, y_label);
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    labels.push_back(s.label);
    if (s.points.empty()) continue;
    out << "<polyline fill=\"none\" stroke=\"" << detail::kPalette[i % 6]
        << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : s.points) {
      out << detail::num(f.px(x)) << ',' << detail::num(f.py(y)) << ' ';
    }
    out << "\"/>\n";
    for (const auto& [x, y] : s.points) {
      out << "<circle cx=\"" << detail::num(f.px(x)) << "\" cy=\"" << detail::num(f.py(y))
          << "\" r=\"2.5\" fill=\"" << detail::kPalette[i % 6] << "\"/>\n";
    }
  }
  detail::legend(out, f, labels);
  out << "</svg>\n";
  return out.str();
}

// Density-normalized histograms of two (or more) deviation samples with
// their normal-fit curves drawn on top.
inline std::string deviation_histogram(const std::string& title,
                                       const std::vector<HistogramSeries>& series, int bins = 25) {
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (lo > hi) {
    lo = -1;
    hi = 1;
  }
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double bin_w = (hi - lo) / bins;

  std::vector<std::vector<double>> density(series.size(), std::vector<double>(bins, 0.0));
  double peak = 0.0;
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& vals = series[si].values;
    if (vals.empty()) continue;
    for (double v : vals) {
      int b = static_cast<int>((v - lo) / bin_w);
      b = std::max(0, std::min(bins - 1, b));
      density[si][b] += 1.0;
    }
    for (auto& d : density[si]) {
      d /= static_cast<double>(vals.size()) * bin_w;
      peak = std::max(peak, d);
    }
    if (series[si].fit_std > 0) {
      peak = std::max(peak, 1.0 / (series[si].fit_std * std::sqrt(2.0 * 3.14159265358979323846)));
    }
  }
  if (peak <= 0) peak = 1.0;

  detail::Frame f;
  f.x_min = lo;
  f.x_max = hi;
  f.y_min = 0.0;
  f.y_max = peak * 1.1;

  std::ostringstream out;
  detail::open_svg(out, f, title);
  detail::axes(out, f, "deviation [years]", "density");
  std::vector<std::string> labels;
  for (std::size_t si = 0; si < series.size(); ++si) {
    labels.push_back(series[si].label);
    for (int b = 0; b < bins; ++b) {
      if (density[si][b] <= 0) continue;
      const double x0 = lo + b * bin_w;
      out << "<rect x=\"" << detail::num(f.px(x0)) << "\" y=\"" << detail::num(f.py(density[si][b]))
          << "\" width=\"" << detail::num(f.px(x0 + bin_w) - f.px(x0)) << "\" height=\""
          << detail::num(f.py(0) - f.py(density[si][b])) << "\" fill=\"" << detail::kPalette[si % 6]
          << "\" fill-opacity=\"0.35\"/>\n";
    }
    if (series[si].fit_std > 0) {
      out << "<polyline fill=\"none\" stroke=\"" << detail::kPalette[si % 6]
          << "\" stroke-width=\"2\" points=\"";
      const int steps = 120;
      for (int i = 0; i <= steps; ++i) {
        const double x = lo + (hi - lo) * i / steps;
        const double z = (x - series[si].fit_mean) / series[si].fit_std;
        const double d = std::exp(-0.5 * z * z) /
                         (series[si].fit_std * std::sqrt(2.0 * 3.14159265358979323846));
        out << detail::num(f.px(x)) << ',' << detail::num(f.py(d)) << ' ';
      }
      out << "\"/>\n";
    }
  }
  detail::legend(out, f, labels);
  out << "</svg>\n";
  return out.str();
}

}  // namespace bioage::svg
