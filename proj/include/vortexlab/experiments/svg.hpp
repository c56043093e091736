#pragma once

// Static SVG 1.1 line/scatter plots with optional log axes.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "vortexlab/error.hpp"
#include "vortexlab/experiments/format.hpp"

namespace vortexlab::experiments {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool points = true;  // markers; false draws a polyline
  std::string color = "#1f77b4";
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<PlotSeries> series;
  std::vector<std::string> notes;  // printed under the title
  int width = 640;
  int height = 420;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
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

// Fixed 4 significant digits for tick labels and coordinates.
inline std::string short_num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

struct Axis {
  bool log = false;
  double lo = 0.0, hi = 1.0;

  double map(double v) const { return log ? std::log10(v) : v; }
  double frac(double v) const { return (map(v) - lo) / (hi - lo); }

  std::vector<double> ticks() const {
    std::vector<double> t;
    if (log) {
      for (double e = std::ceil(lo); e <= std::floor(hi) + 1e-12; e += 1.0) t.push_back(std::pow(10.0, e));
      if (t.size() < 2) {
        t = {std::pow(10.0, lo), std::pow(10.0, hi)};
      }
      return t;
    }
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
      if (m * mag >= raw) {
        step = m * mag;
        break;
      }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step)
      t.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
    return t;
  }
};

inline Axis make_axis(const std::vector<const std::vector<double>*>& data, bool log) {
  Axis a;
  a.log = log;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* d : data)
    for (double v : *d) {
      if (!std::isfinite(v) || (log && v <= 0.0)) continue;
      lo = std::min(lo, a.map(v));
      hi = std::max(hi, a.map(v));
    }
  if (!(lo <= hi)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  a.lo = lo - pad;
  a.hi = hi + pad;
  return a;
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& p) {
  using detail::short_num;
  const double left = 80, right = 20, top = 50 + 14.0 * p.notes.size(), bottom = 50;
  const double W = p.width, H = p.height + 14.0 * p.notes.size();
  const double pw = W - left - right, ph = H - top - bottom;
  std::vector<const std::vector<double>*> xs, ys;
  for (const auto& s : p.series) {
    xs.push_back(&s.x);
    ys.push_back(&s.y);
  }
  const auto ax = detail::make_axis(xs, p.log_x);
  const auto ay = detail::make_axis(ys, p.log_y);
  auto px = [&](double v) { return left + ax.frac(v) * pw; };
  auto py = [&](double v) { return top + (1.0 - ay.frac(v)) * ph; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\""
    << H << "\" viewBox=\"0 0 " << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << detail::xml_escape(p.title) << "</text>\n";
  for (std::size_t i = 0; i < p.notes.size(); ++i)
    o << "<text x=\"" << W / 2 << "\" y=\"" << 40 + 14 * i << "\" text-anchor=\"middle\">"
      << detail::xml_escape(p.notes[i]) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ax.ticks()) {
    const double x = px(t);
    if (x < left - 1e-9 || x > left + pw + 1e-9) continue;
    o << "<line x1=\"" << short_num(x) << "\" y1=\"" << top + ph << "\" x2=\"" << short_num(x)
      << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << short_num(x) << "\" y=\"" << top + ph + 18
      << "\" text-anchor=\"middle\">" << short_num(t) << "</text>\n";
  }
  for (double t : ay.ticks()) {
    const double y = py(t);
    if (y < top - 1e-9 || y > top + ph + 1e-9) continue;
    o << "<line x1=\"" << left - 5 << "\" y1=\"" << short_num(y) << "\" x2=\"" << left
      << "\" y2=\"" << short_num(y) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << left - 8 << "\" y=\"" << short_num(y + 4) << "\" text-anchor=\"end\">"
      << short_num(t) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << detail::xml_escape(p.x_label) << (p.log_x ? " (log)" : "") << "</text>\n"
    << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + ph / 2 << ")\">" << detail::xml_escape(p.y_label) << (p.log_y ? " (log)" : "")
    << "</text>\n";

  double legend_y = top + 14;
  for (const auto& s : p.series) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if ((p.log_x && s.x[i] <= 0.0) || (p.log_y && s.y[i] <= 0.0)) continue;
      pts.emplace_back(px(s.x[i]), py(s.y[i]));
    }
    if (s.points) {
      for (const auto& [x, y] : pts)
        o << "<circle cx=\"" << short_num(x) << "\" cy=\"" << short_num(y) << "\" r=\"2.5\" fill=\""
          << s.color << "\"/>\n";
    } else if (!pts.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i)
        o << (i ? " " : "") << short_num(pts[i].first) << "," << short_num(pts[i].second);
      o << "\"/>\n";
    }
    if (!s.label.empty()) {
      o << "<rect x=\"" << left + pw - 170 << "\" y=\"" << legend_y - 9
        << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n"
        << "<text x=\"" << left + pw - 155 << "\" y=\"" << legend_y << "\">"
        << detail::xml_escape(s.label) << "</text>\n";
      legend_y += 16;
    }
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_svg(const std::string& path, const PlotSpec& p) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path);
  f << render_svg(p);
  if (!f) fail(ErrorCode::IoError, "error writing " + path);
}

/// Fitted-curve samples of exp(intercept + rate * x) (or power law in x).
inline PlotSeries fitted_curve(const std::string& label, double x0, double x1, double rate,
                               double intercept, bool power_law, int samples = 64) {
  PlotSeries s;
  s.label = label;
  s.points = false;
  s.color = "#d62728";
  for (int i = 0; i < samples; ++i) {
    const double f = static_cast<double>(i) / (samples - 1);
    const double x = power_law ? std::exp(std::log(x0) + f * (std::log(x1) - std::log(x0)))
                               : x0 + f * (x1 - x0);
    s.x.push_back(x);
    s.y.push_back(power_law ? std::exp(intercept) * std::pow(x, rate)
                            : std::exp(intercept + rate * x));
  }
  return s;
}

}  // namespace vortexlab::experiments
