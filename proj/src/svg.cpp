#include "subscale/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace subscale {

namespace {

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Axis {
  bool log = false;
  double lo = 0.0;
  double hi = 1.0;

  double map(double v) const { return log ? std::log10(v) : v; }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      for (double e = std::ceil(lo); e <= std::floor(hi) + 1e-9; e += 1.0) out.push_back(e);
      if (out.size() > 8) {
        std::vector<double> thin;
        const auto stride = static_cast<std::size_t>(std::ceil(static_cast<double>(out.size()) / 8.0));
        for (std::size_t i = 0; i < out.size(); i += stride) thin.push_back(out[i]);
        out = thin;
      }
      return out;
    }
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
      if (m * mag >= raw) {
        step = m * mag;
        break;
      }
    }
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-12 * span; t += step) out.push_back(t);
    return out;
  }

  std::string label(double t) const {
    if (log) return fmt::format("1e{}", static_cast<int>(std::lround(t)));
    return fmt::format("{:.4g}", t);
  }
};

Axis make_axis(bool log, const std::vector<double>& values) {
  Axis a;
  a.log = log;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v) || (log && !(v > 0.0))) continue;
    lo = std::min(lo, a.map(v));
    hi = std::max(hi, a.map(v));
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.04 * (hi - lo);
  a.lo = lo - pad;
  a.hi = hi + pad;
  return a;
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  const double left = 80.0;
  const double right = 170.0;
  const double top = 40.0;
  const double bottom = 60.0;
  const double pw = spec.width - left - right;
  const double ph = spec.height - top - bottom;

  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& s : spec.series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const Axis ax = make_axis(spec.log_x, xs);
  const Axis ay = make_axis(spec.log_y, ys);
  auto px = [&](double v) { return left + (ax.map(v) - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto py = [&](double v) { return top + ph - (ay.map(v) - ay.lo) / (ay.hi - ay.lo) * ph; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0.0) && (!spec.log_y || y > 0.0);
  };

  std::ostringstream o;
  o << fmt::format(R"(<?xml version="1.0" encoding="UTF-8"?>)") << '\n';
  o << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">)",
                   spec.width, spec.height, spec.width, spec.height)
    << '\n';
  o << fmt::format(R"(<rect x="0" y="0" width="{}" height="{}" fill="white"/>)", spec.width, spec.height) << '\n';
  o << fmt::format(R"(<text x="{:.2f}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>)",
                   left + pw / 2, escape(spec.title))
    << '\n';
  o << fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="none" stroke="#333"/>)", left,
                   top, pw, ph)
    << '\n';

  for (double t : ax.ticks()) {
    const double x = left + (t - ax.lo) / (ax.hi - ax.lo) * pw;
    o << fmt::format(R"(<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="#ddd"/>)", x, top, x, top + ph)
      << '\n';
    o << fmt::format(R"(<text x="{:.2f}" y="{:.2f}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>)",
                     x, top + ph + 16, ax.label(t))
      << '\n';
  }
  for (double t : ay.ticks()) {
    const double y = top + ph - (t - ay.lo) / (ay.hi - ay.lo) * ph;
    o << fmt::format(R"(<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="#ddd"/>)", left, y, left + pw, y)
      << '\n';
    o << fmt::format(R"(<text x="{:.2f}" y="{:.2f}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>)",
                     left - 6, y + 4, ay.label(t))
      << '\n';
  }
  o << fmt::format(R"(<text x="{:.2f}" y="{:.2f}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>)",
                   left + pw / 2, static_cast<double>(spec.height) - 18, escape(spec.x_label))
    << '\n';
  o << fmt::format(
           R"svg(<text x="18" y="{:.2f}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2f})">{}</text>)svg",
           top + ph / 2, top + ph / 2, escape(spec.y_label))
    << '\n';

  for (std::size_t si = 0; si < spec.series.size(); ++si) {
    const auto& s = spec.series[si];
    const char* color = kPalette[si % kPalette.size()];
    if (s.markers) {
      for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
        if (!usable(s.x[i], s.y[i])) continue;
        o << fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="2.5" fill="{}"/>)", px(s.x[i]), py(s.y[i]), color)
          << '\n';
      }
    } else {
      std::string pts;
      for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
        if (!usable(s.x[i], s.y[i])) continue;
        pts += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
      }
      if (!pts.empty()) pts.pop_back();
      o << fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="1.6"{} points="{}"/>)", color,
                       s.dashed ? R"( stroke-dasharray="5,3")" : "", pts)
        << '\n';
    }
    const double ly = top + 14.0 + 18.0 * static_cast<double>(si);
    const double lx = left + pw + 14.0;
    if (s.markers) {
      o << fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="3" fill="{}"/>)", lx + 10, ly - 4, color) << '\n';
    } else {
      o << fmt::format(R"(<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="{}" stroke-width="2"/>)", lx,
                       ly - 4, lx + 20, ly - 4, color)
        << '\n';
    }
    o << fmt::format(R"(<text x="{:.2f}" y="{:.2f}" font-family="sans-serif" font-size="11">{}</text>)", lx + 26, ly,
                     escape(s.label))
      << '\n';
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace subscale
