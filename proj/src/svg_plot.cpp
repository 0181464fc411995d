#include "adgen/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "adgen/config.hpp"

namespace adgen {

namespace {

// Fixed canvas: the plot box in pixel coordinates. px0/py0 is the top-left
// corner of the data area, px1/py1 the bottom-right.
constexpr double kWidth = 640.0, kHeight = 420.0;
constexpr double kPx0 = 70.0, kPx1 = 620.0;
constexpr double kPy0 = 40.0, kPy1 = 370.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#ff7f0e", "#8c564b"};
constexpr int kPaletteSize = 6;

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range padded_range(double lo, double hi) {
  if (lo > hi) std::swap(lo, hi);
  if (lo == hi) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

double map_x(double x, const Range& r) { return kPx0 + (x - r.lo) / (r.hi - r.lo) * (kPx1 - kPx0); }
double map_y(double y, const Range& r) { return kPy1 - (y - r.lo) / (r.hi - r.lo) * (kPy1 - kPy0); }

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v[i]);
  }
  return out;
}

void open_svg(std::ostringstream& svg, const char* kind) {
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" data-kind=\"" << kind
      << "\">\n"
      << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"#ffffff\"/>\n";
}

// Axes, ticks, grid, and labels; records the data->pixel transform so every
// plotted coordinate can be recomputed from the attributes.
void draw_axes(std::ostringstream& svg, const Range& xr, const Range& yr,
               const std::string& title, const std::string& x_label,
               const std::string& y_label) {
  svg << "<g class=\"axes\" data-xmin=\"" << format_double(xr.lo) << "\" data-xmax=\""
      << format_double(xr.hi) << "\" data-ymin=\"" << format_double(yr.lo) << "\" data-ymax=\""
      << format_double(yr.hi) << "\" data-px0=\"" << format_double(kPx0) << "\" data-px1=\""
      << format_double(kPx1) << "\" data-py0=\"" << format_double(kPy0) << "\" data-py1=\""
      << format_double(kPy1) << "\">\n";
  svg << "<rect x=\"" << kPx0 << "\" y=\"" << kPy0 << "\" width=\"" << kPx1 - kPx0
      << "\" height=\"" << kPy1 - kPy0 << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double px = map_x(fx, xr);
    const double py = map_y(fy, yr);
    svg << "<line x1=\"" << px << "\" y1=\"" << kPy1 << "\" x2=\"" << px << "\" y2=\""
        << kPy1 + 5 << "\" stroke=\"#333333\"/>\n";
    svg << "<text x=\"" << px << "\" y=\"" << kPy1 + 20
        << "\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333333\">" << tick_label(fx)
        << "</text>\n";
    svg << "<line x1=\"" << kPx0 - 5 << "\" y1=\"" << py << "\" x2=\"" << kPx0 << "\" y2=\""
        << py << "\" stroke=\"#333333\"/>\n";
    svg << "<text x=\"" << kPx0 - 8 << "\" y=\"" << py + 4
        << "\" font-size=\"12\" text-anchor=\"end\" fill=\"#333333\">" << tick_label(fy)
        << "</text>\n";
    if (i > 0 && i < 4) {
      svg << "<line x1=\"" << kPx0 << "\" y1=\"" << py << "\" x2=\"" << kPx1 << "\" y2=\"" << py
          << "\" stroke=\"#dddddd\"/>\n";
    }
  }
  svg << "</g>\n";
  svg << "<text class=\"title\" x=\"" << (kPx0 + kPx1) / 2 << "\" y=\"25\" font-size=\"15\" "
      << "text-anchor=\"middle\" fill=\"#111111\">" << escape_xml(title) << "</text>\n";
  svg << "<text class=\"x-label\" x=\"" << (kPx0 + kPx1) / 2 << "\" y=\"" << kHeight - 10
      << "\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111111\">" << escape_xml(x_label)
      << "</text>\n";
  svg << "<text class=\"y-label\" x=\"18\" y=\"" << (kPy0 + kPy1) / 2
      << "\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111111\" transform=\"rotate(-90 18 "
      << (kPy0 + kPy1) / 2 << ")\">" << escape_xml(y_label) << "</text>\n";
}

}  // namespace

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ValueError("quantile of an empty sample");
  if (p < 0.0 || p > 1.0) throw ValueError("quantile fraction must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

BoxStats box_stats(double x, const std::vector<double>& values) {
  BoxStats b;
  b.x = x;
  b.min = quantile(values, 0.0);
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  b.max = quantile(values, 1.0);
  return b;
}

std::string svg_line_plot(const std::vector<PlotSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label) {
  std::size_t points = 0;
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size())
      throw ValueError("plot series '" + s.label + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
      ++points;
    }
  }
  if (points == 0) throw ValueError("plot has no data");
  const Range xr = padded_range(xlo, xhi);
  const Range yr = padded_range(ylo, yhi);

  std::ostringstream svg;
  open_svg(svg, "line");
  draw_axes(svg, xr, yr, title, x_label, y_label);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const PlotSeries& s = series[k];
    if (s.x.empty()) continue;
    const char* color = kPalette[k % kPaletteSize];
    svg << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" data-label=\"" << escape_xml(s.label) << "\" data-x=\""
        << join_doubles(s.x) << "\" data-y=\"" << join_doubles(s.y) << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) svg << ' ';
      svg << format_double(map_x(s.x[i], xr)) << ',' << format_double(map_y(s.y[i], yr));
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      svg << "<circle cx=\"" << format_double(map_x(s.x[i], xr)) << "\" cy=\""
          << format_double(map_y(s.y[i], yr)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
  }

  if (series.size() > 1) {
    svg << "<g class=\"legend\">\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double ly = kPy0 + 16.0 + 18.0 * static_cast<double>(k);
      svg << "<line x1=\"" << kPx1 - 150 << "\" y1=\"" << ly << "\" x2=\"" << kPx1 - 126
          << "\" y2=\"" << ly << "\" stroke=\"" << kPalette[k % kPaletteSize]
          << "\" stroke-width=\"2\"/>\n";
      svg << "<text x=\"" << kPx1 - 120 << "\" y=\"" << ly + 4
          << "\" font-size=\"12\" fill=\"#111111\">" << escape_xml(series[k].label)
          << "</text>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string svg_box_plot(const std::vector<BoxStats>& boxes, const std::string& title,
                         const std::string& x_label, const std::string& y_label) {
  if (boxes.empty()) throw ValueError("plot has no data");
  double xlo = boxes[0].x, xhi = boxes[0].x;
  double ylo = boxes[0].min, yhi = boxes[0].max;
  for (const BoxStats& b : boxes) {
    xlo = std::min(xlo, b.x);
    xhi = std::max(xhi, b.x);
    ylo = std::min(ylo, b.min);
    yhi = std::max(yhi, b.max);
  }
  const Range xr = padded_range(xlo - 0.5, xhi + 0.5);
  const Range yr = padded_range(ylo, yhi);
  // Box width: 60% of the tightest category spacing, capped at 40px.
  double spacing = kPx1 - kPx0;
  std::vector<double> xs;
  for (const BoxStats& b : boxes) xs.push_back(map_x(b.x, xr));
  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i) spacing = std::min(spacing, xs[i] - xs[i - 1]);
  const double half = std::min(40.0, 0.6 * spacing) / 2.0;

  std::ostringstream svg;
  open_svg(svg, "box");
  draw_axes(svg, xr, yr, title, x_label, y_label);
  for (const BoxStats& b : boxes) {
    const double cx = map_x(b.x, xr);
    const double ymin = map_y(b.min, yr), yq1 = map_y(b.q1, yr), ymed = map_y(b.median, yr),
                 yq3 = map_y(b.q3, yr), ymax = map_y(b.max, yr);
    svg << "<g class=\"box\" data-x=\"" << format_double(b.x) << "\" data-min=\""
        << format_double(b.min) << "\" data-q1=\"" << format_double(b.q1) << "\" data-median=\""
        << format_double(b.median) << "\" data-q3=\"" << format_double(b.q3) << "\" data-max=\""
        << format_double(b.max) << "\">\n";
    // whiskers
    svg << "<line x1=\"" << cx << "\" y1=\"" << ymin << "\" x2=\"" << cx << "\" y2=\"" << yq1
        << "\" stroke=\"#333333\"/>\n";
    svg << "<line x1=\"" << cx << "\" y1=\"" << yq3 << "\" x2=\"" << cx << "\" y2=\"" << ymax
        << "\" stroke=\"#333333\"/>\n";
    svg << "<line x1=\"" << cx - half << "\" y1=\"" << ymin << "\" x2=\"" << cx + half
        << "\" y2=\"" << ymin << "\" stroke=\"#333333\"/>\n";
    svg << "<line x1=\"" << cx - half << "\" y1=\"" << ymax << "\" x2=\"" << cx + half
        << "\" y2=\"" << ymax << "\" stroke=\"#333333\"/>\n";
    // interquartile box and median
    svg << "<rect x=\"" << cx - half << "\" y=\"" << yq3 << "\" width=\"" << 2 * half
        << "\" height=\"" << yq1 - yq3 << "\" fill=\"#9ecae1\" stroke=\"#333333\"/>\n";
    svg << "<line x1=\"" << cx - half << "\" y1=\"" << ymed << "\" x2=\"" << cx + half
        << "\" y2=\"" << ymed << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace adgen
