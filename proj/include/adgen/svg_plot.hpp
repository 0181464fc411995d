#pragma once

// Static SVG plots with self-describing geometry: every drawn value is also
// embedded in data-* attributes (raw series values plus the axis transform),
// so a reader can recompute each pixel coordinate from the file alone and
// verify the drawing against the CSV it came from.

#include <string>
#include <vector>

#include "adgen/tensor.hpp"

namespace adgen {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  // same length as x
};

// Five-number summary drawn as one box at category position x.
struct BoxStats {
  double x = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

// Linear-interpolation quantile (the common "R-7" rule) of a non-empty
// sample; p in [0,1]. Throws ValueError on empty input or p out of range.
double quantile(std::vector<double> values, double p);

// Box summary of a non-empty sample at category position x.
BoxStats box_stats(double x, const std::vector<double>& values);

// Line plot: one polyline per series, circle markers, legend when more than
// one series. Throws ValueError when no series has a point or when a series'
// x/y lengths disagree.
std::string svg_line_plot(const std::vector<PlotSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label);

// Box plot: one box-and-whiskers per entry. Throws ValueError on empty input.
std::string svg_box_plot(const std::vector<BoxStats>& boxes, const std::string& title,
                         const std::string& x_label, const std::string& y_label);

}  // namespace adgen
