#pragma once

#include <string>
#include <vector>

namespace subscale {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = false;  // scatter instead of polyline
  bool dashed = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = true;
  bool log_y = true;
  int width = 720;
  int height = 460;
  std::vector<PlotSeries> series;
};

// Self-contained SVG document (no external references). Non-positive values
// are dropped on log axes.
std::string render_svg(const PlotSpec& spec);

}  // namespace subscale
