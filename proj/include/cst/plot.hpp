#pragma once

#include <string>
#include <vector>

namespace cst {

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
  float r = 0.2f, g = 0.4f, b = 0.8f;
  bool markers = false;  // draw point markers in addition to the polyline
};

struct PlotSpec {
  std::string title, x_label, y_label;
  int width = 720, height = 440;
  std::vector<PlotSeries> series;
};

// Minimal raster plotter: axes, ticks, legend, bitmap labels; PNG output.
void render_plot(const PlotSpec& spec, const std::string& png_path);

}  // namespace cst
