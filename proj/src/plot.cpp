#include "cst/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "cst/png_io.hpp"
#include "cst/tensor.hpp"

namespace cst {

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used, MSB-side bit leftmost.
struct Glyph {
  char ch;
  unsigned char rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'[', {0x0E, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0E}},
    {']', {0x0E, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0E}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
    {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const unsigned char* find_glyph(char ch) {
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const auto& g : kFont)
    if (g.ch == ch) return g.rows;
  return nullptr;
}

struct Canvas {
  Tensor3<float> img;
  Canvas(int w, int h) : img(3, h, w) {
    std::fill(img.data.begin(), img.data.end(), 1.0f);
  }
  void put(int x, int y, float r, float g, float b) {
    if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
    img.at(0, y, x) = r;
    img.at(1, y, x) = g;
    img.at(2, y, x) = b;
  }
  void text(int x, int y, const std::string& s, float r, float g, float b) {
    for (const char ch : s) {
      const unsigned char* rows = find_glyph(ch);
      if (rows)
        for (int ry = 0; ry < 7; ++ry)
          for (int rx = 0; rx < 5; ++rx)
            if (rows[ry] & (1 << (4 - rx))) put(x + rx, y + ry, r, g, b);
      x += 6;
    }
  }
  void line(double x0, double y0, double x1, double y1, float r, float g,
            float b) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int steps =
        std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx),
                                                        std::abs(dy)))));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      put(static_cast<int>(std::lround(x0 + t * dx)),
          static_cast<int>(std::lround(y0 + t * dy)), r, g, b);
    }
  }
  void marker(int x, int y, float r, float g, float b) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) put(x + dx, y + dy, r, g, b);
  }
};

std::string tick_label(double v) {
  char buf[32];
  const double a = std::abs(v);
  if (v == 0)
    std::snprintf(buf, sizeof(buf), "0");
  else if (a >= 1e5 || a < 1e-3)
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  else if (a >= 100)
    std::snprintf(buf, sizeof(buf), "%.0f", v);
  else
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ~5 round ticks (1/2/5 ladder) across [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  if (!(span > 0)) return {lo};
  double step = std::pow(10.0, std::floor(std::log10(span / 5.0)));
  for (const double k : {1.0, 2.0, 5.0, 10.0}) {
    if (span / (step * k) <= 6.0) {
      step *= k;
      break;
    }
  }
  std::vector<double> out;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-12 * span;
       v += step)
    out.push_back(v);
  return out;
}

}  // namespace

void render_plot(const PlotSpec& spec, const std::string& png_path) {
  const int W = spec.width, H = spec.height;
  const int ml = 64, mr = 16, mt = 28, mb = 44;
  Canvas c(W, H);

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : spec.series)
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  if (!std::isfinite(x_lo)) {
    x_lo = 0;
    x_hi = 1;
    y_lo = 0;
    y_hi = 1;
  }
  if (x_hi <= x_lo) x_hi = x_lo + 1;
  if (y_hi <= y_lo) y_hi = y_lo + (std::abs(y_lo) > 0 ? std::abs(y_lo) : 1);
  const double y_pad = 0.06 * (y_hi - y_lo);
  y_lo -= y_pad;
  y_hi += y_pad;

  const auto px = [&](double x) {
    return ml + (x - x_lo) / (x_hi - x_lo) * (W - ml - mr);
  };
  const auto py = [&](double y) {
    return H - mb - (y - y_lo) / (y_hi - y_lo) * (H - mt - mb);
  };

  for (const double tx : ticks(x_lo, x_hi)) {
    const int x = static_cast<int>(std::lround(px(tx)));
    c.line(x, mt, x, H - mb, 0.92f, 0.92f, 0.92f);
    const std::string lab = tick_label(tx);
    c.text(x - 3 * static_cast<int>(lab.size()), H - mb + 6, lab, 0.25f,
           0.25f, 0.25f);
  }
  for (const double ty : ticks(y_lo, y_hi)) {
    const int y = static_cast<int>(std::lround(py(ty)));
    c.line(ml, y, W - mr, y, 0.92f, 0.92f, 0.92f);
    const std::string lab = tick_label(ty);
    c.text(ml - 6 - 6 * static_cast<int>(lab.size()), y - 3, lab, 0.25f,
           0.25f, 0.25f);
  }
  c.line(ml, H - mb, W - mr, H - mb, 0.1f, 0.1f, 0.1f);
  c.line(ml, mt, ml, H - mb, 0.1f, 0.1f, 0.1f);

  c.text((W - 6 * static_cast<int>(spec.title.size())) / 2, 8, spec.title,
         0.1f, 0.1f, 0.1f);
  c.text((W - 6 * static_cast<int>(spec.x_label.size())) / 2, H - 14,
         spec.x_label, 0.25f, 0.25f, 0.25f);
  c.text(4, mt - 14, spec.y_label, 0.25f, 0.25f, 0.25f);

  int legend_y = mt + 4;
  for (const auto& s : spec.series) {
    for (size_t i = 0; i + 1 < s.x.size() && i + 1 < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(s.y[i + 1])) continue;
      c.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.r,
             s.g, s.b);
      c.line(px(s.x[i]), py(s.y[i]) + 1, px(s.x[i + 1]), py(s.y[i + 1]) + 1,
             s.r, s.g, s.b);
    }
    if (s.markers || s.x.size() == 1)
      for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
        if (std::isfinite(s.y[i]))
          c.marker(static_cast<int>(std::lround(px(s.x[i]))),
                   static_cast<int>(std::lround(py(s.y[i]))), s.r, s.g, s.b);
    const int lx = W - mr - 150;
    c.line(lx, legend_y + 3, lx + 18, legend_y + 3, s.r, s.g, s.b);
    c.line(lx, legend_y + 4, lx + 18, legend_y + 4, s.r, s.g, s.b);
    c.text(lx + 24, legend_y, s.name, 0.15f, 0.15f, 0.15f);
    legend_y += 12;
  }

  write_png_rgb(png_path, c.img);
}

}  // namespace cst
