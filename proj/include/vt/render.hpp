#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vt::render {

struct Rgba {
  std::uint8_t r = 0, g = 0, b = 0, a = 255;
  bool operator==(const Rgba&) const = default;
};

inline constexpr Rgba kWhite{255, 255, 255, 255};
inline constexpr Rgba kBlack{0, 0, 0, 255};
inline constexpr Rgba kGrey{160, 160, 160, 255};
inline constexpr Rgba kRed{220, 30, 30, 255};
inline constexpr Rgba kTransparent{0, 0, 0, 0};

/// Fixed palette for plot series.
Rgba series_colour(std::size_t i);

class Canvas {
 public:
  Canvas(int width, int height, Rgba fill = kWhite);

  int width() const { return width_; }
  int height() const { return height_; }
  Rgba pixel(int x, int y) const;

  void set(int x, int y, Rgba c);
  /// Source-over blend of c (uses c.a) onto the pixel.
  void blend(int x, int y, Rgba c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgba c);
  void line(int x0, int y0, int x1, int y1, Rgba c, int thickness = 1);
  void disc(int cx, int cy, int radius, Rgba c);
  void circle(int cx, int cy, int radius, Rgba c);
  /// 5x7 glyphs; lower case drawn as upper case; unknown characters as '?'.
  void text(int x, int y, const std::string& s, Rgba c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  /// Greyscale image of a rows x cols plane mapped from [lo, hi], each pixel
  /// drawn as a zoom x zoom block at (x0, y0).
  void image(int x0, int y0, std::span<const float> plane, int rows, int cols, float lo, float hi, int zoom);
  /// Outline of a binary rows x cols plane (pixels inside with an outside
  /// 4-neighbour), at the same placement as image().
  void contour(int x0, int y0, std::span<const float> mask, int rows, int cols, int zoom, Rgba c);

  /// PNG bytes (RGBA, no timestamps, so identical canvases give identical bytes).
  std::vector<std::uint8_t> encode_png() const;
  void write_png(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<Rgba> px_;
};

struct Series {
  std::string label;
  std::vector<double> x, y;  // NaN y values break the line
};

struct AxisSpec {
  std::string label;
  double lo = 0, hi = 1;
  bool log = false;
  std::vector<double> ticks;
};

/// Frame with ticks and labels; maps data coordinates to pixels.
class ChartFrame {
 public:
  ChartFrame(Canvas& canvas, AxisSpec x, AxisSpec y, std::string title);
  int px(double x) const;
  int py(double y) const;
  void legend(const std::vector<std::pair<std::string, Rgba>>& items);

 private:
  Canvas& canvas_;
  AxisSpec x_, y_;
  int left_, right_, top_, bottom_;
};

/// Line chart with markers, one colour per series, and a legend.
Canvas line_chart(const std::vector<Series>& series, const AxisSpec& x, const AxisSpec& y, const std::string& title,
                  int width = 640, int height = 420);

std::string format_number(double v, int precision = 3);

}  // namespace vt::render
