#include "vt/render.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include <png.h>

namespace vt::render {

namespace {

// 5x7 glyphs, one string per row, '#' set.
const std::map<char, std::array<const char*, 7>>& font() {
  static const std::map<char, std::array<const char*, 7>> glyphs{
      {' ', {".....", ".....", ".....", ".....", ".....", ".....", "....."}},
      {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
      {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
      {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
      {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
      {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
      {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
      {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
      {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
      {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
      {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
      {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
      {'C', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
      {'D', {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."}},
      {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
      {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
      {'G', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}},
      {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
      {'I', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'J', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
      {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
      {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
      {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
      {'N', {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"}},
      {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
      {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
      {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
      {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
      {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
      {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
      {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
      {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
      {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
      {'X', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
      {'Y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
      {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
      {'.', {".....", ".....", ".....", ".....", ".....", ".##..", ".##.."}},
      {',', {".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."}},
      {'-', {".....", ".....", ".....", "#####", ".....", ".....", "....."}},
      {'+', {".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."}},
      {'%', {"##...", "##..#", "...#.", "..#..", ".#...", "#..##", "...##"}},
      {'(', {"...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."}},
      {')', {".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."}},
      {':', {".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."}},
      {'/', {".....", "....#", "...#.", "..#..", ".#...", "#....", "....."}},
      {'_', {".....", ".....", ".....", ".....", ".....", ".....", "#####"}},
      {'=', {".....", ".....", "#####", ".....", "#####", ".....", "....."}},
      {'<', {"...#.", "..#..", ".#...", "#....", ".#...", "..#..", "...#."}},
      {'>', {".#...", "..#..", "...#.", "....#", "...#.", "..#..", ".#..."}},
      {'?', {".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#.."}},
      {'|', {"..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
      {'\'', {"..#..", "..#..", ".#...", ".....", ".....", ".....", "....."}},
      {'*', {".....", "..#..", "#.#.#", ".###.", "#.#.#", "..#..", "....."}},
      {'[', {".###.", ".#...", ".#...", ".#...", ".#...", ".#...", ".###."}},
      {']', {".###.", "...#.", "...#.", "...#.", "...#.", "...#.", ".###."}},
      {'#', {".#.#.", ".#.#.", "#####", ".#.#.", "#####", ".#.#.", ".#.#."}},
  };
  return glyphs;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

}  // namespace

Rgba series_colour(std::size_t i) {
  static const Rgba palette[] = {{31, 119, 180, 255}, {214, 39, 40, 255},  {44, 160, 44, 255},
                                 {255, 127, 14, 255}, {148, 103, 189, 255}, {140, 86, 75, 255}};
  return palette[i % std::size(palette)];
}

Canvas::Canvas(int width, int height, Rgba fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("canvas size must be positive");
  px_.assign(static_cast<std::size_t>(width) * height, fill);
}

Rgba Canvas::pixel(int x, int y) const { return px_.at(static_cast<std::size_t>(y) * width_ + x); }

void Canvas::set(int x, int y, Rgba c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  px_[static_cast<std::size_t>(y) * width_ + x] = c;
}

void Canvas::blend(int x, int y, Rgba c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  auto& d = px_[static_cast<std::size_t>(y) * width_ + x];
  const int a = c.a;
  auto mix = [a](int s, int t) { return static_cast<std::uint8_t>((s * a + t * (255 - a) + 127) / 255); };
  d = {mix(c.r, d.r), mix(c.g, d.g), mix(c.b, d.b), static_cast<std::uint8_t>(std::min(255, a + d.a * (255 - a) / 255))};
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgba c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgba c, int thickness) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  const int r = thickness / 2;
  while (true) {
    fill_rect(x0 - r, y0 - r, x0 - r + thickness - 1, y0 - r + thickness - 1, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::disc(int cx, int cy, int radius, Rgba c) {
  for (int y = -radius; y <= radius; ++y)
    for (int x = -radius; x <= radius; ++x)
      if (x * x + y * y <= radius * radius) blend(cx + x, cy + y, c);
}

void Canvas::circle(int cx, int cy, int radius, Rgba c) {
  for (int y = -radius; y <= radius; ++y)
    for (int x = -radius; x <= radius; ++x) {
      const int d = x * x + y * y;
      if (d <= radius * radius && d > (radius - 1) * (radius - 1)) set(cx + x, cy + y, c);
    }
}

void Canvas::text(int x, int y, const std::string& s, Rgba c, int scale) {
  const auto& f = font();
  int pen = x;
  for (char ch : s) {
    char key = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    auto it = f.find(key);
    if (it == f.end()) it = f.find('?');
    for (int row = 0; row < 7; ++row)
      for (int col = 0; col < 5; ++col)
        if (it->second[row][col] == '#')
          fill_rect(pen + col * scale, y + row * scale, pen + col * scale + scale - 1, y + row * scale + scale - 1, c);
    pen += 6 * scale;
  }
}

void Canvas::image(int x0, int y0, std::span<const float> plane, int rows, int cols, float lo, float hi, int zoom) {
  if (plane.size() != static_cast<std::size_t>(rows) * cols) throw std::invalid_argument("image: plane size mismatch");
  const float span = hi > lo ? hi - lo : 1.0f;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const float v = std::clamp((plane[static_cast<std::size_t>(r) * cols + c] - lo) / span, 0.0f, 1.0f);
      const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      fill_rect(x0 + c * zoom, y0 + r * zoom, x0 + c * zoom + zoom - 1, y0 + r * zoom + zoom - 1, {g, g, g, 255});
    }
}

void Canvas::contour(int x0, int y0, std::span<const float> mask, int rows, int cols, int zoom, Rgba c) {
  if (mask.size() != static_cast<std::size_t>(rows) * cols) throw std::invalid_argument("contour: mask size mismatch");
  auto in = [&](int r, int col) {
    return r >= 0 && col >= 0 && r < rows && col < cols && mask[static_cast<std::size_t>(r) * cols + col] > 0.5f;
  };
  for (int r = 0; r < rows; ++r)
    for (int col = 0; col < cols; ++col) {
      if (!in(r, col)) continue;
      const bool edge = !in(r - 1, col) || !in(r + 1, col) || !in(r, col - 1) || !in(r, col + 1);
      if (edge) fill_rect(x0 + col * zoom, y0 + r * zoom, x0 + col * zoom + zoom - 1, y0 + r * zoom + zoom - 1, c);
    }
}

std::vector<std::uint8_t> Canvas::encode_png() const {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, width_, height_, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width_) * 4);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const auto& p = px_[static_cast<std::size_t>(y) * width_ + x];
      row[4 * x] = p.r;
      row[4 * x + 1] = p.g;
      row[4 * x + 2] = p.b;
      row[4 * x + 3] = p.a;
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void Canvas::write_png(const std::filesystem::path& path) const {
  const auto bytes = encode_png();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string format_number(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

ChartFrame::ChartFrame(Canvas& canvas, AxisSpec x, AxisSpec y, std::string title)
    : canvas_(canvas), x_(std::move(x)), y_(std::move(y)) {
  left_ = 70;
  right_ = canvas.width() - 20;
  top_ = 40;
  bottom_ = canvas.height() - 50;
  if (x_.log && !(x_.lo > 0)) throw std::invalid_argument("log axis needs a positive lower bound");
  if (!(x_.hi > x_.lo) || !(y_.hi > y_.lo)) throw std::invalid_argument("chart axis range is empty");
  canvas_.text((canvas.width() - Canvas::text_width(title, 2)) / 2, 10, title, kBlack, 2);
  canvas_.line(left_, bottom_, right_, bottom_, kBlack);
  canvas_.line(left_, top_, left_, bottom_, kBlack);
  for (double t : x_.ticks) {
    const int p = px(t);
    canvas_.line(p, bottom_, p, bottom_ + 4, kBlack);
    const auto s = format_number(t);
    canvas_.text(p - Canvas::text_width(s) / 2, bottom_ + 8, s, kBlack);
  }
  for (double t : y_.ticks) {
    const int p = py(t);
    canvas_.line(left_ - 4, p, left_, p, kBlack);
    canvas_.line(left_ + 1, p, right_, p, {230, 230, 230, 255});
    const auto s = format_number(t);
    canvas_.text(left_ - 8 - Canvas::text_width(s), p - 3, s, kBlack);
  }
  canvas_.text((left_ + right_ - Canvas::text_width(x_.label)) / 2, bottom_ + 26, x_.label, kBlack);
  canvas_.text(6, top_ - 14, y_.label, kBlack);
}

int ChartFrame::px(double x) const {
  const double f = x_.log ? (std::log10(x) - std::log10(x_.lo)) / (std::log10(x_.hi) - std::log10(x_.lo))
                          : (x - x_.lo) / (x_.hi - x_.lo);
  return left_ + static_cast<int>(std::lround(f * (right_ - left_)));
}

int ChartFrame::py(double y) const {
  const double f = y_.log ? (std::log10(y) - std::log10(y_.lo)) / (std::log10(y_.hi) - std::log10(y_.lo))
                          : (y - y_.lo) / (y_.hi - y_.lo);
  return bottom_ - static_cast<int>(std::lround(f * (bottom_ - top_)));
}

void ChartFrame::legend(const std::vector<std::pair<std::string, Rgba>>& items) {
  int y = top_ + 6;
  for (const auto& [label, colour] : items) {
    const int x = right_ - 10 - Canvas::text_width(label) - 16;
    canvas_.fill_rect(x, y, x + 10, y + 6, colour);
    canvas_.text(x + 16, y, label, kBlack);
    y += 12;
  }
}

Canvas line_chart(const std::vector<Series>& series, const AxisSpec& x, const AxisSpec& y, const std::string& title,
                  int width, int height) {
  Canvas canvas(width, height);
  ChartFrame frame(canvas, x, y, title);
  std::vector<std::pair<std::string, Rgba>> items;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const auto colour = series_colour(i);
    items.emplace_back(s.label, colour);
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.y[k])) continue;
      const int x1 = frame.px(s.x[k]), y1 = frame.py(s.y[k]);
      if (k + 1 < s.x.size() && std::isfinite(s.y[k + 1]))
        canvas.line(x1, y1, frame.px(s.x[k + 1]), frame.py(s.y[k + 1]), colour, 2);
      canvas.disc(x1, y1, 3, colour);
    }
  }
  frame.legend(items);
  return canvas;
}

}  // namespace vt::render
