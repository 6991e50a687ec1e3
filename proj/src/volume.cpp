#include "vt/volume.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace vt {

static_assert(std::endian::native == std::endian::little,
              "raw volume I/O assumes a little-endian host");

Box3 bounding_box(const Mask& mask) {
  Box3 box;
  const auto& s = mask.shape();
  box.row_min = s.rows;
  box.col_min = s.cols;
  box.slice_min = s.slices;
  for (int k = 0; k < s.slices; ++k)
    for (int i = 0; i < s.rows; ++i)
      for (int j = 0; j < s.cols; ++j) {
        if (!mask.at(i, j, k)) continue;
        box.row_min = std::min(box.row_min, i);
        box.row_max = std::max(box.row_max, i);
        box.col_min = std::min(box.col_min, j);
        box.col_max = std::max(box.col_max, j);
        box.slice_min = std::min(box.slice_min, k);
        box.slice_max = std::max(box.slice_max, k);
      }
  return box;
}

std::size_t count_nonzero(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v != 0;
  return n;
}

void check_finite(const Volume& v) {
  const auto& s = v.shape();
  for (int k = 0; k < s.slices; ++k)
    for (int i = 0; i < s.rows; ++i)
      for (int j = 0; j < s.cols; ++j)
        if (!std::isfinite(v.at(i, j, k))) {
          std::ostringstream msg;
          msg << "non-finite voxel at (row " << i << ", col " << j << ", slice " << k << ")";
          throw VolumeError(msg.str());
        }
}

Mask mask_from_volume(const Volume& v) {
  Mask m(v.shape(), v.spacing(), v.origin());
  auto src = v.data();
  auto dst = m.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.5f ? 1 : 0;
  return m;
}

Volume volume_from_mask(const Mask& m) {
  Volume v(m.shape(), m.spacing(), m.origin());
  auto src = m.data();
  auto dst = v.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 1.0f : 0.0f;
  return v;
}

namespace {

template <typename T>
Grid3<T> crop_grid(const Grid3<T>& g, const Box3& box) {
  const auto& s = g.shape();
  if (box.empty() || box.row_min < 0 || box.col_min < 0 || box.slice_min < 0 ||
      box.row_max >= s.rows || box.col_max >= s.cols || box.slice_max >= s.slices)
    throw VolumeError("crop box outside grid");
  Origin o{g.origin().x + box.col_min * g.spacing().x, g.origin().y + box.row_min * g.spacing().y,
           g.origin().z + box.slice_min * g.spacing().z};
  Grid3<T> out({box.rows(), box.cols(), box.slices()}, g.spacing(), o);
  for (int k = 0; k < box.slices(); ++k)
    for (int i = 0; i < box.rows(); ++i)
      for (int j = 0; j < box.cols(); ++j)
        out.at(i, j, k) = g.at(box.row_min + i, box.col_min + j, box.slice_min + k);
  return out;
}

constexpr const char* kMagic = "vtvol";
constexpr int kFormatVersion = 1;

template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "float32"; }
template <>
constexpr const char* dtype_name<std::uint8_t>() { return "uint8"; }

std::filesystem::path raw_path_for(const std::filesystem::path& header) {
  auto p = header;
  p.replace_extension(".raw");
  return p;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

template <typename T>
void save_grid(const Grid3<T>& g, const std::filesystem::path& header) {
  if (g.empty()) throw VolumeError("refusing to save an empty grid");
  const auto raw = raw_path_for(header);
  {
    std::ofstream out(raw, std::ios::binary | std::ios::trunc);
    if (!out) throw VolumeError("cannot open " + raw.string() + " for writing");
    auto d = g.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(T)));
    if (!out) throw VolumeError("write failed: " + raw.string());
  }
  std::ofstream h(header, std::ios::trunc);
  if (!h) throw VolumeError("cannot open " + header.string() + " for writing");
  const auto& s = g.shape();
  h << kMagic << ' ' << kFormatVersion << '\n'
    << "dtype " << dtype_name<T>() << '\n'
    << "endianness little\n"
    << "shape " << s.rows << ' ' << s.cols << ' ' << s.slices << '\n'
    << "spacing " << fmt_double(g.spacing().x) << ' ' << fmt_double(g.spacing().y) << ' '
    << fmt_double(g.spacing().z) << '\n'
    << "origin " << fmt_double(g.origin().x) << ' ' << fmt_double(g.origin().y) << ' '
    << fmt_double(g.origin().z) << '\n'
    << "data " << raw.filename().string() << '\n';
  if (!h) throw VolumeError("write failed: " + header.string());
}

[[noreturn]] void header_error(const std::filesystem::path& p, int line, const std::string& what) {
  throw VolumeError(p.string() + ":" + std::to_string(line) + ": " + what);
}

template <typename T>
Grid3<T> load_grid(const std::filesystem::path& header) {
  std::ifstream h(header);
  if (!h) throw VolumeError("cannot open volume header " + header.string());

  GridShape shape{};
  Spacing spacing{};
  Origin origin{};
  std::string dtype, data_file;
  bool have_shape = false, have_spacing = false, have_origin = false;

  std::string line;
  int lineno = 0;
  while (std::getline(h, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (lineno == 1) {
      int version = 0;
      if (key != kMagic || !(ls >> version)) header_error(header, lineno, "missing vtvol magic");
      if (version != kFormatVersion)
        header_error(header, lineno, "unsupported format version " + std::to_string(version));
      continue;
    }
    if (key == "dtype") {
      ls >> dtype;
    } else if (key == "endianness") {
      std::string e;
      ls >> e;
      if (e != "little") header_error(header, lineno, "only little-endian data is supported");
    } else if (key == "shape") {
      have_shape = static_cast<bool>(ls >> shape.rows >> shape.cols >> shape.slices);
      if (!have_shape) header_error(header, lineno, "malformed shape");
    } else if (key == "spacing") {
      have_spacing = static_cast<bool>(ls >> spacing.x >> spacing.y >> spacing.z);
      if (!have_spacing) header_error(header, lineno, "malformed spacing");
    } else if (key == "origin") {
      have_origin = static_cast<bool>(ls >> origin.x >> origin.y >> origin.z);
      if (!have_origin) header_error(header, lineno, "malformed origin");
    } else if (key == "data") {
      ls >> data_file;
    } else {
      header_error(header, lineno, "unknown key '" + key + "'");
    }
  }
  if (lineno == 0) header_error(header, 1, "empty header");
  if (dtype != dtype_name<T>())
    throw VolumeError(header.string() + ": dtype '" + dtype + "', expected '" + dtype_name<T>() +
                      "'");
  if (!have_shape || !have_spacing || !have_origin || data_file.empty())
    throw VolumeError(header.string() + ": header is missing shape, spacing, origin or data");
  if (shape.rows < 1 || shape.cols < 1 || shape.slices < 1)
    throw VolumeError(header.string() + ": non-positive shape");
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
    throw VolumeError(header.string() + ": non-positive spacing");

  const auto raw = header.parent_path() / data_file;
  std::ifstream in(raw, std::ios::binary);
  if (!in) throw VolumeError("cannot open volume data " + raw.string());

  Grid3<T> g(shape, spacing, origin);
  auto d = g.data();
  const auto want = static_cast<std::streamsize>(d.size() * sizeof(T));
  in.read(reinterpret_cast<char*>(d.data()), want);
  const auto got = in.gcount();
  if (got != want)
    throw VolumeError(raw.string() + ": truncated data at byte offset " + std::to_string(got) +
                      " (expected " + std::to_string(want) + " bytes)");
  if (in.peek() != std::char_traits<char>::eof())
    throw VolumeError(raw.string() + ": trailing bytes after offset " + std::to_string(want));
  return g;
}

}  // namespace

Volume crop(const Volume& v, const Box3& box) { return crop_grid(v, box); }
Mask crop(const Mask& m, const Box3& box) { return crop_grid(m, box); }

void save_volume(const Volume& v, const std::filesystem::path& p) { save_grid(v, p); }
Volume load_volume(const std::filesystem::path& p) {
  auto v = load_grid<float>(p);
  check_finite(v);
  return v;
}
void save_mask(const Mask& m, const std::filesystem::path& p) { save_grid(m, p); }
Mask load_mask(const std::filesystem::path& p) {
  auto m = load_grid<std::uint8_t>(p);
  for (std::size_t i = 0; i < m.data().size(); ++i)
    if (m.data()[i] > 1)
      throw VolumeError(p.string() + ": non-binary mask value at voxel offset " +
                        std::to_string(i));
  return m;
}

}  // namespace vt
