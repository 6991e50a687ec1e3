#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vt {

/// Grid extent in voxels: rows (H, y), columns (W, x), slices (D, z).
struct GridShape {
  int rows = 0;
  int cols = 0;
  int slices = 0;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(rows) * cols * slices;
  }
  std::size_t slice_size() const { return static_cast<std::size_t>(rows) * cols; }
  bool operator==(const GridShape&) const = default;
};

/// Physical spacing in mm/voxel along (x = columns, y = rows, z = slices).
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double voxel_volume() const { return x * y * z; }
  bool operator==(const Spacing&) const = default;
};

struct Origin {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool operator==(const Origin&) const = default;
};

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense 3D scalar grid stored slice-major: index = (slice * rows + row) * cols + col.
/// Each axial slice is contiguous.
template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  Grid3(GridShape shape, Spacing spacing = {}, Origin origin = {}, T fill = T{})
      : shape_(shape), spacing_(spacing), origin_(origin) {
    if (shape.rows < 1 || shape.cols < 1 || shape.slices < 1)
      throw VolumeError("grid dimensions must be >= 1");
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
      throw VolumeError("grid spacing must be positive");
    data_.assign(shape.voxel_count(), fill);
  }

  const GridShape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  const Origin& origin() const { return origin_; }
  void set_origin(Origin o) { origin_ = o; }

  std::size_t index(int row, int col, int slice) const {
    return (static_cast<std::size_t>(slice) * shape_.rows + row) * shape_.cols + col;
  }
  T& at(int row, int col, int slice) { return data_[index(row, col, slice)]; }
  const T& at(int row, int col, int slice) const { return data_[index(row, col, slice)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::span<T> slice(int k) {
    return std::span<T>(data_).subspan(static_cast<std::size_t>(k) * shape_.slice_size(),
                                       shape_.slice_size());
  }
  std::span<const T> slice(int k) const {
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(k) * shape_.slice_size(),
                                             shape_.slice_size());
  }

  bool empty() const { return data_.empty(); }
  bool operator==(const Grid3&) const = default;

 private:
  GridShape shape_{};
  Spacing spacing_{};
  Origin origin_{};
  std::vector<T> data_;
};

/// Scalar intensity volume (HU or normalized [0,1]).
using Volume = Grid3<float>;

/// Binary mask; values are 0 or 1.
using Mask = Grid3<std::uint8_t>;

/// Inclusive voxel bounding box.
struct Box3 {
  int row_min = 0, row_max = -1;
  int col_min = 0, col_max = -1;
  int slice_min = 0, slice_max = -1;

  bool empty() const { return row_max < row_min || col_max < col_min || slice_max < slice_min; }
  int rows() const { return row_max - row_min + 1; }
  int cols() const { return col_max - col_min + 1; }
  int slices() const { return slice_max - slice_min + 1; }
  bool operator==(const Box3&) const = default;
};

/// Tight bounding box of the nonzero voxels; empty() when the mask has none.
Box3 bounding_box(const Mask& mask);
std::size_t count_nonzero(const Mask& mask);

/// Throws VolumeError naming the first non-finite voxel.
void check_finite(const Volume& v);

Mask mask_from_volume(const Volume& v);
Volume volume_from_mask(const Mask& m);

Volume crop(const Volume& v, const Box3& box);
Mask crop(const Mask& m, const Box3& box);

// On-disk format: little-endian raw grid (<stem>.raw) plus a text sidecar
// header (<stem>.hdr). Paths passed here name the header.
void save_volume(const Volume& v, const std::filesystem::path& header_path);
Volume load_volume(const std::filesystem::path& header_path);
void save_mask(const Mask& m, const std::filesystem::path& header_path);
Mask load_mask(const std::filesystem::path& header_path);

}  // namespace vt
