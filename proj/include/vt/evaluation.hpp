#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vt/volume.hpp"

namespace vt {

class OtsuError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Class split over a histogram: bins [0, bin] are background, the rest
/// foreground. threshold is the upper edge of bin `bin`.
struct OtsuResult {
  int bin = 0;
  double threshold = 0.0;
  double lo = 0.0, hi = 0.0;
  int bins = 256;

  /// Histogram bin of a value under the same binning (clamped to the range).
  int bin_of(double v) const;
  bool foreground(double v) const { return bin_of(v) > bin; }
};

/// Index k maximising w0 w1 (mu0 - mu1)^2 over bin indices; first maximum
/// wins. Throws OtsuError when fewer than two bins are occupied.
int otsu_bin(std::span<const std::int64_t> histogram);

/// Histogram of the values over [min, max] with `bins` bins, then otsu_bin.
OtsuResult otsu_threshold(std::span<const float> values, int bins = 256);

/// Baseline CTV bounding box, padded and clamped to the grid.
struct LocalROI {
  Box3 box;

  static LocalROI from_mask(const Mask& ctv, int pad_voxels = 0);
  void check(const GridShape& grid) const;
};

struct SegmentOptions {
  int bins = 256;
  bool largest_component = false;  // keep only the largest 6-connected foreground component
};

/// Foreground mask of the ROI (same grid as the volume, zero outside the ROI).
Mask otsu_segment(const Volume& volume, const LocalROI& roi, const SegmentOptions& options = {});

/// Count of foreground voxels in the ROI times the voxel volume (mm^3).
double tumor_volume_otsu(const Volume& volume, const LocalROI& roi, const SegmentOptions& options = {});

/// 100 |V_pred - V_real| / V_real; nullopt when V_real <= 0.
std::optional<double> delta_v_percent(double v_pred, double v_real);

inline constexpr double kAcceptableDeltaV = 25.0;
inline bool acceptable(double delta_v) { return delta_v <= kAcceptableDeltaV; }

inline constexpr int kDoseBinCentres[] = {10, 20, 30, 40, 50, 60};

/// Centre c with delta in [c - 5, c + 5) for c in 10..60; nullopt otherwise.
std::optional<int> dose_bin(double delta_gy);

struct VolumetricEntry {
  std::string model_id;
  std::string patient_id;
  double delta_gy = 0.0;
  double v_real_mm3 = 0.0;
  double v_pred_mm3 = 0.0;
  std::optional<double> delta_v;  // missing when V_real is zero
  std::string diagnostic;
};

VolumetricEntry make_entry(std::string model_id, std::string patient_id, double delta_gy, double v_real,
                           double v_pred);

struct BinStat {
  int centre_gy = 0;
  int count = 0;
  std::optional<double> mean;  // missing for empty bins
  std::optional<double> sd;    // population standard deviation
};

/// Six bins 10..60 Gy over entries that carry a |dV| value.
std::vector<BinStat> dose_binned_curve(const std::vector<VolumetricEntry>& entries);

struct VolumetricsReport {
  std::vector<VolumetricEntry> entries;

  std::vector<std::string> models() const;
  std::vector<VolumetricEntry> for_model(const std::string& model_id) const;
  /// Fraction of a model's entries (with a value) that are acceptable.
  std::optional<double> acceptability_rate(const std::string& model_id) const;
  std::optional<double> mean_delta_v(const std::string& model_id, double max_delta_gy = 1e300) const;
};

/// Writes volumetrics.csv, dose_bins.csv and, for non-empty reports,
/// delta_v_by_dose.png (one curve per model). Returns the written paths.
std::vector<std::filesystem::path> emit_report(const VolumetricsReport& report, const std::filesystem::path& out_dir);

/// One row of a qualitative grid: a label and one axial plane per column.
struct GridRow {
  std::string label;
  std::vector<std::vector<float>> planes;
};

/// Rows x columns of planes in [0, 1] with the CTV contour drawn in red on
/// every cell; column headers above.
void emit_slice_grid(const std::filesystem::path& path, const std::vector<std::string>& column_headers,
                     const std::vector<GridRow>& rows, const std::vector<float>& ctv_plane, int plane_rows,
                     int plane_cols, int zoom = 3);

}  // namespace vt
