#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vt/cohort.hpp"
#include "vt/volume.hpp"

namespace vt {

class PreprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kHuFloor = -900.0;
inline constexpr double kHuCeiling = 300.0;

/// (clamp(hu, -900, 300) + 900) / 1200. Throws VolumeError on non-finite input.
Volume clip_normalize_hu(const Volume& hu);

/// Inverse affine map of clip_normalize_hu for values in [0, 1].
Volume denormalize_to_hu(const Volume& normalized);

enum class Interpolation { linear, nearest };

/// Output dims = round(dim * spacing / target). Voxel i of the output samples
/// the input at continuous index i * target / spacing (edge-clamped).
Volume resample(const Volume& v, Spacing target, Interpolation mode = Interpolation::linear);
Mask resample(const Mask& m, Spacing target);

struct CropOptions {
  int margin = 8;  // in-plane voxels
  int align = 1;   // box rows/cols rounded up to a multiple of this
};

struct CropSpec {
  // In-plane box; slice fields unused.
  int row_min = 0, row_max = -1, col_min = 0, col_max = -1;
  std::map<std::string, std::pair<int, int>> axial;  // inclusive slice range per patient

  int rows() const { return row_max - row_min + 1; }
  int cols() const { return col_max - col_min + 1; }
  Box3 box_for(const std::string& patient_id) const;
};

/// In-plane box = tight box of the largest-area baseline CTV footprint, grown
/// to cover every other footprint, padded by margin, aligned, clamped to the
/// grid. Axial range per patient = slices where the baseline mask is nonzero.
CropSpec compute_crop_spec(const std::vector<std::pair<std::string, Mask>>& baseline_masks,
                           CropOptions options = {});

/// Clinical vector: (age_norm, sex, histology one-hot, cT_norm, cN_norm).
struct ClinicalEncoding {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const ClinicalEncoding&) const = default;
};

inline std::size_t clinical_dimension(int n_histology) { return 4 + static_cast<std::size_t>(n_histology); }

ClinicalEncoding encode_clinical(const PatientRecord& record, const CohortStats& stats);

/// clamp(dose / dose_max, 0, 1); dose_max must be positive.
double normalize_dose(double dose_gy, double dose_max);

struct PreprocessOptions {
  Spacing target_spacing{1.0, 1.0, 3.0};
  CropOptions crop{8, 4};
};

/// Normalised, resampled and cropped cohort. `cohort` refs point at the
/// cropped volumes; phantom truth (if any) is carried over unchanged.
struct PreprocessedCohort {
  CohortManifest cohort;
  CropSpec crop;
  Spacing spacing;
  std::string fingerprint;  // identifies HU window, spacing and crop box
};

std::string preprocess_fingerprint(const Spacing& spacing, const CropSpec& crop);

PreprocessedCohort preprocess_cohort(const CohortManifest& raw, const PreprocessOptions& options,
                                     const std::filesystem::path& out_dir, int workers = 1);

void save_preprocessed(const PreprocessedCohort& p, const std::filesystem::path& path);
PreprocessedCohort load_preprocessed(const std::filesystem::path& path);

}  // namespace vt
