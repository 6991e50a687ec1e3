#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vt/volume.hpp"

namespace vt {

class CohortError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ScanRecord {
  int time_index = 0;
  double cumulative_dose_gy = 0.0;
  std::string volume_ref;  // relative to the manifest directory

  bool operator==(const ScanRecord&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  double age_years = 0.0;
  int sex = 0;        // 0 / 1
  int histology = 0;  // category index in [0, n_histology)
  int ct_stage = 1;   // 1..4
  int cn_stage = 0;   // 0..3
  std::vector<ScanRecord> scans;
  std::string ctv_mask_ref;

  const ScanRecord& baseline() const { return scans.front(); }
  bool operator==(const PatientRecord&) const = default;
};

struct CohortStats {
  double age_min = 0.0;
  double age_max = 0.0;
  double dose_max = 0.0;
  int n_histology = 7;

  bool operator==(const CohortStats&) const = default;
};

/// Analytic tumour parameters of a synthetic patient. Positions in mm relative
/// to the volume origin; semi-axes at zero dose.
struct PhantomTruth {
  double v0_mm3 = 0.0;
  double alpha = 0.0;
  std::array<double, 3> center_mm{};  // (x, y, z)
  std::array<double, 3> axes_mm{};    // (x, y, z) semi-axes
  double fraction_gy = 2.0;

  bool operator==(const PhantomTruth&) const = default;
};

enum class Provenance { synthetic, ingested };

struct CohortManifest {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::vector<PatientRecord> patients;
  CohortStats stats;
  Provenance provenance = Provenance::synthetic;
  std::map<std::string, PhantomTruth> phantom_truth;
  std::filesystem::path root;  // directory the manifest lives in; not serialized

  const PatientRecord& patient(const std::string& id) const;
  std::filesystem::path resolve(const std::string& ref) const { return root / ref; }

  bool operator==(const CohortManifest& o) const {
    return format_version == o.format_version && patients == o.patients && stats == o.stats &&
           provenance == o.provenance && phantom_truth == o.phantom_truth;
  }
};

struct PhantomConfig {
  int n_patients = 24;
  GridShape grid{64, 64, 12};
  Spacing spacing{1.0, 1.0, 3.0};

  double followups_mean = 2.38;
  double followups_sd = 1.31;
  int followups_min = 1;
  int followups_max = 6;

  std::vector<double> fraction_sizes_gy{1.8, 2.0};
  double prescribed_dose_gy = 60.0;
  double max_cumulative_dose_gy = 68.4;
  double boost_probability = 0.25;

  double alpha_min = 0.6;
  double alpha_max = 1.0;
  double alpha_per_ct_stage = 0.10;  // relative increase per cT stage above 1

  double axis_xy_min_mm = 7.0;
  double axis_xy_max_mm = 10.0;
  double axis_z_min_mm = 6.0;
  double axis_z_max_mm = 9.0;
  double center_jitter_mm = 2.0;

  double background_hu = -800.0;
  double tumor_hu = 20.0;
  double texture_amplitude_hu = 30.0;
  double texture_correlation_vox = 1.5;

  double age_min = 45.0;
  double age_max = 85.0;
  int n_histology = 7;

  unsigned long long seed = 0;
  int workers = 1;

  /// Throws CohortError describing the first violated constraint.
  void validate() const;
};

/// V0 * exp(-alpha * dose / 60).
double shrinkage_law(double v0_mm3, double alpha, double dose_gy);

/// Semi-axis scale at a given dose; the cube of this equals the volume ratio.
double axis_scale(double alpha, double dose_gy);

double ground_truth_volume(const CohortManifest& cohort, const PatientRecord& patient,
                           double dose_gy);

/// Generates volumes, masks and manifest.json under out_dir.
CohortManifest generate_phantom_cohort(const PhantomConfig& config,
                                       const std::filesystem::path& out_dir);

/// Rasterises the tumour ellipsoid at a given dose: voxel is inside iff its
/// centre lies within the scaled ellipsoid.
Mask phantom_tumor_mask(const PhantomTruth& truth, double dose_gy, GridShape grid, Spacing spacing);

void save_cohort(const CohortManifest& cohort, const std::filesystem::path& manifest_path);

/// Loads and validates: reference resolution, dose monotonicity, baseline
/// presence, mask/volume shape agreement, stats consistency.
CohortManifest load_cohort(const std::filesystem::path& manifest_path);

/// Structural checks shared by load_cohort and the generator. Throws
/// CohortError naming the offending patient.
void validate_cohort(const CohortManifest& cohort, bool check_files);

CohortStats compute_stats(const std::vector<PatientRecord>& patients, int n_histology);

}  // namespace vt
