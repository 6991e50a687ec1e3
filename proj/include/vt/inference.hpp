#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vt/checkpoint.hpp"
#include "vt/evaluation.hpp"
#include "vt/preprocess.hpp"

namespace vt {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The volume was preprocessed differently from the checkpoint's training data.
class StatsMismatch : public InferenceError {
 public:
  using InferenceError::InferenceError;
};

/// A preprocessed baseline ready for querying.
struct PatientContext {
  std::string patient_id;
  std::shared_ptr<const Volume> baseline;
  std::shared_ptr<const Mask> ctv;
  ClinicalEncoding clinical;
  std::string preprocess_fingerprint;
};

/// Loads the baseline scan and CTV of one patient from a preprocessed cohort
/// and encodes its clinical vector with the checkpoint's stats.
PatientContext load_patient_context(const PreprocessedCohort& cohort, const std::string& patient_id,
                                    const CohortStats& stats);

/// Slice-wise (2D) or triplet-wise (2.5D) prediction at dose increment delta,
/// reassembled into a volume on the baseline grid. Slice k uses seed
/// mix(seed, k). Throws StatsMismatch when the fingerprints differ.
Volume predict_followup(const LoadedModel& model, const Volume& baseline, const ClinicalEncoding& clinical,
                        double delta_gy, std::uint64_t seed, const std::string& volume_fingerprint);

struct DoseQuery {
  std::string patient_id;
  std::vector<double> doses_gy;  // each relative to the baseline
  std::uint64_t seed = 0;
};

struct TrajectoryEntry {
  double delta_gy = 0.0;
  std::shared_ptr<const Volume> volume;
  double volume_mm3 = 0.0;
  bool extrapolated = false;
  std::uint64_t seed = 0;
};

struct Trajectory {
  std::string patient_id;
  std::string model_id;
  std::uint64_t seed = 0;
  std::vector<TrajectoryEntry> entries;  // query order
  std::vector<std::string> warnings;

  /// Summary without voxel data.
  std::string to_json() const;
};

/// Seed of the entry for dose delta; independent of its position in the query.
std::uint64_t entry_seed(std::uint64_t query_seed, double delta_gy);

/// Every entry is predicted from the baseline independently; Otsu volumes are
/// measured inside the baseline CTV box padded by roi_pad voxels.
Trajectory dose_response_trajectory(const LoadedModel& model, const PatientContext& patient, const DoseQuery& query,
                                    const SegmentOptions& segment = {}, int roi_pad = 0, int workers = 1);

}  // namespace vt
