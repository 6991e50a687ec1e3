#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "vt/cohort.hpp"
#include "vt/preprocess.hpp"

namespace vt {

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

using SplitAssignment = std::map<std::string, Split>;

/// Patient-level 80/5/15 split (val and test get at least one patient each).
/// Requires at least three patients.
SplitAssignment split_patients(const CohortManifest& cohort, unsigned long long seed);

/// Clinical normalisation stats derived from the patients of one split.
CohortStats split_stats(const CohortManifest& cohort, const SplitAssignment& split, Split which);

struct TrainingTuple {
  std::string patient_id;
  std::string input_volume_ref;
  std::string target_volume_ref;
  std::string mask_ref;
  int input_time_index = 0;
  int target_time_index = 0;
  double dose_increment_gy = 0.0;
  ClinicalEncoding clinical;
  bool is_identity = false;

  bool operator==(const TrainingTuple&) const = default;
};

/// All ordered pairs t < s per patient of the given split, plus one identity
/// pair per scan when include_identity is set.
std::vector<TrainingTuple> enumerate_transitions(const CohortManifest& cohort, const SplitAssignment& split,
                                                 Split which, bool include_identity, const CohortStats& stats);

/// h = (clinical, clamp(dose_increment / dose_max, 0, 1)).
struct ConditioningVector {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
  float dose() const { return values.back(); }
};

ConditioningVector build_conditioning(const ClinicalEncoding& clinical, double dose_increment_gy, double dose_max);

/// One training/inference sample on a single axial position.
struct SliceSample {
  std::vector<float> input;   // channels x rows x cols (1 for 2D, 3 for a triplet)
  std::vector<float> target;  // rows x cols
  std::vector<float> mask;    // rows x cols, baseline CTV
  ConditioningVector condition;
  int channels = 1;
  int rows = 0;
  int cols = 0;
  int slice = 0;
  std::string patient_id;
};

/// Read-through cache of preprocessed volumes and masks. Records every
/// patient whose data was read so callers can audit split isolation.
class VolumeStore {
 public:
  explicit VolumeStore(std::filesystem::path root) : root_(std::move(root)) {}

  std::shared_ptr<const Volume> volume(const std::string& patient_id, const std::string& ref);
  std::shared_ptr<const Mask> mask(const std::string& patient_id, const std::string& ref);
  std::set<std::string> accessed_patients() const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Volume>> volumes_;
  std::map<std::string, std::shared_ptr<const Mask>> masks_;
  std::set<std::string> accessed_;
};

std::vector<SliceSample> slice_samples_2d(const TrainingTuple& tuple, VolumeStore& store, double dose_max);

/// Clamped sliding window: triplet at k is (k-1, k, k+1) with indices clamped
/// to the volume; target is slice k of the target volume.
std::vector<SliceSample> triplet_samples_25d(const TrainingTuple& tuple, VolumeStore& store, double dose_max);

/// Indices of the clamped triplet centred on slice k of an n-slice volume.
std::array<int, 3> triplet_indices(int k, int n);

enum class SampleLayout { slice_2d, triplet_25d };

/// Flat index over (tuple, slice) with extraction deferred to get().
class SliceDataset {
 public:
  SliceDataset(std::vector<TrainingTuple> tuples, std::shared_ptr<VolumeStore> store, double dose_max,
               SampleLayout layout);

  std::size_t size() const { return index_.size(); }
  SliceSample get(std::size_t i) const;
  const std::vector<TrainingTuple>& tuples() const { return tuples_; }
  SampleLayout layout() const { return layout_; }
  double dose_max() const { return dose_max_; }
  VolumeStore& store() const { return *store_; }

 private:
  std::vector<TrainingTuple> tuples_;
  std::shared_ptr<VolumeStore> store_;
  double dose_max_;
  SampleLayout layout_;
  std::vector<std::pair<std::size_t, int>> index_;
};

/// Output of the pairing stage.
struct PairingResult {
  SplitAssignment split;
  CohortStats train_stats;
  std::map<Split, std::vector<TrainingTuple>> tuples;
};

PairingResult build_pairs(const PreprocessedCohort& cohort, unsigned long long seed, bool include_identity);

/// Writes pairs.json (split, stats) and one tuples_<split>.jsonl per split.
void save_pairs(const PairingResult& pairs, const std::filesystem::path& dir);
PairingResult load_pairs(const std::filesystem::path& dir);

void export_tuples_jsonl(const std::vector<TrainingTuple>& tuples, const std::filesystem::path& path);
std::vector<TrainingTuple> import_tuples_jsonl(const std::filesystem::path& path);

}  // namespace vt
