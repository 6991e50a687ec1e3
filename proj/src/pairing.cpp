#include "vt/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

namespace vt {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

SplitAssignment split_patients(const CohortManifest& cohort, unsigned long long seed) {
  const int n = static_cast<int>(cohort.patients.size());
  if (n < 3) throw std::invalid_argument("patient-level split needs at least 3 patients, got " + std::to_string(n));
  std::vector<std::string> ids;
  for (const auto& p : cohort.patients) ids.push_back(p.patient_id);
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const int n_val = std::max(1, static_cast<int>(std::lround(0.05 * n)));
  const int n_test = std::max(1, static_cast<int>(std::lround(0.15 * n)));
  const int n_train = n - n_val - n_test;
  SplitAssignment out;
  for (int i = 0; i < n; ++i)
    out[ids[i]] = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
  return out;
}

CohortStats split_stats(const CohortManifest& cohort, const SplitAssignment& split, Split which) {
  std::vector<PatientRecord> members;
  for (const auto& p : cohort.patients) {
    auto it = split.find(p.patient_id);
    if (it != split.end() && it->second == which) members.push_back(p);
  }
  return compute_stats(members, cohort.stats.n_histology);
}

std::vector<TrainingTuple> enumerate_transitions(const CohortManifest& cohort, const SplitAssignment& split,
                                                 Split which, bool include_identity, const CohortStats& stats) {
  std::vector<TrainingTuple> out;
  for (const auto& p : cohort.patients) {
    auto it = split.find(p.patient_id);
    if (it == split.end() || it->second != which) continue;
    const auto clinical = encode_clinical(p, stats);
    auto make = [&](const ScanRecord& t, const ScanRecord& s) {
      TrainingTuple z;
      z.patient_id = p.patient_id;
      z.input_volume_ref = t.volume_ref;
      z.target_volume_ref = s.volume_ref;
      z.mask_ref = p.ctv_mask_ref;
      z.input_time_index = t.time_index;
      z.target_time_index = s.time_index;
      z.dose_increment_gy = s.cumulative_dose_gy - t.cumulative_dose_gy;
      z.clinical = clinical;
      z.is_identity = t.time_index == s.time_index;
      return z;
    };
    for (std::size_t s = 0; s < p.scans.size(); ++s) {
      if (include_identity) out.push_back(make(p.scans[s], p.scans[s]));
      for (std::size_t t = 0; t < s; ++t) out.push_back(make(p.scans[t], p.scans[s]));
    }
  }
  return out;
}

ConditioningVector build_conditioning(const ClinicalEncoding& clinical, double dose_increment_gy, double dose_max) {
  ConditioningVector h;
  h.values.reserve(clinical.size() + 1);
  for (float v : clinical.values) h.values.push_back(std::clamp(v, 0.0f, 1.0f));
  h.values.push_back(static_cast<float>(normalize_dose(dose_increment_gy, dose_max)));
  return h;
}

std::shared_ptr<const Volume> VolumeStore::volume(const std::string& patient_id, const std::string& ref) {
  std::lock_guard lock(mutex_);
  accessed_.insert(patient_id);
  auto& slot = volumes_[ref];
  if (!slot) slot = std::make_shared<const Volume>(load_volume(root_ / ref));
  return slot;
}

std::shared_ptr<const Mask> VolumeStore::mask(const std::string& patient_id, const std::string& ref) {
  std::lock_guard lock(mutex_);
  accessed_.insert(patient_id);
  auto& slot = masks_[ref];
  if (!slot) slot = std::make_shared<const Mask>(load_mask(root_ / ref));
  return slot;
}

std::set<std::string> VolumeStore::accessed_patients() const {
  std::lock_guard lock(mutex_);
  return accessed_;
}

std::array<int, 3> triplet_indices(int k, int n) {
  return {std::clamp(k - 1, 0, n - 1), k, std::clamp(k + 1, 0, n - 1)};
}

namespace {

struct TupleData {
  std::shared_ptr<const Volume> input, target;
  std::shared_ptr<const Mask> mask;
};

TupleData load_tuple(const TrainingTuple& z, VolumeStore& store) {
  TupleData d{store.volume(z.patient_id, z.input_volume_ref), store.volume(z.patient_id, z.target_volume_ref),
              store.mask(z.patient_id, z.mask_ref)};
  if (!(d.input->shape() == d.target->shape()) || !(d.input->shape() == d.mask->shape()))
    throw std::runtime_error("patient " + z.patient_id + ": input/target/mask grids are not aligned");
  return d;
}

SliceSample make_sample(const TrainingTuple& z, const TupleData& d, int k, SampleLayout layout, double dose_max) {
  const auto& s = d.input->shape();
  SliceSample out;
  out.rows = s.rows;
  out.cols = s.cols;
  out.slice = k;
  out.patient_id = z.patient_id;
  out.condition = build_conditioning(z.clinical, z.dose_increment_gy, dose_max);
  if (layout == SampleLayout::slice_2d) {
    out.channels = 1;
    auto src = d.input->slice(k);
    out.input.assign(src.begin(), src.end());
  } else {
    out.channels = 3;
    out.input.reserve(3 * s.slice_size());
    for (int idx : triplet_indices(k, s.slices)) {
      auto src = d.input->slice(idx);
      out.input.insert(out.input.end(), src.begin(), src.end());
    }
  }
  auto tgt = d.target->slice(k);
  out.target.assign(tgt.begin(), tgt.end());
  auto m = d.mask->slice(k);
  out.mask.resize(m.size());
  std::transform(m.begin(), m.end(), out.mask.begin(), [](std::uint8_t v) { return v ? 1.0f : 0.0f; });
  return out;
}

std::vector<SliceSample> all_samples(const TrainingTuple& z, VolumeStore& store, double dose_max, SampleLayout layout) {
  const auto d = load_tuple(z, store);
  std::vector<SliceSample> out;
  for (int k = 0; k < d.input->shape().slices; ++k) out.push_back(make_sample(z, d, k, layout, dose_max));
  return out;
}

}  // namespace

std::vector<SliceSample> slice_samples_2d(const TrainingTuple& tuple, VolumeStore& store, double dose_max) {
  return all_samples(tuple, store, dose_max, SampleLayout::slice_2d);
}

std::vector<SliceSample> triplet_samples_25d(const TrainingTuple& tuple, VolumeStore& store, double dose_max) {
  return all_samples(tuple, store, dose_max, SampleLayout::triplet_25d);
}

SliceDataset::SliceDataset(std::vector<TrainingTuple> tuples, std::shared_ptr<VolumeStore> store, double dose_max,
                           SampleLayout layout)
    : tuples_(std::move(tuples)), store_(std::move(store)), dose_max_(dose_max), layout_(layout) {
  for (std::size_t t = 0; t < tuples_.size(); ++t) {
    const auto v = store_->volume(tuples_[t].patient_id, tuples_[t].input_volume_ref);
    for (int k = 0; k < v->shape().slices; ++k) index_.emplace_back(t, k);
  }
}

SliceSample SliceDataset::get(std::size_t i) const {
  const auto [t, k] = index_.at(i);
  const auto& z = tuples_[t];
  return make_sample(z, load_tuple(z, *store_), k, layout_, dose_max_);
}

PairingResult build_pairs(const PreprocessedCohort& pre, unsigned long long seed, bool include_identity) {
  PairingResult r;
  r.split = split_patients(pre.cohort, seed);
  r.train_stats = split_stats(pre.cohort, r.split, Split::train);
  if (!(r.train_stats.dose_max > 0)) throw std::runtime_error("training split has no follow-up dose (dose_max = 0)");
  for (Split s : {Split::train, Split::val, Split::test})
    r.tuples[s] = enumerate_transitions(pre.cohort, r.split, s, include_identity, r.train_stats);
  return r;
}

namespace {

json tuple_to_json(const TrainingTuple& z) {
  return json{{"patient_id", z.patient_id},
              {"input_volume_ref", z.input_volume_ref},
              {"target_volume_ref", z.target_volume_ref},
              {"mask_ref", z.mask_ref},
              {"input_time_index", z.input_time_index},
              {"target_time_index", z.target_time_index},
              {"dose_increment_gy", z.dose_increment_gy},
              {"clinical", z.clinical.values},
              {"is_identity", z.is_identity}};
}

TrainingTuple tuple_from_json(const json& j) {
  TrainingTuple z;
  z.patient_id = j.at("patient_id").get<std::string>();
  z.input_volume_ref = j.at("input_volume_ref").get<std::string>();
  z.target_volume_ref = j.at("target_volume_ref").get<std::string>();
  z.mask_ref = j.at("mask_ref").get<std::string>();
  z.input_time_index = j.at("input_time_index").get<int>();
  z.target_time_index = j.at("target_time_index").get<int>();
  z.dose_increment_gy = j.at("dose_increment_gy").get<double>();
  z.clinical.values = j.at("clinical").get<std::vector<float>>();
  z.is_identity = j.at("is_identity").get<bool>();
  return z;
}

}  // namespace

void export_tuples_jsonl(const std::vector<TrainingTuple>& tuples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& z : tuples) out << tuple_to_json(z).dump() << '\n';
}

std::vector<TrainingTuple> import_tuples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<TrainingTuple> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(tuple_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_pairs(const PairingResult& pairs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json split = json::object();
  for (const auto& [id, s] : pairs.split) split[id] = to_string(s);
  json j{{"format_version", 1},
         {"split", split},
         {"train_stats",
          {{"age_min", pairs.train_stats.age_min},
           {"age_max", pairs.train_stats.age_max},
           {"dose_max", pairs.train_stats.dose_max},
           {"n_histology", pairs.train_stats.n_histology}}}};
  json files = json::object();
  for (const auto& [s, tuples] : pairs.tuples) {
    const std::string name = "tuples_" + to_string(s) + ".jsonl";
    export_tuples_jsonl(tuples, dir / name);
    files[to_string(s)] = {{"file", name}, {"count", tuples.size()}};
  }
  j["tuples"] = files;
  std::ofstream out(dir / "pairs.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "pairs.json").string());
  out << j.dump(2) << '\n';
}

PairingResult load_pairs(const std::filesystem::path& dir) {
  std::ifstream in(dir / "pairs.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "pairs.json").string());
  PairingResult r;
  try {
    const json j = json::parse(in);
    for (const auto& [id, s] : j.at("split").items()) r.split[id] = parse_split(s.get<std::string>());
    const auto& st = j.at("train_stats");
    r.train_stats.age_min = st.at("age_min").get<double>();
    r.train_stats.age_max = st.at("age_max").get<double>();
    r.train_stats.dose_max = st.at("dose_max").get<double>();
    r.train_stats.n_histology = st.at("n_histology").get<int>();
    for (const auto& [name, f] : j.at("tuples").items())
      r.tuples[parse_split(name)] = import_tuples_jsonl(dir / f.at("file").get<std::string>());
  } catch (const json::exception& e) {
    throw std::runtime_error((dir / "pairs.json").string() + ": " + e.what());
  }
  return r;
}

}  // namespace vt
