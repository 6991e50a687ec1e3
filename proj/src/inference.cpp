#include "vt/inference.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "vt/nn/tensor.hpp"
#include "vt/pairing.hpp"
#include "vt/parallel.hpp"
#include "vt/seed.hpp"

namespace vt {

using nlohmann::json;

namespace {

constexpr int kSliceChunk = 16;

}  // namespace

PatientContext load_patient_context(const PreprocessedCohort& cohort, const std::string& patient_id,
                                    const CohortStats& stats) {
  const PatientRecord* p = nullptr;
  try {
    p = &cohort.cohort.patient(patient_id);
  } catch (const std::exception&) {
    throw InferenceError("unknown patient '" + patient_id + "'");
  }
  if (p->scans.empty()) throw InferenceError("patient '" + patient_id + "' has no scans");
  PatientContext ctx;
  ctx.patient_id = patient_id;
  ctx.baseline = std::make_shared<const Volume>(load_volume(cohort.cohort.resolve(p->scans.front().volume_ref)));
  ctx.ctv = std::make_shared<const Mask>(load_mask(cohort.cohort.resolve(p->ctv_mask_ref)));
  ctx.clinical = encode_clinical(*p, stats);
  ctx.preprocess_fingerprint = cohort.fingerprint;
  return ctx;
}

Volume predict_followup(const LoadedModel& model, const Volume& baseline, const ClinicalEncoding& clinical,
                        double delta_gy, std::uint64_t seed, const std::string& volume_fingerprint) {
  const auto& meta = model.meta;
  if (volume_fingerprint != meta.preprocess_fingerprint)
    throw StatsMismatch("volume preprocessing (" + volume_fingerprint + ") does not match checkpoint '" +
                        meta.model_id + "' (" + meta.preprocess_fingerprint + ")");
  if (!(delta_gy >= 0) || !std::isfinite(delta_gy)) throw InferenceError("dose increment must be finite and >= 0");
  const auto h_vec = build_conditioning(clinical, delta_gy, meta.stats.dose_max);
  if (static_cast<int>(h_vec.size()) != meta.spec.condition_dim)
    throw StatsMismatch("clinical encoding has " + std::to_string(h_vec.size()) + " entries, checkpoint expects " +
                        std::to_string(meta.spec.condition_dim));

  const auto& g = baseline.shape();
  const int channels = meta.spec.in_channels;
  const std::size_t plane = g.slice_size();
  Volume out(g, baseline.spacing(), baseline.origin());
  nn::NoGradGuard ng;
  for (int k0 = 0; k0 < g.slices; k0 += kSliceChunk) {
    const int n = std::min(kSliceChunk, g.slices - k0);
    std::vector<float> in(static_cast<std::size_t>(n) * channels * plane), h;
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < n; ++s) {
      const int k = k0 + s;
      if (channels == 3) {
        const auto idx = triplet_indices(k, g.slices);
        for (int c = 0; c < 3; ++c)
          std::copy_n(baseline.slice(idx[c]).begin(), plane, in.begin() + static_cast<std::ptrdiff_t>((s * 3 + c) * plane));
      } else {
        std::copy_n(baseline.slice(k).begin(), plane, in.begin() + static_cast<std::ptrdiff_t>(s * plane));
      }
      h.insert(h.end(), h_vec.values.begin(), h_vec.values.end());
      seeds.push_back(mix_seed(seed, static_cast<std::uint64_t>(k)));
    }
    const auto pred = model.model->predict(nn::Tensor::from({n, channels, g.rows, g.cols}, std::move(in)),
                                           nn::Tensor::from({n, static_cast<int>(h_vec.size())}, std::move(h)), seeds);
    for (int s = 0; s < n; ++s)
      for (std::size_t i = 0; i < plane; ++i)
        out.slice(k0 + s)[i] = std::clamp(pred.data()[s * plane + i], 0.0f, 1.0f);
  }
  return out;
}

std::uint64_t entry_seed(std::uint64_t query_seed, double delta_gy) { return mix_seed(query_seed, delta_gy); }

Trajectory dose_response_trajectory(const LoadedModel& model, const PatientContext& patient, const DoseQuery& query,
                                    const SegmentOptions& segment, int roi_pad, int workers) {
  if (query.patient_id != patient.patient_id)
    throw InferenceError("query patient '" + query.patient_id + "' does not match context '" + patient.patient_id +
                         "'");
  for (double d : query.doses_gy)
    if (!(d >= 0) || !std::isfinite(d)) throw InferenceError("dose increments must be finite and >= 0");

  Trajectory t;
  t.patient_id = patient.patient_id;
  t.model_id = model.meta.model_id;
  t.seed = query.seed;
  t.entries.resize(query.doses_gy.size());
  const auto roi = LocalROI::from_mask(*patient.ctv, roi_pad);
  parallel_for(query.doses_gy.size(), workers, [&](std::size_t k) {
    auto& e = t.entries[k];
    e.delta_gy = query.doses_gy[k];
    e.seed = entry_seed(query.seed, e.delta_gy);
    e.extrapolated = e.delta_gy > model.meta.stats.dose_max;
    auto v = predict_followup(model, *patient.baseline, patient.clinical, e.delta_gy, e.seed,
                              patient.preprocess_fingerprint);
    e.volume_mm3 = tumor_volume_otsu(v, roi, segment);
    e.volume = std::make_shared<const Volume>(std::move(v));
  });
  for (const auto& e : t.entries)
    if (e.extrapolated)
      t.warnings.push_back("dose " + std::to_string(e.delta_gy) + " Gy exceeds the training maximum " +
                           std::to_string(model.meta.stats.dose_max) + " Gy (extrapolation)");
  return t;
}

std::string Trajectory::to_json() const {
  json entries_j = json::array();
  for (const auto& e : entries)
    entries_j.push_back({{"delta_gy", e.delta_gy},
                         {"volume_mm3", e.volume_mm3},
                         {"extrapolated", e.extrapolated},
                         {"seed", e.seed}});
  return json{{"patient_id", patient_id},
              {"model_id", model_id},
              {"seed", seed},
              {"entries", entries_j},
              {"warnings", warnings}}
      .dump(2);
}

}  // namespace vt
