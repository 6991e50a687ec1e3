#include "vt/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vt/parallel.hpp"

namespace vt {

using nlohmann::json;

namespace {

constexpr double kReferenceDoseGy = 60.0;

std::string provenance_name(Provenance p) {
  return p == Provenance::synthetic ? "synthetic" : "ingested";
}

Provenance parse_provenance(const std::string& s) {
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "ingested") return Provenance::ingested;
  throw CohortError("unknown provenance '" + s + "'");
}

std::string patient_error(const PatientRecord& p, const std::string& what) {
  return "patient " + p.patient_id + ": " + what;
}

// Gaussian smoothing along one axis of a slice-major grid, clamped edges.
void blur_axis(std::vector<float>& data, GridShape s, int axis, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int t = -radius; t <= radius; ++t) sum += kernel[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
  for (auto& k : kernel) k /= sum;

  const int n = axis == 0 ? s.rows : axis == 1 ? s.cols : s.slices;
  std::vector<float> out(data.size());
  auto idx = [&](int i, int j, int k) {
    return (static_cast<std::size_t>(k) * s.rows + i) * s.cols + j;
  };
  for (int k = 0; k < s.slices; ++k)
    for (int i = 0; i < s.rows; ++i)
      for (int j = 0; j < s.cols; ++j) {
        double acc = 0;
        for (int t = -radius; t <= radius; ++t) {
          int ii = i, jj = j, kk = k;
          int& c = axis == 0 ? ii : axis == 1 ? jj : kk;
          c = std::clamp(c + t, 0, n - 1);
          acc += kernel[t + radius] * data[idx(ii, jj, kk)];
        }
        out[idx(i, j, k)] = static_cast<float>(acc);
      }
  data.swap(out);
}

// Band-limited texture with unit standard deviation, clamped to +-2.5.
std::vector<float> make_texture(GridShape s, Spacing sp, double correlation_vox, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> t(s.voxel_count());
  for (auto& v : t) v = normal(rng);
  blur_axis(t, s, 0, correlation_vox);
  blur_axis(t, s, 1, correlation_vox);
  blur_axis(t, s, 2, correlation_vox * sp.x / sp.z);
  double mean = 0, sq = 0;
  for (auto v : t) mean += v;
  mean /= static_cast<double>(t.size());
  for (auto v : t) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(t.size()));
  for (auto& v : t) v = std::clamp(static_cast<float>((v - mean) / (sd > 0 ? sd : 1.0)), -2.5f, 2.5f);
  return t;
}

struct GeneratedPatient {
  PatientRecord record;
  PhantomTruth truth;
};

GeneratedPatient generate_patient(const PhantomConfig& cfg, int index, const std::filesystem::path& out_dir) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(cfg.seed >> 32), static_cast<std::uint32_t>(index),
                    0x5eed7u};
  std::mt19937_64 rng(seq);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  GeneratedPatient gp;
  auto& rec = gp.record;
  std::ostringstream id;
  id << "P" << std::setw(4) << std::setfill('0') << index;
  rec.patient_id = id.str();
  rec.age_years = std::round(uniform(cfg.age_min, cfg.age_max) * 10.0) / 10.0;
  rec.sex = uniform_int(0, 1);
  rec.histology = uniform_int(0, cfg.n_histology - 1);
  rec.ct_stage = uniform_int(1, 4);
  rec.cn_stage = uniform_int(0, 3);

  auto& truth = gp.truth;
  truth.fraction_gy = cfg.fraction_sizes_gy[uniform_int(0, static_cast<int>(cfg.fraction_sizes_gy.size()) - 1)];
  truth.alpha = uniform(cfg.alpha_min, cfg.alpha_max) * (1.0 + cfg.alpha_per_ct_stage * (rec.ct_stage - 1));
  truth.axes_mm = {uniform(cfg.axis_xy_min_mm, cfg.axis_xy_max_mm),
                   uniform(cfg.axis_xy_min_mm, cfg.axis_xy_max_mm),
                   uniform(cfg.axis_z_min_mm, cfg.axis_z_max_mm)};
  truth.v0_mm3 = 4.0 / 3.0 * std::numbers::pi * truth.axes_mm[0] * truth.axes_mm[1] * truth.axes_mm[2];
  const double extent[3] = {cfg.grid.cols * cfg.spacing.x, cfg.grid.rows * cfg.spacing.y,
                            cfg.grid.slices * cfg.spacing.z};
  for (int a = 0; a < 3; ++a) {
    const double jitter = a < 2 ? uniform(-cfg.center_jitter_mm, cfg.center_jitter_mm) : 0.0;
    truth.center_mm[a] = extent[a] / 2.0 + jitter;
  }

  // Follow-up schedule in whole fractions.
  const int prescribed = static_cast<int>(std::lround(cfg.prescribed_dose_gy / truth.fraction_gy));
  const int hard_max = static_cast<int>(std::floor(cfg.max_cumulative_dose_gy / truth.fraction_gy + 1e-9));
  int total = std::min(prescribed, hard_max);
  if (uniform(0, 1) < cfg.boost_probability && hard_max > total) total = uniform_int(total + 1, hard_max);
  const int n_follow = std::clamp(
      static_cast<int>(std::lround(std::normal_distribution<double>(cfg.followups_mean, cfg.followups_sd)(rng))),
      cfg.followups_min, std::min(cfg.followups_max, total));
  std::set<int> fractions;
  while (static_cast<int>(fractions.size()) < n_follow) fractions.insert(uniform_int(1, total));

  std::vector<double> doses{0.0};
  for (int f : fractions) doses.push_back(std::round(f * truth.fraction_gy * 1e6) / 1e6);

  const auto texture = make_texture(cfg.grid, cfg.spacing, cfg.texture_correlation_vox, rng);
  for (std::size_t j = 0; j < doses.size(); ++j) {
    const auto mask = phantom_tumor_mask(truth, doses[j], cfg.grid, cfg.spacing);
    Volume vol(cfg.grid, cfg.spacing);
    auto vd = vol.data();
    auto md = mask.data();
    for (std::size_t i = 0; i < vd.size(); ++i)
      vd[i] = static_cast<float>((md[i] ? cfg.tumor_hu : cfg.background_hu) +
                                 cfg.texture_amplitude_hu * texture[i]);
    const std::string ref = "volumes/" + rec.patient_id + "_scan" + std::to_string(j) + ".hdr";
    save_volume(vol, out_dir / ref);
    rec.scans.push_back({static_cast<int>(j), doses[j], ref});
    if (j == 0) {
      rec.ctv_mask_ref = "masks/" + rec.patient_id + "_ctv.hdr";
      save_mask(mask, out_dir / rec.ctv_mask_ref);
    }
  }
  return gp;
}

json truth_to_json(const PhantomTruth& t) {
  return json{{"v0_mm3", t.v0_mm3},
              {"alpha", t.alpha},
              {"center_mm", t.center_mm},
              {"axes_mm", t.axes_mm},
              {"fraction_gy", t.fraction_gy}};
}

PhantomTruth truth_from_json(const json& j) {
  PhantomTruth t;
  t.v0_mm3 = j.at("v0_mm3").get<double>();
  t.alpha = j.at("alpha").get<double>();
  t.center_mm = j.at("center_mm").get<std::array<double, 3>>();
  t.axes_mm = j.at("axes_mm").get<std::array<double, 3>>();
  t.fraction_gy = j.at("fraction_gy").get<double>();
  return t;
}

}  // namespace

const PatientRecord& CohortManifest::patient(const std::string& id) const {
  for (const auto& p : patients)
    if (p.patient_id == id) return p;
  throw CohortError("unknown patient " + id);
}

void PhantomConfig::validate() const {
  auto fail = [](const std::string& m) { throw CohortError("invalid phantom config: " + m); };
  if (n_patients < 0) fail("n_patients < 0");
  if (grid.rows < 1 || grid.cols < 1 || grid.slices < 1) fail("grid dimensions must be >= 1");
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) fail("spacing must be positive");
  if (followups_min < 0 || followups_max < followups_min) fail("follow-up count range is empty");
  if (fraction_sizes_gy.empty()) fail("no fraction sizes");
  for (double f : fraction_sizes_gy)
    if (!(f > 0) || f > max_cumulative_dose_gy) fail("fraction size outside (0, max dose]");
  if (!(alpha_min >= 0 && alpha_max >= alpha_min)) fail("alpha range is empty");
  if (!(axis_xy_min_mm > 0 && axis_xy_max_mm >= axis_xy_min_mm)) fail("in-plane axis range is empty");
  if (!(axis_z_min_mm > 0 && axis_z_max_mm >= axis_z_min_mm)) fail("axial axis range is empty");
  if (!(age_max >= age_min)) fail("age range is empty");
  if (n_histology < 1) fail("n_histology must be >= 1");
  if (texture_amplitude_hu < 0) fail("texture amplitude must be >= 0");
  if (2.5 * texture_amplitude_hu * 2 >= tumor_hu - background_hu)
    fail("texture amplitude too large for tumour/background contrast");

  // The largest tumour plus centre jitter must fit strictly inside the grid.
  const double half_x = grid.cols * spacing.x / 2.0, half_y = grid.rows * spacing.y / 2.0,
               half_z = grid.slices * spacing.z / 2.0;
  if (axis_xy_max_mm + center_jitter_mm >= half_x || axis_xy_max_mm + center_jitter_mm >= half_y ||
      axis_z_max_mm >= half_z) {
    std::ostringstream msg;
    msg << "grid " << grid.rows << "x" << grid.cols << "x" << grid.slices
        << " too small for tumour semi-axes up to (" << axis_xy_max_mm << ", " << axis_xy_max_mm
        << ", " << axis_z_max_mm << ") mm with " << center_jitter_mm << " mm jitter";
    fail(msg.str());
  }
}

double shrinkage_law(double v0_mm3, double alpha, double dose_gy) {
  return v0_mm3 * std::exp(-alpha * dose_gy / kReferenceDoseGy);
}

double axis_scale(double alpha, double dose_gy) {
  return std::exp(-alpha * dose_gy / (3.0 * kReferenceDoseGy));
}

double ground_truth_volume(const CohortManifest& cohort, const PatientRecord& patient, double dose_gy) {
  if (cohort.provenance != Provenance::synthetic)
    throw UnsupportedOperation("ground truth volume is only defined for synthetic cohorts");
  auto it = cohort.phantom_truth.find(patient.patient_id);
  if (it == cohort.phantom_truth.end())
    throw CohortError(patient_error(patient, "no phantom truth recorded"));
  return shrinkage_law(it->second.v0_mm3, it->second.alpha, dose_gy);
}

Mask phantom_tumor_mask(const PhantomTruth& truth, double dose_gy, GridShape grid, Spacing sp) {
  Mask m(grid, sp);
  const double s = axis_scale(truth.alpha, dose_gy);
  const double ax = truth.axes_mm[0] * s, ay = truth.axes_mm[1] * s, az = truth.axes_mm[2] * s;
  for (int k = 0; k < grid.slices; ++k) {
    const double dz = ((k + 0.5) * sp.z - truth.center_mm[2]) / az;
    for (int i = 0; i < grid.rows; ++i) {
      const double dy = ((i + 0.5) * sp.y - truth.center_mm[1]) / ay;
      for (int j = 0; j < grid.cols; ++j) {
        const double dx = ((j + 0.5) * sp.x - truth.center_mm[0]) / ax;
        m.at(i, j, k) = dx * dx + dy * dy + dz * dz <= 1.0 ? 1 : 0;
      }
    }
  }
  return m;
}

CohortStats compute_stats(const std::vector<PatientRecord>& patients, int n_histology) {
  CohortStats st;
  st.n_histology = n_histology;
  if (patients.empty()) return st;
  st.age_min = st.age_max = patients.front().age_years;
  for (const auto& p : patients) {
    st.age_min = std::min(st.age_min, p.age_years);
    st.age_max = std::max(st.age_max, p.age_years);
    for (const auto& s : p.scans) st.dose_max = std::max(st.dose_max, s.cumulative_dose_gy);
  }
  return st;
}

CohortManifest generate_phantom_cohort(const PhantomConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir / "volumes");
  std::filesystem::create_directories(out_dir / "masks");

  std::vector<GeneratedPatient> generated(static_cast<std::size_t>(config.n_patients));
  parallel_for(generated.size(), config.workers, [&](std::size_t i) {
    generated[i] = generate_patient(config, static_cast<int>(i), out_dir);
  });

  CohortManifest cohort;
  cohort.provenance = Provenance::synthetic;
  cohort.root = out_dir;
  for (auto& g : generated) {
    cohort.phantom_truth[g.record.patient_id] = g.truth;
    cohort.patients.push_back(std::move(g.record));
  }
  cohort.stats = compute_stats(cohort.patients, config.n_histology);
  validate_cohort(cohort, false);
  save_cohort(cohort, out_dir / "manifest.json");
  return cohort;
}

void validate_cohort(const CohortManifest& cohort, bool check_files) {
  std::set<std::string> ids;
  for (const auto& p : cohort.patients) {
    if (!ids.insert(p.patient_id).second) throw CohortError(patient_error(p, "duplicate patient id"));
    if (p.scans.empty()) throw CohortError(patient_error(p, "missing baseline scan"));
    if (p.scans.front().time_index != 0) throw CohortError(patient_error(p, "missing baseline scan (time index 0)"));
    if (p.scans.front().cumulative_dose_gy != 0.0)
      throw CohortError(patient_error(p, "baseline scan must have cumulative dose 0"));
    for (std::size_t j = 1; j < p.scans.size(); ++j) {
      if (p.scans[j].time_index <= p.scans[j - 1].time_index)
        throw CohortError(patient_error(p, "non-increasing time index"));
      if (p.scans[j].cumulative_dose_gy < p.scans[j - 1].cumulative_dose_gy)
        throw CohortError(patient_error(p, "non-monotone dose"));
    }
    for (const auto& s : p.scans)
      if (!std::isfinite(s.cumulative_dose_gy) || s.cumulative_dose_gy < 0)
        throw CohortError(patient_error(p, "invalid cumulative dose"));
    if (p.histology < 0 || p.histology >= cohort.stats.n_histology)
      throw CohortError(patient_error(p, "histology index outside [0, n_histology)"));
    if (p.ct_stage < 1 || p.ct_stage > 4) throw CohortError(patient_error(p, "cT stage outside 1..4"));
    if (p.cn_stage < 0 || p.cn_stage > 3) throw CohortError(patient_error(p, "cN stage outside 0..3"));
    if (p.sex != 0 && p.sex != 1) throw CohortError(patient_error(p, "sex must be 0 or 1"));
    if (p.ctv_mask_ref.empty()) throw CohortError(patient_error(p, "missing baseline CTV mask reference"));
    if (cohort.provenance == Provenance::synthetic && !cohort.phantom_truth.count(p.patient_id))
      throw CohortError(patient_error(p, "synthetic patient without phantom truth"));

    if (check_files) {
      auto exists = [&](const std::string& ref, const char* what) {
        const auto hdr = cohort.resolve(ref);
        auto raw = hdr;
        raw.replace_extension(".raw");
        if (!std::filesystem::exists(hdr) || !std::filesystem::exists(raw))
          throw CohortError(patient_error(p, std::string("dangling ") + what + " reference '" + ref + "'"));
      };
      exists(p.ctv_mask_ref, "mask");
      for (const auto& s : p.scans) exists(s.volume_ref, "volume");
      const auto mask = load_mask(cohort.resolve(p.ctv_mask_ref));
      for (const auto& s : p.scans) {
        const auto v = load_volume(cohort.resolve(s.volume_ref));
        if (!(v.shape() == mask.shape()))
          throw CohortError(patient_error(p, "mask/volume shape mismatch for " + s.volume_ref));
      }
    }
  }
  const auto expected = compute_stats(cohort.patients, cohort.stats.n_histology);
  if (!cohort.patients.empty() && !(expected == cohort.stats))
    throw CohortError("cohort_stats inconsistent with patient records");
}

void save_cohort(const CohortManifest& cohort, const std::filesystem::path& manifest_path) {
  json j;
  j["format_version"] = cohort.format_version;
  j["provenance"] = provenance_name(cohort.provenance);
  j["cohort_stats"] = {{"age_min", cohort.stats.age_min},
                       {"age_max", cohort.stats.age_max},
                       {"dose_max", cohort.stats.dose_max},
                       {"n_histology", cohort.stats.n_histology}};
  j["patients"] = json::array();
  for (const auto& p : cohort.patients) {
    json scans = json::array();
    for (const auto& s : p.scans)
      scans.push_back({{"time_index", s.time_index},
                       {"cumulative_dose_gy", s.cumulative_dose_gy},
                       {"volume_ref", s.volume_ref}});
    j["patients"].push_back({{"patient_id", p.patient_id},
                             {"age_years", p.age_years},
                             {"sex", p.sex},
                             {"histology", p.histology},
                             {"ct_stage", p.ct_stage},
                             {"cn_stage", p.cn_stage},
                             {"ctv_mask_ref", p.ctv_mask_ref},
                             {"scans", scans}});
  }
  if (!cohort.phantom_truth.empty()) {
    json truth = json::object();
    for (const auto& [id, t] : cohort.phantom_truth) truth[id] = truth_to_json(t);
    j["phantom_truth"] = truth;
  }
  if (!manifest_path.parent_path().empty()) std::filesystem::create_directories(manifest_path.parent_path());
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw CohortError("cannot write " + manifest_path.string());
  out << j.dump(2) << '\n';
}

CohortManifest load_cohort(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw CohortError("cannot open cohort manifest " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CohortError(manifest_path.string() + ": " + e.what());
  }

  CohortManifest c;
  c.root = manifest_path.parent_path();
  try {
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != CohortManifest::kFormatVersion)
      throw CohortError("unsupported manifest format_version " + std::to_string(c.format_version));
    c.provenance = parse_provenance(j.at("provenance").get<std::string>());
    const auto& st = j.at("cohort_stats");
    c.stats.age_min = st.at("age_min").get<double>();
    c.stats.age_max = st.at("age_max").get<double>();
    c.stats.dose_max = st.at("dose_max").get<double>();
    c.stats.n_histology = st.at("n_histology").get<int>();
    for (const auto& jp : j.at("patients")) {
      PatientRecord p;
      p.patient_id = jp.at("patient_id").get<std::string>();
      p.age_years = jp.at("age_years").get<double>();
      p.sex = jp.at("sex").get<int>();
      p.histology = jp.at("histology").get<int>();
      p.ct_stage = jp.at("ct_stage").get<int>();
      p.cn_stage = jp.at("cn_stage").get<int>();
      p.ctv_mask_ref = jp.at("ctv_mask_ref").get<std::string>();
      for (const auto& js : jp.at("scans"))
        p.scans.push_back({js.at("time_index").get<int>(), js.at("cumulative_dose_gy").get<double>(),
                           js.at("volume_ref").get<std::string>()});
      c.patients.push_back(std::move(p));
    }
    if (j.contains("phantom_truth"))
      for (const auto& [id, jt] : j.at("phantom_truth").items()) c.phantom_truth[id] = truth_from_json(jt);
  } catch (const json::exception& e) {
    throw CohortError(manifest_path.string() + ": schema violation: " + e.what());
  }
  validate_cohort(c, true);
  return c;
}

}  // namespace vt
