#include "vt/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vt/parallel.hpp"

namespace vt {

using nlohmann::json;

Volume clip_normalize_hu(const Volume& hu) {
  check_finite(hu);
  Volume out(hu.shape(), hu.spacing(), hu.origin());
  auto src = hu.data();
  auto dst = out.data();
  constexpr double range = kHuCeiling - kHuFloor;
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<float>((std::clamp<double>(src[i], kHuFloor, kHuCeiling) - kHuFloor) / range);
  return out;
}

Volume denormalize_to_hu(const Volume& normalized) {
  Volume out(normalized.shape(), normalized.spacing(), normalized.origin());
  auto src = normalized.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<float>(src[i] * (kHuCeiling - kHuFloor) + kHuFloor);
  return out;
}

namespace {

int resampled_dim(int n, double spacing, double target) {
  return std::max(1, static_cast<int>(std::lround(n * spacing / target)));
}

void check_target(const Spacing& t) {
  if (!(t.x > 0 && t.y > 0 && t.z > 0)) throw PreprocessError("target spacing must be positive");
}

// Edge-clamped linear sample along one axis: returns lower index and weight of upper.
struct Tap {
  int lo, hi;
  double w;
};

Tap linear_tap(double u, int n) {
  u = std::clamp(u, 0.0, static_cast<double>(n - 1));
  const int lo = static_cast<int>(std::floor(u));
  const int hi = std::min(lo + 1, n - 1);
  return {lo, hi, u - lo};
}

int nearest_index(double u, int n) {
  return std::clamp(static_cast<int>(std::floor(u + 0.5)), 0, n - 1);
}

}  // namespace

Volume resample(const Volume& v, Spacing target, Interpolation mode) {
  check_target(target);
  const auto& s = v.shape();
  const auto& sp = v.spacing();
  const GridShape out_shape{resampled_dim(s.rows, sp.y, target.y), resampled_dim(s.cols, sp.x, target.x),
                            resampled_dim(s.slices, sp.z, target.z)};
  Volume out(out_shape, target, v.origin());
  if (sp == target) {
    std::copy(v.data().begin(), v.data().end(), out.data().begin());
    return out;
  }
  for (int k = 0; k < out_shape.slices; ++k) {
    const double uz = k * target.z / sp.z;
    for (int i = 0; i < out_shape.rows; ++i) {
      const double uy = i * target.y / sp.y;
      for (int j = 0; j < out_shape.cols; ++j) {
        const double ux = j * target.x / sp.x;
        if (mode == Interpolation::nearest) {
          out.at(i, j, k) = v.at(nearest_index(uy, s.rows), nearest_index(ux, s.cols), nearest_index(uz, s.slices));
          continue;
        }
        const Tap tz = linear_tap(uz, s.slices), ty = linear_tap(uy, s.rows), tx = linear_tap(ux, s.cols);
        auto lerp_x = [&](int r, int z) {
          return (1 - tx.w) * v.at(r, tx.lo, z) + tx.w * v.at(r, tx.hi, z);
        };
        auto lerp_xy = [&](int z) { return (1 - ty.w) * lerp_x(ty.lo, z) + ty.w * lerp_x(ty.hi, z); };
        out.at(i, j, k) = static_cast<float>((1 - tz.w) * lerp_xy(tz.lo) + tz.w * lerp_xy(tz.hi));
      }
    }
  }
  return out;
}

Mask resample(const Mask& m, Spacing target) {
  return mask_from_volume(resample(volume_from_mask(m), target, Interpolation::nearest));
}

Box3 CropSpec::box_for(const std::string& patient_id) const {
  auto it = axial.find(patient_id);
  if (it == axial.end()) throw PreprocessError("no axial crop range for patient " + patient_id);
  return Box3{row_min, row_max, col_min, col_max, it->second.first, it->second.second};
}

CropSpec compute_crop_spec(const std::vector<std::pair<std::string, Mask>>& baseline_masks, CropOptions options) {
  if (baseline_masks.empty()) throw PreprocessError("cannot derive a crop from an empty cohort");
  if (options.margin < 0 || options.align < 1) throw PreprocessError("invalid crop options");

  CropSpec spec;
  const GridShape grid = baseline_masks.front().second.shape();
  std::size_t best_area = 0;
  Box3 largest;
  std::vector<Box3> boxes;
  for (const auto& [id, mask] : baseline_masks) {
    if (!(mask.shape().rows == grid.rows && mask.shape().cols == grid.cols))
      throw PreprocessError("patient " + id + ": in-plane grid differs from the rest of the cohort");
    const Box3 box = bounding_box(mask);
    if (box.empty()) throw PreprocessError("patient " + id + ": empty baseline CTV mask");
    // Footprint area: number of in-plane positions covered on any slice.
    std::size_t area = 0;
    for (int i = box.row_min; i <= box.row_max; ++i)
      for (int j = box.col_min; j <= box.col_max; ++j)
        for (int k = box.slice_min; k <= box.slice_max; ++k)
          if (mask.at(i, j, k)) {
            ++area;
            break;
          }
    if (area > best_area) {
      best_area = area;
      largest = box;
    }
    boxes.push_back(box);
    spec.axial[id] = {box.slice_min, box.slice_max};
  }

  spec.row_min = largest.row_min;
  spec.row_max = largest.row_max;
  spec.col_min = largest.col_min;
  spec.col_max = largest.col_max;
  for (const auto& b : boxes) {
    spec.row_min = std::min(spec.row_min, b.row_min);
    spec.row_max = std::max(spec.row_max, b.row_max);
    spec.col_min = std::min(spec.col_min, b.col_min);
    spec.col_max = std::max(spec.col_max, b.col_max);
  }

  auto grow = [&](int& lo, int& hi, int n) {
    lo -= options.margin;
    hi += options.margin;
    int len = hi - lo + 1;
    const int want = (len + options.align - 1) / options.align * options.align;
    const int extra = want - len;
    lo -= extra / 2;
    hi += extra - extra / 2;
    len = hi - lo + 1;
    if (len > n) {
      // Largest aligned extent that fits.
      len = std::max(options.align, n / options.align * options.align);
      len = std::min(len, n);
      const int center = (lo + hi) / 2;
      lo = center - len / 2;
      hi = lo + len - 1;
    }
    if (lo < 0) {
      hi -= lo;
      lo = 0;
    }
    if (hi > n - 1) {
      lo -= hi - (n - 1);
      hi = n - 1;
    }
    lo = std::max(lo, 0);
  };
  grow(spec.row_min, spec.row_max, grid.rows);
  grow(spec.col_min, spec.col_max, grid.cols);
  return spec;
}

ClinicalEncoding encode_clinical(const PatientRecord& r, const CohortStats& stats) {
  if (r.histology < 0 || r.histology >= stats.n_histology)
    throw PreprocessError("patient " + r.patient_id + ": histology index " + std::to_string(r.histology) +
                          " outside [0, " + std::to_string(stats.n_histology) + ")");
  ClinicalEncoding e;
  e.values.reserve(clinical_dimension(stats.n_histology));
  const double span = stats.age_max - stats.age_min;
  const double age = span > 0 ? (r.age_years - stats.age_min) / span : 0.0;
  e.values.push_back(static_cast<float>(std::clamp(age, 0.0, 1.0)));
  e.values.push_back(r.sex ? 1.0f : 0.0f);
  for (int h = 0; h < stats.n_histology; ++h) e.values.push_back(h == r.histology ? 1.0f : 0.0f);
  e.values.push_back(static_cast<float>(std::clamp((r.ct_stage - 1) / 3.0, 0.0, 1.0)));
  e.values.push_back(static_cast<float>(std::clamp(r.cn_stage / 3.0, 0.0, 1.0)));
  return e;
}

double normalize_dose(double dose_gy, double dose_max) {
  if (!(dose_max > 0)) throw PreprocessError("dose_max must be positive");
  return std::clamp(dose_gy / dose_max, 0.0, 1.0);
}

std::string preprocess_fingerprint(const Spacing& sp, const CropSpec& crop) {
  std::ostringstream os;
  os << "hu[" << kHuFloor << "," << kHuCeiling << "];spacing[" << sp.x << "," << sp.y << "," << sp.z
     << "];box[" << crop.row_min << "-" << crop.row_max << "," << crop.col_min << "-" << crop.col_max << "]";
  return os.str();
}

PreprocessedCohort preprocess_cohort(const CohortManifest& raw, const PreprocessOptions& options,
                                     const std::filesystem::path& out_dir, int workers) {
  check_target(options.target_spacing);
  std::filesystem::create_directories(out_dir / "volumes");
  std::filesystem::create_directories(out_dir / "masks");

  std::vector<std::pair<std::string, Mask>> masks(raw.patients.size());
  parallel_for(raw.patients.size(), workers, [&](std::size_t i) {
    const auto& p = raw.patients[i];
    masks[i] = {p.patient_id, resample(load_mask(raw.resolve(p.ctv_mask_ref)), options.target_spacing)};
  });

  PreprocessedCohort out;
  out.spacing = options.target_spacing;
  out.cohort = raw;
  out.cohort.root = out_dir;
  if (raw.patients.empty()) {
    out.fingerprint = preprocess_fingerprint(out.spacing, out.crop);
    return out;
  }
  out.crop = compute_crop_spec(masks, options.crop);
  out.fingerprint = preprocess_fingerprint(out.spacing, out.crop);

  parallel_for(raw.patients.size(), workers, [&](std::size_t i) {
    auto& p = out.cohort.patients[i];
    const Box3 box = out.crop.box_for(p.patient_id);
    const auto mask = crop(masks[i].second, box);
    p.ctv_mask_ref = "masks/" + p.patient_id + "_ctv.hdr";
    save_mask(mask, out_dir / p.ctv_mask_ref);
    for (auto& s : p.scans) {
      const auto hu = load_volume(raw.resolve(s.volume_ref));
      const auto norm = clip_normalize_hu(resample(hu, options.target_spacing, Interpolation::linear));
      if (!(norm.shape() == masks[i].second.shape()))
        throw PreprocessError("patient " + p.patient_id + ": mask/volume shape mismatch after resampling");
      s.volume_ref = "volumes/" + p.patient_id + "_scan" + std::to_string(s.time_index) + ".hdr";
      save_volume(crop(norm, box), out_dir / s.volume_ref);
    }
  });
  save_preprocessed(out, out_dir / "preprocess.json");
  return out;
}

void save_preprocessed(const PreprocessedCohort& p, const std::filesystem::path& path) {
  const auto dir = path.parent_path();
  save_cohort(p.cohort, dir / "manifest.json");
  json axial = json::object();
  for (const auto& [id, r] : p.crop.axial) axial[id] = {r.first, r.second};
  json j{{"format_version", 1},
         {"manifest", "manifest.json"},
         {"spacing", {p.spacing.x, p.spacing.y, p.spacing.z}},
         {"hu_window", {kHuFloor, kHuCeiling}},
         {"crop",
          {{"row_min", p.crop.row_min},
           {"row_max", p.crop.row_max},
           {"col_min", p.crop.col_min},
           {"col_max", p.crop.col_max},
           {"axial", axial}}},
         {"fingerprint", p.fingerprint}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PreprocessError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

PreprocessedCohort load_preprocessed(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PreprocessError("cannot open " + path.string());
  PreprocessedCohort p;
  try {
    const json j = json::parse(in);
    p.cohort = load_cohort(path.parent_path() / j.at("manifest").get<std::string>());
    const auto sp = j.at("spacing").get<std::vector<double>>();
    p.spacing = {sp.at(0), sp.at(1), sp.at(2)};
    const auto& c = j.at("crop");
    p.crop.row_min = c.at("row_min").get<int>();
    p.crop.row_max = c.at("row_max").get<int>();
    p.crop.col_min = c.at("col_min").get<int>();
    p.crop.col_max = c.at("col_max").get<int>();
    for (const auto& [id, r] : c.at("axial").items()) p.crop.axial[id] = {r.at(0).get<int>(), r.at(1).get<int>()};
    p.fingerprint = j.at("fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw PreprocessError(path.string() + ": " + e.what());
  }
  return p;
}

}  // namespace vt
