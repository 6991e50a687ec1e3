#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "vt/cohort.hpp"
#include "vt/evaluation.hpp"

using namespace vt;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

PhantomConfig small_phantom(int n, unsigned long long seed) {
  PhantomConfig c;
  c.n_patients = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("shrinkage law closed form") {
  CHECK(shrinkage_law(1000, 1.2, 60) == doctest::Approx(1000 * std::exp(-1.2)));
  CHECK(shrinkage_law(1000, 1.2, 60) == doctest::Approx(301.194).epsilon(1e-5));
  CHECK(shrinkage_law(1000, 0.7, 0) == 1000.0);
  CHECK(shrinkage_law(1000, 0.0, 45) == 1000.0);
  CHECK(shrinkage_law(800, 0.8, 10) > shrinkage_law(800, 0.8, 20));
  const double s = axis_scale(0.9, 33);
  CHECK(s * s * s == doctest::Approx(std::exp(-0.9 * 33 / 60.0)));
}

TEST_CASE("phantom generation is byte-deterministic") {
  const auto a = oracle::scratch_dir("cohort_a"), b = oracle::scratch_dir("cohort_b");
  const auto ca = generate_phantom_cohort(small_phantom(4, 21), a);
  const auto cb = generate_phantom_cohort(small_phantom(4, 21), b);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  for (const auto& p : ca.patients)
    for (const auto& s : p.scans) {
      CHECK(slurp(a / s.volume_ref) == slurp(b / s.volume_ref));
      const auto raw = s.volume_ref.substr(0, s.volume_ref.size() - 4) + ".raw";
      if (std::filesystem::exists(a / raw)) CHECK(slurp(a / raw) == slurp(b / raw));
    }
  const auto cc = generate_phantom_cohort(small_phantom(4, 22), oracle::scratch_dir("cohort_c"));
  CHECK_FALSE(cc.phantom_truth == ca.phantom_truth);
}

TEST_CASE("phantom schedules respect fractionation and dose bounds") {
  const auto c = generate_phantom_cohort(small_phantom(30, 5), oracle::scratch_dir("cohort_sched"));
  for (const auto& p : c.patients) {
    REQUIRE_FALSE(p.scans.empty());
    CHECK(p.scans.front().cumulative_dose_gy == 0.0);
    const double f = c.phantom_truth.at(p.patient_id).fraction_gy;
    CHECK((f == 1.8 || f == 2.0));
    for (std::size_t j = 0; j < p.scans.size(); ++j) {
      const double d = p.scans[j].cumulative_dose_gy;
      CHECK(d <= 68.4 + 1e-9);
      CHECK(std::abs(d / f - std::round(d / f)) < 1e-6);
      if (j) {
        CHECK(p.scans[j].time_index > p.scans[j - 1].time_index);
        CHECK(d >= p.scans[j - 1].cumulative_dose_gy);
      }
    }
  }
  CHECK(c.stats.dose_max > 0);
}

TEST_CASE("rasterised and Otsu volumes stay within the voxel-shell bound") {
  const auto cfg = small_phantom(6, 9);
  const auto c = generate_phantom_cohort(cfg, oracle::scratch_dir("cohort_shell"));
  const double vox = cfg.spacing.voxel_volume();
  for (const auto& p : c.patients) {
    const auto& truth = c.phantom_truth.at(p.patient_id);
    const auto roi = LocalROI::from_mask(load_mask(c.resolve(p.ctv_mask_ref)));
    for (const auto& s : p.scans) {
      const double analytic = ground_truth_volume(c, p, s.cumulative_dose_gy);
      const double bound = oracle::shell_voxels(truth, s.cumulative_dose_gy, cfg.grid, cfg.spacing) * vox;
      const auto mask = phantom_tumor_mask(truth, s.cumulative_dose_gy, cfg.grid, cfg.spacing);
      CHECK(std::abs(count_nonzero(mask) * vox - analytic) <= bound);
      const double otsu = tumor_volume_otsu(load_volume(c.resolve(s.volume_ref)), roi);
      CHECK(std::abs(otsu - analytic) <= bound);
    }
  }
}

TEST_CASE("ground truth refuses ingested cohorts") {
  CohortManifest m;
  m.provenance = Provenance::ingested;
  PatientRecord p;
  p.patient_id = "X";
  CHECK_THROWS_AS(ground_truth_volume(m, p, 10), UnsupportedOperation);
}

TEST_CASE("invalid phantom configs are rejected with a diagnostic") {
  auto c = small_phantom(2, 1);
  c.grid = {16, 16, 4};
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("too small"), CohortError);
  c = small_phantom(2, 1);
  c.alpha_max = 0.1;
  CHECK_THROWS_AS(c.validate(), CohortError);
}

TEST_CASE("volume round-trip and truncation") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-1000, 1000);
  Volume v({5, 6, 7}, {1, 1, 3}, {1.5, -2, 4});
  for (auto& x : v.data()) x = u(rng);
  const auto dir = oracle::scratch_dir("volume_rt");
  save_volume(v, dir / "v.hdr");
  const auto back = load_volume(dir / "v.hdr");
  CHECK(back == v);
  CHECK(back.spacing() == Spacing{1, 1, 3});

  // chop the payload
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() != ".hdr") std::filesystem::resize_file(e.path(), std::filesystem::file_size(e.path()) / 2);
  CHECK_THROWS(load_volume(dir / "v.hdr"));
}

TEST_CASE("cohort manifest validation") {
  const auto dir = oracle::scratch_dir("cohort_manifest");
  auto c = generate_phantom_cohort(small_phantom(3, 4), dir);
  const auto back = load_cohort(dir / "manifest.json");
  CHECK(back == c);

  CohortManifest empty;
  save_cohort(empty, dir / "empty.json");
  CHECK(load_cohort(dir / "empty.json").patients.empty());

  auto bad = c;
  auto& scans = bad.patients.front().scans;
  if (scans.size() < 3) scans.push_back({static_cast<int>(scans.size()), 0.0, scans.back().volume_ref});
  scans[1].cumulative_dose_gy = 20;
  scans[2].cumulative_dose_gy = 10;
  CHECK_THROWS_WITH(validate_cohort(bad, false), doctest::Contains("dose"));
}
