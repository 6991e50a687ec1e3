#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "vt/pairing.hpp"
#include "vt/preprocess.hpp"

using namespace vt;

namespace {

// Random schedules only; no volumes behind the refs.
CohortManifest random_cohort(std::mt19937_64& rng, int max_patients = 12) {
  CohortManifest c;
  std::uniform_int_distribution<int> np(3, max_patients), ns(1, 7), fractions(1, 6);
  const int n = np(rng);
  for (int i = 0; i < n; ++i) {
    PatientRecord p;
    p.patient_id = "R" + std::to_string(i);
    p.age_years = 50 + i;
    p.ctv_mask_ref = "m.hdr";
    const int scans = ns(rng);
    double d = 0;
    for (int j = 0; j < scans; ++j) {
      if (j) d += 2.0 * fractions(rng);
      p.scans.push_back({j, d, "v" + std::to_string(j) + ".hdr"});
    }
    c.patients.push_back(p);
  }
  c.stats = compute_stats(c.patients, 7);
  return c;
}

}  // namespace

TEST_CASE("HU clip and normalise endpoints") {
  Volume v({1, 3, 1}, {1, 1, 3});
  v.data()[0] = -1200;
  v.data()[1] = 300;
  v.data()[2] = -300;
  const auto n = clip_normalize_hu(v);
  CHECK(n.data()[0] == 0.0f);
  CHECK(n.data()[1] == 1.0f);
  CHECK(n.data()[2] == doctest::Approx(0.5));
  const auto back = denormalize_to_hu(n);
  CHECK(clip_normalize_hu(back) .data()[2] == doctest::Approx(0.5).epsilon(1e-6));
  v.data()[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH(clip_normalize_hu(v), doctest::Contains("1"));
}

TEST_CASE("resampling: identity, constants, binary masks, shapes") {
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  Volume v({8, 9, 5}, {1, 1, 3});
  for (auto& x : v.data()) x = u(rng);
  CHECK(resample(v, {1, 1, 3}) == v);

  Volume c({10, 10, 4}, {0.7, 0.7, 2.5}, {}, 0.25f);
  const auto rc = resample(c, {1, 1, 3});
  for (float x : rc.data()) CHECK(x == doctest::Approx(0.25f));
  CHECK(rc.shape().rows == static_cast<int>(std::lround(10 * 0.7)));
  CHECK(rc.shape().slices == static_cast<int>(std::lround(4 * 2.5 / 3)));

  Mask m({12, 12, 6}, {0.8, 0.8, 2});
  for (auto& x : m.data()) x = u(rng) > 0.6f;
  const auto rm = resample(m, {1, 1, 3});
  for (auto x : rm.data()) CHECK((x == 0 || x == 1));
  CHECK_THROWS(resample(v, {0, 1, 3}));
}

TEST_CASE("crop spec: tight box, max rule, CTV preserved") {
  Mask a({40, 40, 10}, {1, 1, 3});
  for (int k = 3; k <= 7; ++k)
    for (int r = 10; r <= 20; ++r)
      for (int col = 12; col <= 30; ++col) a.at(r, col, k) = 1;
  auto spec = compute_crop_spec({{"A", a}}, {0, 1});
  CHECK(spec.row_min == 10);
  CHECK(spec.row_max == 20);
  CHECK(spec.col_min == 12);
  CHECK(spec.col_max == 30);
  CHECK(spec.axial.at("A") == std::pair{3, 7});

  Mask b({40, 40, 10}, {1, 1, 3});
  for (int k = 2; k <= 4; ++k)
    for (int r = 5; r <= 25; ++r)
      for (int col = 8; col <= 33; ++col) b.at(r, col, k) = 1;
  spec = compute_crop_spec({{"A", a}, {"B", b}}, {0, 1});
  CHECK(spec.row_min == 5);
  CHECK(spec.row_max == 25);
  CHECK(spec.col_min == 8);
  CHECK(spec.col_max == 33);
  for (const auto& [id, m] : {std::pair{"A", a}, std::pair{"B", b}})
    CHECK(count_nonzero(crop(m, spec.box_for(id))) == count_nonzero(m));

  Mask empty({40, 40, 10}, {1, 1, 3});
  CHECK_THROWS_WITH(compute_crop_spec({{"E", empty}}), doctest::Contains("E"));
}

TEST_CASE("clinical encoding and dose normalisation") {
  CohortStats st{50, 80, 68.4, 4};
  PatientRecord p;
  p.patient_id = "C";
  p.age_years = 50;
  p.sex = 1;
  p.histology = 2;
  p.ct_stage = 4;
  p.cn_stage = 0;
  const auto e = encode_clinical(p, st);
  REQUIRE(e.size() == clinical_dimension(4));
  CHECK(e.values[0] == 0.0f);
  CHECK(e.values[1] == 1.0f);
  CHECK(std::vector<float>(e.values.begin() + 2, e.values.begin() + 6) == std::vector<float>{0, 0, 1, 0});
  CHECK(e.values[6] == 1.0f);
  CHECK(e.values[7] == 0.0f);
  p.age_years = 95;  // outside the training range
  CHECK(encode_clinical(p, st).values[0] == 1.0f);
  p.histology = 4;
  CHECK_THROWS(encode_clinical(p, st));

  CHECK(normalize_dose(68.4, 68.4) == 1.0);
  CHECK(normalize_dose(0, 68.4) == 0.0);
  CHECK(normalize_dose(34.2, 68.4) == doctest::Approx(0.5));
}

TEST_CASE("patient split proportions, determinism and partition") {
  std::mt19937_64 rng(1);
  CohortManifest c;
  for (int i = 0; i < 20; ++i) {
    PatientRecord p;
    p.patient_id = "S" + std::to_string(i);
    p.scans.push_back({0, 0, "x"});
    c.patients.push_back(p);
  }
  const auto s = split_patients(c, 4);
  std::map<Split, int> n;
  for (const auto& [id, sp] : s) ++n[sp];
  CHECK(n[Split::train] == 16);
  CHECK(n[Split::val] == 1);
  CHECK(n[Split::test] == 3);
  CHECK(split_patients(c, 4) == s);
  CHECK(s.size() == c.patients.size());
}

TEST_CASE("pair enumeration matches the brute-force oracle") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_cohort(rng);
    SplitAssignment all;
    for (const auto& p : c.patients) all[p.patient_id] = Split::train;
    for (bool identity : {false, true}) {
      const auto tuples = enumerate_transitions(c, all, Split::train, identity, c.stats);
      CHECK(tuples.size() == oracle::expected_tuple_count(c.patients, identity));
      std::vector<double> deltas;
      for (const auto& t : tuples) {
        deltas.push_back(t.dose_increment_gy);
        CHECK(t.is_identity == (t.input_volume_ref == t.target_volume_ref));
        CHECK(t.is_identity == (t.dose_increment_gy == 0.0 && t.input_time_index == t.target_time_index));
        const auto& p = c.patient(t.patient_id);
        CHECK(p.scans[t.target_time_index].cumulative_dose_gy - p.scans[t.input_time_index].cumulative_dose_gy ==
              t.dose_increment_gy);
      }
      std::sort(deltas.begin(), deltas.end());
      CHECK(deltas == oracle::pairwise_increments(c.patients, identity));
    }
  }
}

TEST_CASE("small enumeration cases") {
  CohortManifest c;
  PatientRecord p;
  p.patient_id = "P";
  p.scans = {{0, 0, "a"}, {1, 10, "b"}, {2, 20, "c"}};
  c.patients = {p};
  c.stats = compute_stats(c.patients, 7);
  SplitAssignment s{{"P", Split::train}};
  CHECK(enumerate_transitions(c, s, Split::train, true, c.stats).size() == 6);
  c.patients.front().scans.resize(1);
  CHECK(enumerate_transitions(c, s, Split::train, false, c.stats).empty());
  CHECK(enumerate_transitions(c, s, Split::test, true, c.stats).empty());
}

TEST_CASE("conditioning vector") {
  ClinicalEncoding e{{0.1f, 1, 0, 1, 0.5f}};
  const auto h0 = build_conditioning(e, 0, 60);
  CHECK(h0.size() == e.size() + 1);
  CHECK(h0.dose() == 0.0f);
  CHECK(build_conditioning(e, 60, 60).dose() == 1.0f);
  CHECK(build_conditioning(e, 100, 60).dose() == 1.0f);
  CHECK(build_conditioning(e, 15, 60).dose() == doctest::Approx(0.25));
}

TEST_CASE("triplet indices clamp at the edges") {
  CHECK(triplet_indices(0, 10) == std::array{0, 0, 1});
  CHECK(triplet_indices(4, 10) == std::array{3, 4, 5});
  CHECK(triplet_indices(9, 10) == std::array{8, 9, 9});
  CHECK(triplet_indices(0, 1) == std::array{0, 0, 0});
}

TEST_CASE("slice sample counts on a preprocessed phantom") {
  const auto cfg = oracle::tiny_config(oracle::scratch_dir("pairs_slices"), 8);
  oracle::prepare_data(cfg);
  const auto pre = load_preprocessed(cfg.paths().preprocessed_manifest());
  const auto pairs = load_pairs(cfg.paths().pairs_dir());
  auto store = std::make_shared<VolumeStore>(pre.cohort.root);
  std::size_t expected = 0;
  const auto& train = pairs.tuples.at(Split::train);
  for (const auto& t : train) {
    const auto& r = pre.crop.axial.at(t.patient_id);
    expected += static_cast<std::size_t>(r.second - r.first + 1);
  }
  SliceDataset d2(train, store, pairs.train_stats.dose_max, SampleLayout::slice_2d);
  SliceDataset d3(train, store, pairs.train_stats.dose_max, SampleLayout::triplet_25d);
  CHECK(d2.size() == expected);
  CHECK(d3.size() == expected);

  const auto samples = triplet_samples_25d(train.front(), *store, pairs.train_stats.dose_max);
  const auto h = build_conditioning(train.front().clinical, train.front().dose_increment_gy, pairs.train_stats.dose_max);
  for (const auto& s : samples) {
    CHECK(s.channels == 3);
    CHECK(s.condition.values == h.values);
  }

  // tuples never cross splits, and the loader only touches the train split
  std::set<std::string> train_ids;
  for (const auto& [id, sp] : pairs.split)
    if (sp == Split::train) train_ids.insert(id);
  for (const auto& [split, tuples] : pairs.tuples)
    for (const auto& t : tuples) CHECK(pairs.split.at(t.patient_id) == split);
  for (std::size_t i = 0; i < d2.size(); ++i) d2.get(i);
  for (const auto& id : store->accessed_patients()) CHECK(train_ids.count(id) == 1);
}

TEST_CASE("tuple export round-trip") {
  std::mt19937_64 rng(5);
  const auto c = random_cohort(rng, 5);
  SplitAssignment all;
  for (const auto& p : c.patients) all[p.patient_id] = Split::train;
  const auto tuples = enumerate_transitions(c, all, Split::train, true, c.stats);
  const auto dir = oracle::scratch_dir("tuples_rt");
  export_tuples_jsonl(tuples, dir / "t.jsonl");
  CHECK(import_tuples_jsonl(dir / "t.jsonl") == tuples);
}
