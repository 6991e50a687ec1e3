#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "vt/evaluation.hpp"

using namespace vt;

TEST_CASE("otsu bin matches exhaustive search on random histograms") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> nb(2, 64), shape(0, 3);
  int compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int bins = nb(rng);
    std::vector<std::int64_t> h(bins, 0);
    switch (shape(rng)) {
      case 0:  // dense uniform counts
        for (auto& x : h) x = std::uniform_int_distribution<int>(0, 50)(rng);
        break;
      case 1:  // sparse
        for (auto& x : h) x = std::bernoulli_distribution(0.2)(rng) ? std::uniform_int_distribution<int>(1, 9)(rng) : 0;
        break;
      case 2: {  // two bumps
        const int a = std::uniform_int_distribution<int>(0, bins - 1)(rng), b = std::uniform_int_distribution<int>(0, bins - 1)(rng);
        for (int i = 0; i < bins; ++i) h[i] = 100 / (1 + std::abs(i - a)) + 60 / (1 + std::abs(i - b));
        break;
      }
      default:  // few occupied bins with ties
        for (int i = 0; i < bins; i += 3) h[i] = 5;
    }
    const int expected = oracle::exhaustive_otsu(h);
    if (expected < 0) {
      CHECK_THROWS_AS(otsu_bin(h), OtsuError);
    } else {
      CHECK(otsu_bin(h) == expected);
      ++compared;
    }
  }
  CHECK(compared > 900);
}

TEST_CASE("otsu threshold is affine invariant") {
  std::mt19937 rng(3);
  std::normal_distribution<float> lo(0.2f, 0.05f), hi(0.7f, 0.05f);
  std::vector<float> v;
  for (int i = 0; i < 600; ++i) v.push_back(lo(rng));
  for (int i = 0; i < 300; ++i) v.push_back(hi(rng));
  const auto base = otsu_threshold(v);
  std::vector<float> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = 3.0f * v[i] - 1.25f;
  const auto moved = otsu_threshold(w);
  CHECK(moved.bin == base.bin);
  std::size_t fb = 0, fm = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    fb += base.foreground(v[i]);
    fm += moved.foreground(w[i]);
  }
  CHECK(fb == fm);
  CHECK(fb == doctest::Approx(300).epsilon(0.05));
  CHECK_THROWS_AS(otsu_threshold(std::vector<float>(10, 0.5f)), OtsuError);
}

TEST_CASE("segmenting a synthetic blob inside the ROI") {
  Volume v({20, 20, 5}, {1, 1, 3}, {}, 0.2f);
  Mask ctv({20, 20, 5}, {1, 1, 3});
  for (int k = 1; k <= 3; ++k)
    for (int r = 5; r <= 14; ++r)
      for (int c = 5; c <= 14; ++c) ctv.at(r, c, k) = 1;
  for (int k = 1; k <= 3; ++k)
    for (int r = 7; r <= 11; ++r)
      for (int c = 7; c <= 11; ++c) v.at(r, c, k) = 0.8f;
  v.at(0, 0, 0) = 0.9f;  // bright voxel outside the ROI
  v.at(5, 14, 3) = 0.8f;  // isolated inside
  const auto roi = LocalROI::from_mask(ctv);
  CHECK(tumor_volume_otsu(v, roi) == doctest::Approx((75 + 1) * 3.0));
  CHECK(tumor_volume_otsu(v, roi, {256, true}) == doctest::Approx(75 * 3.0));
  const auto m = otsu_segment(v, roi);
  CHECK(m.at(0, 0, 0) == 0);
  CHECK(LocalROI::from_mask(ctv, 100).box.row_min == 0);
  CHECK_THROWS(LocalROI::from_mask(Mask({4, 4, 2}, {1, 1, 3})));
}

TEST_CASE("volume error, dose bins and acceptability") {
  CHECK(*delta_v_percent(80, 100) == doctest::Approx(20));
  CHECK(*delta_v_percent(120, 100) == doctest::Approx(20));
  CHECK(*delta_v_percent(100, 100) == 0);
  CHECK_FALSE(delta_v_percent(5, 0).has_value());
  CHECK(acceptable(25.0));
  CHECK_FALSE(acceptable(25.0001));

  CHECK(dose_bin(5.0) == 10);
  CHECK(dose_bin(14.999) == 10);
  CHECK(dose_bin(15.0) == 20);
  CHECK(dose_bin(64.9) == 60);
  CHECK_FALSE(dose_bin(4.99).has_value());
  CHECK_FALSE(dose_bin(65.0).has_value());

  const auto e0 = make_entry("m", "P", 12, 0, 40);
  CHECK_FALSE(e0.delta_v.has_value());
  CHECK_FALSE(e0.diagnostic.empty());

  VolumetricsReport r;
  r.entries = {make_entry("m", "P", 12, 100, 80), make_entry("m", "P", 18, 100, 130), make_entry("m", "Q", 22, 100, 100),
               make_entry("m", "Q", 50, 100, 60), e0, make_entry("n", "P", 12, 100, 101)};
  CHECK(r.models() == std::vector<std::string>{"m", "n"});
  CHECK(*r.acceptability_rate("m") == doctest::Approx(0.5));
  CHECK(*r.mean_delta_v("m") == doctest::Approx((20 + 30 + 0 + 40) / 4.0));
  CHECK(*r.mean_delta_v("m", 40) == doctest::Approx(50 / 3.0));
  CHECK_FALSE(r.acceptability_rate("none").has_value());

  const auto bins = dose_binned_curve(r.for_model("m"));
  REQUIRE(bins.size() == 6);
  CHECK(bins[0].count == 1);
  CHECK(*bins[0].mean == doctest::Approx(20));
  CHECK(bins[1].count == 2);
  CHECK(*bins[1].mean == doctest::Approx(15));
  CHECK(*bins[1].sd == doctest::Approx(15));
  CHECK_FALSE(bins[2].mean.has_value());
  CHECK(bins[4].count == 1);
}

TEST_CASE("report files") {
  const auto dir = oracle::scratch_dir("eval_report");
  VolumetricsReport r;
  r.entries = {make_entry("m", "P", 12, 100, 80), make_entry("m", "P", 31, 100, 95)};
  const auto written = emit_report(r, dir);
  CHECK(written.size() == 3);
  for (const auto& p : written) CHECK(std::filesystem::file_size(p) > 0);
  std::ifstream csv(dir / "volumetrics.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header.find("delta_v") != std::string::npos);
  CHECK(row.find("P") != std::string::npos);

  const auto empty_dir = oracle::scratch_dir("eval_report_empty");
  CHECK(emit_report({}, empty_dir).size() == 2);
}
