// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: vt_acceptance [workdir] [--only N,M]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "vt/checkpoint.hpp"
#include "vt/evaluation.hpp"
#include "vt/inference.hpp"
#include "vt/losses.hpp"
#include "vt/models.hpp"
#include "vt/nn/ops.hpp"
#include "vt/pairing.hpp"
#include "vt/pipeline.hpp"
#include "vt/preprocess.hpp"
#include "vt/profiling.hpp"
#include "vt/training.hpp"

using namespace vt;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<float> uniform(std::size_t n, std::mt19937& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

CohortManifest random_cohort(std::mt19937_64& rng) {
  CohortManifest c;
  std::uniform_int_distribution<int> np(2, 15), ns(1, 8), fr(1, 6);
  const int n = np(rng);
  for (int i = 0; i < n; ++i) {
    PatientRecord p;
    p.patient_id = "A" + std::to_string(i);
    p.age_years = 45 + i;
    p.ctv_mask_ref = "m.hdr";
    const int scans = ns(rng);
    double d = 0;
    for (int j = 0; j < scans; ++j) {
      if (j) d += 1.8 * fr(rng);
      p.scans.push_back({j, d, "s" + std::to_string(j) + ".hdr"});
    }
    c.patients.push_back(p);
  }
  c.stats = compute_stats(c.patients, 7);
  return c;
}

// 1
Outcome pair_enumeration() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_cohort(rng);
    SplitAssignment all;
    for (const auto& p : c.patients) all[p.patient_id] = Split::train;
    for (bool identity : {false, true}) {
      const auto tuples = enumerate_transitions(c, all, Split::train, identity, c.stats);
      std::vector<double> deltas;
      for (const auto& t : tuples) deltas.push_back(t.dose_increment_gy);
      std::sort(deltas.begin(), deltas.end());
      o.require(tuples.size() == oracle::expected_tuple_count(c.patients, identity),
                "tuple count, cohort " + std::to_string(trial));
      o.require(deltas == oracle::pairwise_increments(c.patients, identity), "delta multiset, cohort " + std::to_string(trial));
    }
  }
  const double s = seconds_since(t0);
  o.require(s < 10, "runtime < 10 s");
  o.note("50 cohorts, " + fmt(s, 3) + " s");
  return o;
}

// 2
Outcome loss_identities() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937 rng(7);
  const auto a = uniform(500, rng, 0, 1), b = uniform(500, rng, 0, 1);
  std::vector<float> ones(500, 1.0f), mask(500, 0.0f);
  for (int i = 100; i < 110; ++i) mask[i] = 1;

  o.require(losses::l1_mean(a, a) == 0 && losses::tumor_l1(a, a, mask) == 0 && losses::noise_l1(a, a) == 0 &&
                losses::cycle_term(a, a) == 0 && losses::composite(0, 0, 1) == 0,
            "perfect prediction gives zero");
  const double main = losses::l1_mean(a, b), tumor = losses::tumor_l1(a, b, mask);
  o.require(losses::composite(main, tumor, 0) == main, "lambda 0 reduces to the main term");
  o.require(std::abs(losses::tumor_l1(a, b, ones) - losses::l1_mean(a, b)) <= 1e-6, "full mask equals l1_mean");

  // gradient locality
  const nn::Shape shape{1, 1, 20, 25};
  auto pred0 = a;
  for (std::size_t i = 0; i < pred0.size(); ++i)
    if (std::abs(pred0[i] - b[i]) < 0.05f) pred0[i] = b[i] + 0.1f;
  const auto T = nn::Tensor::from(shape, b), M = nn::Tensor::from(shape, mask);
  auto pred = nn::Tensor::from(shape, pred0, true);
  nn::masked_l1_loss(pred, T, M).backward();
  auto value = [&](std::span<const float> v) {
    nn::NoGradGuard ng;
    return static_cast<double>(nn::masked_l1_loss(nn::Tensor::from(shape, {v.begin(), v.end()}), T, M).item());
  };
  double worst_rel = 0;
  int outside_bad = 0;
  for (std::size_t i = 0; i < pred0.size(); ++i) {
    if (mask[i] == 0) {
      auto moved = pred0;
      moved[i] += 0.25f;
      if (pred.grad()[i] != 0.0f || value(moved) != value(pred0)) ++outside_bad;
    } else {
      // linear within 0.05 of pred0, so a wide step only removes rounding
      const double fd = oracle::central_difference(value, pred0, i, 2e-2);
      worst_rel = std::max(worst_rel, std::abs(pred.grad()[i] - fd) / std::abs(fd));
    }
  }
  o.require(outside_bad == 0, "zero gradient and zero change outside the mask");
  o.require(worst_rel <= 1e-4, "in-mask gradient within 1e-4 relative");
  const double s = seconds_since(t0);
  o.require(s < 30, "runtime < 30 s");
  o.note("max in-mask relative gradient error " + fmt(worst_rel, 3) + ", " + fmt(s, 3) + " s");
  return o;
}

// 3
Outcome otsu_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::int64_t> h(256, 0);
    const int kind = trial % 3;
    if (kind == 0) {
      for (auto& x : h) x = std::uniform_int_distribution<int>(0, 1000)(rng);
    } else if (kind == 1) {
      for (auto& x : h) x = std::bernoulli_distribution(0.1)(rng) ? std::uniform_int_distribution<int>(1, 50)(rng) : 0;
    } else {
      std::normal_distribution<double> m0(70, 15), m1(180, 20);
      const int n0 = std::uniform_int_distribution<int>(200, 5000)(rng), n1 = std::uniform_int_distribution<int>(200, 5000)(rng);
      for (int i = 0; i < n0; ++i) ++h[std::clamp(static_cast<int>(m0(rng)), 0, 255)];
      for (int i = 0; i < n1; ++i) ++h[std::clamp(static_cast<int>(m1(rng)), 0, 255)];
    }
    const int expected = oracle::exhaustive_otsu(h);
    if (expected < 0 || otsu_bin(h) != expected) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " of 1000 histograms differ");

  int affine_bad = 0;
  for (int c = 0; c < 20; ++c) {
    std::mt19937 r(c);
    std::normal_distribution<float> lo(0.1f + 0.01f * c, 0.03f), hi(0.6f + 0.01f * c, 0.05f);
    std::vector<float> v;
    for (int i = 0; i < 400 + 20 * c; ++i) v.push_back(lo(r));
    for (int i = 0; i < 300; ++i) v.push_back(hi(r));
    const float scale = 0.5f + 0.3f * c, shift = -2.0f + 0.25f * c;
    std::vector<float> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = scale * v[i] + shift;
    if (otsu_threshold(v).bin != otsu_threshold(w).bin) ++affine_bad;
  }
  o.require(affine_bad == 0, "affine rescaling changed the argmax in " + std::to_string(affine_bad) + " cases");
  const double s = seconds_since(t0);
  o.require(s < 30, "runtime < 30 s");
  o.note("1000 histograms, 20 affine cases, " + fmt(s, 3) + " s");
  return o;
}

// 4
Outcome delta_v_and_bins() {
  Outcome o;
  const auto t0 = Clock::now();
  o.require(delta_v_percent(80, 100) && *delta_v_percent(80, 100) == 20.0, "(80, 100) -> 20.0%");
  o.require(delta_v_percent(125, 100) && std::abs(*delta_v_percent(125, 100) - 25.0) < 1e-12, "(125, 100) -> 25%");
  o.require(!delta_v_percent(1, 0), "V_real 0 has no value");
  int partition_bad = 0;
  for (int k = 0; k < 60000; ++k) {
    const double d = 5.0 + k * 1e-3;
    const auto bin = dose_bin(d);
    int hits = 0;
    for (int c : kDoseBinCentres) hits += (d >= c - 5 && d < c + 5);
    if (!bin || hits != 1 || !(d >= *bin - 5 && d < *bin + 5)) ++partition_bad;
  }
  o.require(partition_bad == 0, "each dose in [5, 65) falls in exactly one bin");
  o.require(!dose_bin(4.999999) && !dose_bin(65.0), "outside [5, 65) has no bin");
  o.require(acceptable(25.0) && !acceptable(std::nextafter(25.0, 26.0)), "acceptable iff <= 25%");
  const double s = seconds_since(t0);
  o.require(s < 5, "runtime < 5 s");
  o.note(fmt(s, 3) + " s");
  return o;
}

// 5
Outcome phantom_fidelity(const fs::path& root) {
  Outcome o;
  const auto t0 = Clock::now();
  PhantomConfig cfg;
  cfg.n_patients = 20;
  cfg.seed = 5;
  const auto c = generate_phantom_cohort(cfg, root / "phantom20");
  const double vox = cfg.spacing.voxel_volume();
  int scans = 0, within = 0;
  for (const auto& p : c.patients) {
    const auto& truth = c.phantom_truth.at(p.patient_id);
    const auto roi = LocalROI::from_mask(load_mask(c.resolve(p.ctv_mask_ref)));
    for (const auto& s : p.scans) {
      ++scans;
      const double analytic = truth.v0_mm3 * std::exp(-truth.alpha * s.cumulative_dose_gy / 60.0);
      const double bound = oracle::shell_voxels(truth, s.cumulative_dose_gy, cfg.grid, cfg.spacing) * vox;
      within += std::abs(tumor_volume_otsu(load_volume(c.resolve(s.volume_ref)), roi) - analytic) <= bound;
    }
  }
  o.require(within == scans, std::to_string(scans - within) + " scans outside the voxel-shell bound");
  const double s = seconds_since(t0);
  o.require(s < 60, "runtime < 1 min");
  o.note(std::to_string(within) + "/" + std::to_string(scans) + " scans, " + fmt(s, 3) + " s");
  return o;
}

RunConfig desk_config(const fs::path& dir) {
  RunConfig c;
  c.workdir = dir.string();
  c.phantom.n_patients = 24;
  c.phantom.seed = 11;
  c.pairs.seed = 3;
  c.train.seed = 5;
  c.train.epochs = 20;
  c.train.lr_diffusion = 5e-4;
  c.train.diffusion_steps = 100;
  c.infer.seed = 1;
  c.infer.trajectory_doses = {10, 20, 30, 40, 50, 60};
  c.validate();
  return c;
}

// Shared by 6 and 7.
struct DeskRun {
  json eval;
  std::map<std::string, double> train_seconds;
  std::map<std::string, std::string> failures;
};

DeskRun desk_run(const fs::path& root) {
  DeskRun r;
  auto config = desk_config(root / "desk");
  run_synth(config);
  run_preprocess(config);
  run_pairs(config);
  for (auto fam : {Family::diffusion_25d, Family::paired_gan, Family::cycle_gan}) {
    auto c = config;
    c.train.family = fam;
    if (fam != Family::diffusion_25d) c.train.epochs = 3;
    const auto t0 = Clock::now();
    try {
      run_train(c, true);
    } catch (const NumericalFailure& e) {
      r.failures[to_string(fam)] = e.what();
    }
    r.train_seconds[to_string(fam)] = seconds_since(t0);
  }
  run_infer(config);
  r.eval = run_eval(config);
  return r;
}

Outcome desk_learning(const DeskRun& run) {
  Outcome o;
  const auto& models = run.eval.at("models");
  const auto& d = models.at("diffusion_25d");
  const double dv = d.value("mean_delta_v_to_max_dose", 1e9);
  const double mono = d.value("monotone_fraction", 0.0);
  const double train_s = run.train_seconds.at("diffusion_25d");
  o.require(dv <= 25.0, "(a) mean |dV| for delta <= 40 Gy is " + fmt(dv) + "% (> 25%)");
  o.require(train_s <= 3 * 3600, "(a) diffusion training within 3 h CPU");
  o.require(mono >= 0.8, "(b) monotone fraction " + fmt(mono));
  o.note("(a) mean |dV| " + fmt(dv) + "% over " + std::to_string(d.at("entries").get<int>()) + " follow-ups, train " +
         fmt(train_s, 4) + " s");
  o.note("(b) non-increasing adjacent pairs " + fmt(100 * mono, 4) + "%");
  for (const auto* gan : {"paired_gan", "cycle_gan"}) {
    o.require(!run.failures.count(gan), std::string("(c) ") + gan + " aborted: " +
                                            (run.failures.count(gan) ? run.failures.at(gan) : ""));
    const bool finite = models.contains(gan) && models.at(gan).value("finite", false) &&
                        models.at(gan).at("mean_delta_v").is_number() &&
                        std::isfinite(models.at(gan).at("mean_delta_v").get<double>());
    o.require(finite, std::string("(c) ") + gan + " |dV| curve is finite");
    if (finite) o.note(std::string("(c) ") + gan + " mean |dV| " + fmt(models.at(gan).at("mean_delta_v").get<double>()) + "%");
  }
  return o;
}

Outcome identity_behaviour(const DeskRun& run) {
  Outcome o;
  const auto& d = run.eval.at("models").at("diffusion_25d");
  const double mae = d.at("identity_mae").is_number() ? d.at("identity_mae").get<double>() : 1e9;
  o.require(mae <= 0.05, "identity MAE " + fmt(mae) + " > 0.05");
  o.note("delta 0 mean absolute error " + fmt(mae) + " on held-out patients");
  return o;
}

// 8
Outcome macs_oracle() {
  Outcome o;
  nn::Rng rng(1);
  nn::Conv2d conv("c", 1, 8, 3, 1, 1, true, rng);
  nn::Linear fc("f", 100, 10, rng);
  const auto conv_macs = count_macs(trace_layers([&] { conv.forward(nn::Tensor::zeros({1, 1, 32, 32})); }));
  const auto fc_macs = count_macs(trace_layers([&] { fc.forward(nn::Tensor::zeros({1, 100})); }));
  o.require(conv_macs == 73728, "conv MACs " + std::to_string(conv_macs));
  o.require(fc_macs == 1000, "dense MACs " + std::to_string(fc_macs));
  o.require(count_params(conv) == 80, "conv params");
  o.require(count_params(fc) == 1010, "dense params");

  GeneratorSpec spec;
  const NoiseSchedule schedule(250, 1e-4, 2e-2);
  for (auto fam : {Family::paired_gan, Family::cycle_gan, Family::diffusion_25d}) {
    spec.family = fam;
    spec.in_channels = fam == Family::diffusion_25d ? 3 : 1;
    const auto m = build_model(spec, schedule);
    o.require(count_params(*m) == oracle::walk_parameters(*m), to_string(fam) + " params equal the graph walk");
  }

  spec.family = Family::diffusion_25d;
  spec.in_channels = 3;
  const auto d = build_diffusion_model(spec, schedule);
  const auto trip = nn::Tensor::zeros({1, 3, 40, 40});
  const auto h = nn::Tensor::zeros({1, spec.condition_dim});
  const auto enc = count_macs(trace_layers([&] { d->encoder().forward(trip); }));
  const auto ctx = d->encoder().forward(trip);
  const auto step = count_macs(trace_layers(
      [&] { d->predict_noise_with_context(ctx, nn::Tensor::zeros({1, 1, 40, 40}), {1}, h); }));
  const auto full = count_macs(trace_layers([&] { d->predict(trip, h, {0}); }));
  const auto report = profile_model(*d, 40, 40, "diffusion");
  o.require(full - enc == 250 * step, "traced sampling minus encoder equals 250 x denoiser step");
  o.require(report.infer_macs == full, "profiled inference MACs equal the traced sampling pass");
  o.note("per-step " + std::to_string(step) + " MACs, inference " + std::to_string(full) + " = " +
         std::to_string(enc) + " + 250 x " + std::to_string(step));
  return o;
}

// 9
Outcome determinism(const fs::path& root) {
  Outcome o;
  auto config = oracle::tiny_config(root / "determinism", 10);
  oracle::prepare_data(config);
  const auto pre = load_preprocessed(config.paths().preprocessed_manifest());
  const auto pairs = load_pairs(config.paths().pairs_dir());
  auto store = std::make_shared<VolumeStore>(pre.cohort.root);
  const SliceDataset train(pairs.tuples.at(Split::train), store, pairs.train_stats.dose_max, SampleLayout::triplet_25d);
  const SliceDataset val(pairs.tuples.at(Split::val), store, pairs.train_stats.dose_max, SampleLayout::triplet_25d);
  TrainSetup setup;
  setup.model_id = "det";
  setup.stats = pairs.train_stats;
  setup.preprocess_fingerprint = pre.fingerprint;
  setup.checkpoint = root / "determinism" / "det.vtck";
  config.train.family = Family::diffusion_25d;
  const auto a = train_model(train, config.train, setup);
  const auto b = train_model(train, config.train, setup);
  o.require(a.report.curves == b.report.curves, "first-epoch losses identical");

  std::string pid;
  for (const auto& [id, sp] : pairs.split)
    if (sp == Split::test) pid = id;
  const auto ctx = load_patient_context(pre, pid, a.meta.stats);
  const LoadedModel la{a.model, a.meta}, lb{b.model, b.meta};
  const auto va = predict_followup(la, *ctx.baseline, ctx.clinical, 30, 17, ctx.preprocess_fingerprint);
  const auto vb = predict_followup(lb, *ctx.baseline, ctx.clinical, 30, 17, ctx.preprocess_fingerprint);
  o.require(std::equal(va.data().begin(), va.data().end(), vb.data().begin(), vb.data().end()),
            "inference volumes bit-identical");

  const auto& vset = val.size() > 0 ? val : train;
  const double before = validate(*a.model, vset, 3);
  const double after = validate(setup.checkpoint, vset, 3);
  o.require(std::abs(before - after) <= 1e-6, "validation metric preserved through save/load");
  o.note("validation " + fmt(before, 8) + " vs reloaded " + fmt(after, 8));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path root = fs::temp_directory_path() / "vt_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      root = arg;
    }
  }
  fs::remove_all(root);
  fs::create_directories(root);
  auto wanted = [&](int n) { return only.empty() || only.count(n); };

  std::optional<DeskRun> desk;
  auto ensure_desk = [&]() -> const DeskRun& {
    if (!desk) desk = desk_run(root);
    return *desk;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"pair enumeration oracle", pair_enumeration},
      {"loss identities", loss_identities},
      {"otsu oracle", otsu_oracle},
      {"|dV| and dose binning", delta_v_and_bins},
      {"phantom volumetric fidelity", [&] { return phantom_fidelity(root); }},
      {"desk-scale learning", [&] { return desk_learning(ensure_desk()); }},
      {"identity behaviour", [&] { return identity_behaviour(ensure_desk()); }},
      {"MACs and parameter oracle", macs_oracle},
      {"determinism and checkpoint fidelity", [&] { return determinism(root); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << " ("
              << fmt(seconds_since(t0), 4) << " s)";
    for (const auto& note : o.notes) std::cout << "; " << note;
    std::cout << std::endl;
  }
  return failed ? 1 : 0;
}
