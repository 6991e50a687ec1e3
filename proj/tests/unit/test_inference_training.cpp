#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "vt/checkpoint.hpp"
#include "vt/inference.hpp"
#include "vt/pairing.hpp"
#include "vt/pipeline.hpp"
#include "vt/preprocess.hpp"
#include "vt/training.hpp"

using namespace vt;

namespace {

// Wiped once per process so subcases can rebuild the fixture cheaply.
std::filesystem::path workdir(const std::string& name) {
  static std::set<std::string> made;
  if (made.insert(name).second) return oracle::scratch_dir(name);
  return std::filesystem::temp_directory_path() / ("vt_test_" + name);
}

struct Fixture {
  RunConfig config;
  PreprocessedCohort pre;
  PairingResult pairs;
  std::shared_ptr<VolumeStore> store;

  explicit Fixture(const std::string& name) : config(oracle::tiny_config(workdir(name), 10)) {
    oracle::prepare_data(config);
    pre = load_preprocessed(config.paths().preprocessed_manifest());
    pairs = load_pairs(config.paths().pairs_dir());
    store = std::make_shared<VolumeStore>(pre.cohort.root);
  }

  SliceDataset dataset(Split split, SampleLayout layout) const {
    return SliceDataset(pairs.tuples.at(split), store, pairs.train_stats.dose_max, layout);
  }

  TrainSetup setup(const std::string& id) const {
    TrainSetup s;
    s.model_id = id;
    s.stats = pairs.train_stats;
    s.preprocess_fingerprint = pre.fingerprint;
    return s;
  }

  std::string first_test_patient() const {
    for (const auto& [id, sp] : pairs.split)
      if (sp == Split::test) return id;
    throw std::logic_error("no test patient");
  }
};

bool same_voxels(const Volume& a, const Volume& b) {
  return a.data().size() == b.data().size() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("short GAN training: finite curves, deterministic first epoch, train-only reads") {
  Fixture f("train_gan");
  auto cfg = f.config.train;
  cfg.family = Family::paired_gan;
  const auto data = f.dataset(Split::train, SampleLayout::slice_2d);
  const auto a = train_model(data, cfg, f.setup("paired_gan"));
  const auto b = train_model(data, cfg, f.setup("paired_gan"));
  REQUIRE_FALSE(a.report.curves.empty());
  for (const auto& [name, curve] : a.report.curves) {
    REQUIRE(curve.size() == 1);
    CHECK(std::isfinite(curve.front()));
    CHECK(b.report.curves.at(name).front() == curve.front());
  }
  std::set<std::string> train_ids;
  for (const auto& [id, sp] : f.pairs.split)
    if (sp == Split::train) train_ids.insert(id);
  CHECK_FALSE(a.report.patients_read.empty());
  for (const auto& id : a.report.patients_read) CHECK(train_ids.count(id) == 1);

  const auto val = f.dataset(Split::val, SampleLayout::slice_2d);
  if (val.size() > 0) CHECK(std::isfinite(validate(*a.model, val, 1)));
}

TEST_CASE("non-finite data aborts training with a numerical failure") {
  Fixture f("train_nan");
  const auto& t = f.pairs.tuples.at(Split::train).front();
  const auto path = f.pre.cohort.resolve(t.target_volume_ref);
  auto v = load_volume(path);
  for (auto& x : v.data()) x = std::numeric_limits<float>::max();
  save_volume(v, path);
  auto cfg = f.config.train;
  cfg.family = Family::diffusion_25d;
  const auto data = f.dataset(Split::train, SampleLayout::triplet_25d);
  CHECK_THROWS_AS(train_model(data, cfg, f.setup("nan")), NumericalFailure);
}

struct TrainedFixture : Fixture {
  LoadedModel model;
  TrainedFixture() : Fixture("infer_queries") {
    config.train.family = Family::diffusion_25d;
    run_train(config);
    model = load_checkpoint(config.paths().checkpoint(config.resolved_model_id()));
  }
};

TEST_CASE("dose-response queries") {
  static const TrainedFixture f;
  const auto& model = f.model;
  const auto pid = f.first_test_patient();
  const auto ctx = load_patient_context(f.pre, pid, model.meta.stats);

  SUBCASE("entries do not depend on query order") {
    const auto a = dose_response_trajectory(model, ctx, {pid, {10, 30, 60}, 4});
    const auto b = dose_response_trajectory(model, ctx, {pid, {60, 10, 30}, 4});
    REQUIRE(a.entries.size() == 3);
    const int perm[] = {1, 2, 0};
    for (int i = 0; i < 3; ++i) {
      const auto& x = a.entries[i];
      const auto& y = b.entries[perm[i]];
      CHECK(x.delta_gy == y.delta_gy);
      CHECK(x.volume_mm3 == y.volume_mm3);
      CHECK(x.seed == y.seed);
      CHECK(same_voxels(*x.volume, *y.volume));
    }
    CHECK(entry_seed(4, 30) == a.entries[1].seed);
    CHECK(entry_seed(4, 30) != entry_seed(5, 30));
  }

  SUBCASE("same seed, same voxels; predictions stay in range") {
    const auto a = predict_followup(model, *ctx.baseline, ctx.clinical, 20, 9, ctx.preprocess_fingerprint);
    const auto b = predict_followup(model, *ctx.baseline, ctx.clinical, 20, 9, ctx.preprocess_fingerprint);
    CHECK(same_voxels(a, b));
    CHECK(a.shape() == ctx.baseline->shape());
    for (float v : a.data()) CHECK((std::isfinite(v) && v >= 0 && v <= 1));
    const auto c = predict_followup(model, *ctx.baseline, ctx.clinical, 20, 10, ctx.preprocess_fingerprint);
    CHECK_FALSE(same_voxels(a, c));
  }

  SUBCASE("doses past the training range are flagged") {
    const double beyond = model.meta.stats.dose_max + 20;
    const auto t = dose_response_trajectory(model, ctx, {pid, {10, beyond}, 1});
    CHECK_FALSE(t.entries[0].extrapolated);
    CHECK(t.entries[1].extrapolated);
    CHECK_FALSE(t.warnings.empty());
    const auto j = nlohmann::json::parse(t.to_json());
    CHECK(j.at("entries").size() == 2);
  }

  SUBCASE("invalid queries") {
    CHECK_THROWS(dose_response_trajectory(model, ctx, {pid, {10, -1}, 1}));
    CHECK_THROWS(predict_followup(model, *ctx.baseline, ctx.clinical, -0.5, 1, ctx.preprocess_fingerprint));
    CHECK_THROWS_AS(predict_followup(model, *ctx.baseline, ctx.clinical, 10, 1, "hu[-1000,400];other"), StatsMismatch);
    CHECK_THROWS(load_patient_context(f.pre, "NOPE", model.meta.stats));
  }
}

TEST_CASE("train stage is skipped when nothing changed") {
  Fixture f("train_skip");
  auto config = f.config;
  config.train.family = Family::paired_gan;
  const auto first = run_train(config);
  const auto ckpt = config.paths().checkpoint(config.resolved_model_id());
  const auto stamp = std::filesystem::last_write_time(ckpt);
  const auto second = run_train(config);
  CHECK(second.value("skipped", false));
  CHECK(std::filesystem::last_write_time(ckpt) == stamp);
  config.train.seed += 1;
  CHECK_FALSE(run_train(config).value("skipped", false));
}

namespace {

double masked_l1_over(const std::vector<std::vector<float>>& preds, const SliceDataset& data) {
  double sum = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data.get(i);
    sum += losses::tumor_l1(preds[i], s.target, s.mask);
  }
  return sum / data.size();
}

const TrainingTuple& largest_step(const std::vector<TrainingTuple>& tuples) {
  return *std::max_element(tuples.begin(), tuples.end(), [](const auto& a, const auto& b) {
    return a.dose_increment_gy < b.dose_increment_gy;
  });
}

}  // namespace

TEST_CASE("memorising a single pair") {
  Fixture f("overfit");
  const auto& tuple = largest_step(f.pairs.tuples.at(Split::train));
  auto cfg = f.config.train;
  cfg.epochs = 50;
  cfg.batch_size = 1;
  cfg.base_channels = 16;
  cfg.n_res_blocks = 2;
  cfg.diffusion_steps = 250;
  cfg.lr_generator = cfg.lr_discriminator = 1e-3;
  cfg.lr_diffusion = 1e-3;
  for (auto fam : {Family::paired_gan, Family::cycle_gan, Family::diffusion_25d}) {
    cfg.family = fam;
    cfg.epochs = fam == Family::diffusion_25d ? 800 : 50;
    const auto layout = fam == Family::diffusion_25d ? SampleLayout::triplet_25d : SampleLayout::slice_2d;
    const SliceDataset one({tuple}, f.store, f.pairs.train_stats.dose_max, layout);
    const auto r = train_model(one, cfg, f.setup(to_string(fam)));
    const double l1 = masked_l1_over(predict_dataset(*r.model, one, 2), one);
    MESSAGE(to_string(fam) << " masked l1 after " << cfg.epochs << " epochs: " << l1);
    CHECK(l1 < (fam == Family::diffusion_25d ? 0.08 : 0.05));
  }
}

TEST_CASE("loss bookkeeping and validation") {
  Fixture f("train_terms");
  auto cfg = f.config.train;
  const auto& tuples = f.pairs.tuples.at(Split::train);
  const SliceDataset eight(std::vector<TrainingTuple>(tuples.begin(), tuples.begin() + 2), f.store,
                           f.pairs.train_stats.dose_max, SampleLayout::slice_2d);

  SUBCASE("lambda zero leaves only the main objective") {
    cfg.family = Family::paired_gan;
    cfg.loss.lambda_tumor = 0;
    const auto r0 = train_model(eight, cfg, f.setup("l0"));
    cfg.loss.lambda_tumor = 1;
    const auto r1 = train_model(eight, cfg, f.setup("l1"));
    CHECK(r0.report.curves.at("g_total") == r0.report.curves.at("g_main"));
    CHECK(r1.report.curves.at("g_total") != r1.report.curves.at("g_main"));
    CHECK(r0.report.curves.count("tumor") == 1);
  }

  SUBCASE("perfect noise prediction leaves only the tumour term") {
    const SliceDataset trip(std::vector<TrainingTuple>(tuples.begin(), tuples.begin() + 1), f.store,
                            f.pairs.train_stats.dose_max, SampleLayout::triplet_25d);
    std::vector<SliceSample> samples;
    for (std::size_t i = 0; i < std::min<std::size_t>(trip.size(), 4); ++i) samples.push_back(trip.get(i));
    const auto batch = make_batch(samples);
    const int n = batch.input.dim(0), rows = batch.input.dim(2), cols = batch.input.dim(3);
    const NoiseSchedule schedule(50, 1e-4, 2e-2);
    std::vector<float> eps_v(n * rows * cols), centre_v(n * rows * cols), noisy_v(n * rows * cols);
    std::vector<int> t(n);
    std::mt19937 rng(1);
    std::normal_distribution<float> g;
    for (auto& e : eps_v) e = g(rng);
    for (int b = 0; b < n; ++b) {
      t[b] = 5 + 10 * b;
      const float a = std::sqrt(schedule.alpha_bar(t[b])), s = std::sqrt(1 - schedule.alpha_bar(t[b]));
      for (int i = 0; i < rows * cols; ++i) {
        const int at = b * rows * cols + i;
        centre_v[at] = batch.input.data()[(b * 3 + 1) * rows * cols + i];
        noisy_v[at] = a * (batch.target.data()[at] - centre_v[at]) + s * eps_v[at];
      }
    }
    const nn::Shape shape{n, 1, rows, cols};
    const auto eps = nn::Tensor::from(shape, eps_v);
    const auto terms = diffusion_objective(eps, eps, nn::Tensor::from(shape, noisy_v), t,
                                           nn::Tensor::from(shape, centre_v), batch, schedule, 0.7);
    CHECK(terms.main.item() == 0.0f);
    CHECK(terms.total.item() == doctest::Approx(0.7 * terms.tumor.item()).epsilon(1e-6));
    // x0_hat recovers the target, so the tumour term is rounding noise
    CHECK(terms.tumor.item() < 1e-5);
  }

  SUBCASE("validation equals a recomputation from exported predictions") {
    cfg.family = Family::paired_gan;
    auto setup = f.setup("val");
    setup.checkpoint = oracle::scratch_dir("train_terms_ckpt") / "val.vtck";
    const auto r = train_model(eight, cfg, setup);
    REQUIRE(r.report.curves.at("g_total").size() == 1);
    const double v = validate(*r.model, eight, 4);
    CHECK(v == validate(*r.model, eight, 4));
    CHECK(std::abs(v - masked_l1_over(predict_dataset(*r.model, eight, 4), eight)) < 1e-9);
    CHECK(std::abs(validate(setup.checkpoint, eight, 4) - v) <= 1e-6);
  }
}
