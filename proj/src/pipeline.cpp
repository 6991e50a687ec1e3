#include "vt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "vt/checkpoint.hpp"
#include "vt/evaluation.hpp"
#include "vt/inference.hpp"
#include "vt/pairing.hpp"
#include "vt/profiling.hpp"
#include "vt/render.hpp"

namespace vt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

PreprocessedCohort require_preprocessed(const StagePaths& p) {
  if (!fs::exists(p.preprocessed_manifest()))
    throw MissingArtifact("preprocess", "no preprocessed cohort at " + p.preprocessed_manifest().string());
  return load_preprocessed(p.preprocessed_manifest());
}

PairingResult require_pairs(const StagePaths& p) {
  if (!fs::exists(p.pairs_dir() / "pairs.json"))
    throw MissingArtifact("pairs", "no pairing output at " + p.pairs_dir().string());
  return load_pairs(p.pairs_dir());
}

std::vector<std::string> split_members(const SplitAssignment& split, Split which) {
  std::vector<std::string> ids;
  for (const auto& [id, s] : split)
    if (s == which) ids.push_back(id);
  return ids;
}

SampleLayout layout_for(Family f) {
  return f == Family::diffusion_25d ? SampleLayout::triplet_25d : SampleLayout::slice_2d;
}

SegmentOptions segment_options(const RunConfig& c) { return {c.eval.otsu_bins, c.eval.largest_component}; }

double mean_abs_diff(const Volume& a, const Volume& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.data().size());
}

// Slice holding the most CTV voxels.
int central_slice(const Mask& m) {
  int best = 0;
  std::size_t most = 0;
  for (int k = 0; k < m.shape().slices; ++k) {
    const auto s = m.slice(k);
    const auto n = static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](auto v) { return v != 0; }));
    if (n > most) most = n, best = k;
  }
  return best;
}

std::vector<float> plane_of(const Volume& v, int k) {
  const auto s = v.slice(k);
  return {s.begin(), s.end()};
}

render::AxisSpec linear_axis(std::string label, double lo, double hi) {
  render::AxisSpec a{std::move(label), lo, hi, false, {}};
  for (int t = 0; t <= 5; ++t) a.ticks.push_back(lo + (hi - lo) * t / 5.0);
  return a;
}

}  // namespace

std::vector<std::string> list_model_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) return ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".vtck") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

json run_synth(const RunConfig& config) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  auto pc = config.phantom;
  pc.workers = config.workers;
  fs::remove_all(paths.cohort_dir());
  const auto cohort = generate_phantom_cohort(pc, paths.cohort_dir());
  std::size_t scans = 0;
  for (const auto& p : cohort.patients) scans += p.scans.size();
  return {{"stage", "synth"},
          {"manifest", paths.cohort_manifest().string()},
          {"patients", cohort.patients.size()},
          {"scans", scans},
          {"seed", pc.seed},
          {"seconds", seconds_since(t0)}};
}

json run_preprocess(const RunConfig& config) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  if (!fs::exists(paths.cohort_manifest()))
    throw MissingArtifact("synth", "no cohort manifest at " + paths.cohort_manifest().string());
  const auto raw = load_cohort(paths.cohort_manifest());
  fs::remove_all(paths.preprocessed_dir());
  const auto pre = preprocess_cohort(raw, config.preprocess, paths.preprocessed_dir(), config.workers);
  return {{"stage", "preprocess"},
          {"manifest", paths.preprocessed_manifest().string()},
          {"patients", pre.cohort.patients.size()},
          {"crop", {pre.crop.rows(), pre.crop.cols()}},
          {"fingerprint", pre.fingerprint},
          {"seconds", seconds_since(t0)}};
}

json run_pairs(const RunConfig& config) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  const auto pre = require_preprocessed(paths);
  const auto pairs = build_pairs(pre, config.pairs.seed, config.pairs.include_identity);
  fs::remove_all(paths.pairs_dir());
  save_pairs(pairs, paths.pairs_dir());
  json counts = json::object();
  for (const auto& [split, tuples] : pairs.tuples) counts[to_string(split)] = tuples.size();
  return {{"stage", "pairs"},
          {"dir", paths.pairs_dir().string()},
          {"tuples", counts},
          {"train_dose_max", pairs.train_stats.dose_max},
          {"seconds", seconds_since(t0)}};
}

json run_train(const RunConfig& config, bool force) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  const auto pairs = require_pairs(paths);
  const auto pre = require_preprocessed(paths);
  const auto id = config.resolved_model_id();
  const auto ckpt = paths.checkpoint(id), report_path = paths.train_report(id);

  auto train_cfg = config.train;
  train_cfg.workers = config.workers;
  json cfg_json = to_json(config)["train"];
  cfg_json["workers"] = config.workers;

  if (!force && fs::exists(ckpt) && fs::exists(report_path)) {
    const auto prior = read_json(report_path);
    if (prior.value("config", json()) == cfg_json && prior.value("preprocess_fingerprint", "") == pre.fingerprint) {
      auto out = prior["report"];
      return {{"stage", "train"}, {"model_id", id}, {"checkpoint", ckpt.string()}, {"skipped", true},
              {"report", out}, {"seconds", seconds_since(t0)}};
    }
  }

  const auto layout = layout_for(train_cfg.family);
  auto store = std::make_shared<VolumeStore>(pre.cohort.root);
  const auto train_it = pairs.tuples.find(Split::train);
  if (train_it == pairs.tuples.end() || train_it->second.empty())
    throw MissingArtifact("pairs", "the training split has no tuples");
  SliceDataset train(train_it->second, store, pairs.train_stats.dose_max, layout);
  std::optional<SliceDataset> val;
  if (auto it = pairs.tuples.find(Split::val); it != pairs.tuples.end() && !it->second.empty())
    val.emplace(it->second, std::make_shared<VolumeStore>(pre.cohort.root), pairs.train_stats.dose_max, layout);

  TrainSetup setup;
  setup.model_id = id;
  setup.stats = pairs.train_stats;
  setup.preprocess_fingerprint = pre.fingerprint;
  setup.checkpoint = ckpt;
  setup.val = val ? &*val : nullptr;
  fs::create_directories(paths.models_dir());
  const auto result = train_model(train, train_cfg, setup);

  const auto report = json::parse(result.report.to_json());
  write_json(report_path, {{"config", cfg_json}, {"preprocess_fingerprint", pre.fingerprint}, {"report", report}});
  return {{"stage", "train"}, {"model_id", id}, {"checkpoint", ckpt.string()}, {"skipped", false},
          {"report", report}, {"seconds", seconds_since(t0)}};
}

json run_infer(const RunConfig& config, const std::optional<std::string>& only) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  auto ids = list_model_ids(paths.models_dir());
  if (only) {
    if (std::find(ids.begin(), ids.end(), *only) == ids.end())
      throw MissingArtifact("train", "no checkpoint for model '" + *only + "' in " + paths.models_dir().string());
    ids = {*only};
  }
  if (ids.empty()) throw MissingArtifact("train", "no checkpoints in " + paths.models_dir().string());
  const auto pairs = require_pairs(paths);
  const auto pre = require_preprocessed(paths);

  const auto test_ids = split_members(pairs.split, Split::test);
  const auto segment = segment_options(config);
  json models = json::array();
  for (const auto& id : ids) {
    const auto model = load_checkpoint(paths.checkpoint(id));
    const auto out_dir = paths.inference_dir() / id;
    fs::remove_all(out_dir);
    fs::create_directories(out_dir / "volumes");
    json patients = json::array();
    for (const auto& pid : test_ids) {
      const auto ctx = load_patient_context(pre, pid, model.meta.stats);
      const auto roi = LocalROI::from_mask(*ctx.ctv, config.infer.roi_pad);
      const auto& rec = pre.cohort.patient(pid);
      const double d0 = rec.scans.front().cumulative_dose_gy;

      json followups = json::array();
      for (std::size_t j = 1; j < rec.scans.size(); ++j) {
        const auto& scan = rec.scans[j];
        const double delta = scan.cumulative_dose_gy - d0;
        const auto seed = entry_seed(config.infer.seed, delta);
        const auto pred = predict_followup(model, *ctx.baseline, ctx.clinical, delta, seed, ctx.preprocess_fingerprint);
        const auto ref = "volumes/" + pid + "_t" + std::to_string(scan.time_index) + ".hdr";
        save_volume(pred, out_dir / ref);
        followups.push_back({{"time_index", scan.time_index},
                             {"delta_gy", delta},
                             {"seed", seed},
                             {"real_volume_ref", scan.volume_ref},
                             {"predicted_volume_ref", ref},
                             {"predicted_mm3", tumor_volume_otsu(pred, roi, segment)}});
      }

      const auto identity =
          predict_followup(model, *ctx.baseline, ctx.clinical, 0.0, entry_seed(config.infer.seed, 0.0),
                           ctx.preprocess_fingerprint);
      const auto traj = dose_response_trajectory(model, ctx, {pid, config.infer.trajectory_doses, config.infer.seed},
                                                 segment, config.infer.roi_pad, config.workers);
      patients.push_back({{"patient_id", pid},
                          {"baseline_mm3", tumor_volume_otsu(*ctx.baseline, roi, segment)},
                          {"identity_mae", mean_abs_diff(identity, *ctx.baseline)},
                          {"followups", followups},
                          {"trajectory", json::parse(traj.to_json())}});
    }
    json summary{{"model_id", id},
                 {"family", to_string(model.meta.spec.family)},
                 {"seed", config.infer.seed},
                 {"roi_pad", config.infer.roi_pad},
                 {"preprocess_fingerprint", pre.fingerprint},
                 {"patients", patients}};
    write_json(paths.inference_summary(id), summary);
    models.push_back({{"model_id", id}, {"summary", paths.inference_summary(id).string()},
                      {"patients", patients.size()}});
  }
  return {{"stage", "infer"}, {"models", models}, {"seconds", seconds_since(t0)}};
}

json run_eval(const RunConfig& config) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  std::vector<std::string> ids;
  for (const auto& id : list_model_ids(paths.models_dir()))
    if (fs::exists(paths.inference_summary(id))) ids.push_back(id);
  if (ids.empty()) throw MissingArtifact("infer", "no inference outputs under " + paths.inference_dir().string());
  const auto pre = require_preprocessed(paths);

  const auto segment = segment_options(config);
  VolumetricsReport report;
  json models = json::object();
  for (const auto& id : ids) {
    const auto summary = read_json(paths.inference_summary(id));
    const auto dir = paths.inference_summary(id).parent_path();
    double mae_sum = 0;
    int mae_n = 0, mono = 0, adjacent = 0;
    for (const auto& p : summary.at("patients")) {
      const std::string pid = p.at("patient_id");
      const auto& rec = pre.cohort.patient(pid);
      const auto roi = LocalROI::from_mask(load_mask(pre.cohort.resolve(rec.ctv_mask_ref)),
                                           summary.value("roi_pad", config.infer.roi_pad));
      for (const auto& f : p.at("followups")) {
        const auto real = load_volume(pre.cohort.resolve(f.at("real_volume_ref").get<std::string>()));
        const auto pred = load_volume(dir / f.at("predicted_volume_ref").get<std::string>());
        report.entries.push_back(make_entry(id, pid, f.at("delta_gy"), tumor_volume_otsu(real, roi, segment),
                                            tumor_volume_otsu(pred, roi, segment)));
      }
      mae_sum += p.at("identity_mae").get<double>();
      ++mae_n;
      // adjacent pairs in ascending dose order
      std::vector<std::pair<double, double>> pts;
      for (const auto& e : p.at("trajectory").at("entries")) pts.emplace_back(e.at("delta_gy"), e.at("volume_mm3"));
      std::sort(pts.begin(), pts.end());
      for (std::size_t k = 1; k < pts.size(); ++k, ++adjacent) mono += pts[k].second <= pts[k - 1].second;
    }
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    models[id] = {{"entries", report.for_model(id).size()},
                  {"mean_delta_v", opt(report.mean_delta_v(id))},
                  {"mean_delta_v_max_dose", config.eval.summary_max_delta_gy},
                  {"mean_delta_v_to_max_dose", opt(report.mean_delta_v(id, config.eval.summary_max_delta_gy))},
                  {"acceptability_rate", opt(report.acceptability_rate(id))},
                  {"monotone_fraction", adjacent ? json(static_cast<double>(mono) / adjacent) : json(nullptr)},
                  {"identity_mae", mae_n ? json(mae_sum / mae_n) : json(nullptr)}};
    bool finite = true;
    for (const auto& e : report.for_model(id))
      if (e.delta_v && !std::isfinite(*e.delta_v)) finite = false;
    models[id]["finite"] = finite;
  }
  const auto written = emit_report(report, paths.eval_dir());
  json files = json::array();
  for (const auto& w : written) files.push_back(w.string());
  json summary{{"stage", "eval"}, {"models", models}, {"files", files}};
  write_json(paths.eval_dir() / "summary.json", summary);
  summary["seconds"] = seconds_since(t0);
  return summary;
}

json run_profile(const RunConfig& config) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  const auto ids = list_model_ids(paths.models_dir());
  if (ids.empty()) throw MissingArtifact("train", "no checkpoints in " + paths.models_dir().string());
  const auto pre = require_preprocessed(paths);

  std::map<std::string, double> accuracy;
  if (const auto s = paths.eval_dir() / "summary.json"; fs::exists(s)) {
    const auto eval = read_json(s);
    for (const auto& [id, m] : eval.at("models").items())
      if (m.at("mean_delta_v").is_number()) accuracy[id] = m.at("mean_delta_v");
  }

  std::vector<MacsReport> reports;
  json models = json::array();
  for (const auto& id : ids) {
    const auto model = load_checkpoint(paths.checkpoint(id));
    auto r = profile_model(*model.model, pre.crop.rows(), pre.crop.cols(), id);
    models.push_back({{"model_id", id},
                      {"family", to_string(r.family)},
                      {"params", r.params},
                      {"train_gmacs", r.train_gmacs()},
                      {"infer_gmacs", r.infer_gmacs()},
                      {"reduction_percent", r.reduction_percent()},
                      {"components", r.components}});
    reports.push_back(std::move(r));
  }
  const auto written = emit_cost_report(reports, accuracy, paths.profile_dir());
  json files = json::array();
  for (const auto& w : written) files.push_back(w.string());
  return {{"stage", "profile"}, {"input", {pre.crop.rows(), pre.crop.cols()}}, {"models", models},
          {"files", files}, {"seconds", seconds_since(t0)}};
}

json run_plot(const RunConfig& config) {
  const auto t0 = Clock::now();
  const auto paths = config.paths();
  std::vector<std::string> ids;
  for (const auto& id : list_model_ids(paths.models_dir()))
    if (fs::exists(paths.inference_summary(id))) ids.push_back(id);
  if (ids.empty()) throw MissingArtifact("infer", "no inference outputs under " + paths.inference_dir().string());
  const auto pre = require_preprocessed(paths);
  fs::create_directories(paths.plots_dir());
  json files = json::array();

  // Training curves, one chart per model.
  for (const auto& id : ids) {
    if (!fs::exists(paths.train_report(id))) continue;
    const auto curves = read_json(paths.train_report(id)).at("report").at("curves");
    std::vector<render::Series> series;
    double ymax = 0;
    std::size_t epochs = 1;
    for (const auto& [name, values] : curves.items()) {
      render::Series s{name, {}, {}};
      for (std::size_t e = 0; e < values.size(); ++e) {
        s.x.push_back(static_cast<double>(e + 1));
        s.y.push_back(values[e].get<double>());
        ymax = std::max(ymax, s.y.back());
      }
      epochs = std::max(epochs, values.size());
      series.push_back(std::move(s));
    }
    const auto x = linear_axis("epoch", 1, std::max(2.0, static_cast<double>(epochs)));
    const auto y = linear_axis("loss", 0, ymax > 0 ? ymax * 1.1 : 1.0);
    const auto path = paths.plots_dir() / (id + "_curves.png");
    render::line_chart(series, x, y, id + " training").write_png(path);
    files.push_back(path.string());
  }

  // Qualitative grid per test patient: GT follow-ups then each model.
  std::map<std::string, json> by_model;
  for (const auto& id : ids) by_model[id] = read_json(paths.inference_summary(id));
  for (const auto& p : by_model.begin()->second.at("patients")) {
    const std::string pid = p.at("patient_id");
    if (p.at("followups").empty()) continue;
    const auto& rec = pre.cohort.patient(pid);
    const auto ctv = load_mask(pre.cohort.resolve(rec.ctv_mask_ref));
    const int k = central_slice(ctv);
    std::vector<float> ctv_plane(ctv.slice(k).begin(), ctv.slice(k).end());
    std::vector<std::string> headers{"baseline"};
    GridRow gt{"GT", {plane_of(load_volume(pre.cohort.resolve(rec.scans.front().volume_ref)), k)}};
    for (const auto& f : p.at("followups")) {
      headers.push_back(render::format_number(f.at("delta_gy").get<double>(), 3) + " Gy");
      gt.planes.push_back(plane_of(load_volume(pre.cohort.resolve(f.at("real_volume_ref").get<std::string>())), k));
    }
    std::vector<GridRow> rows{gt};
    for (const auto& [id, summary] : by_model) {
      const auto dir = paths.inference_summary(id).parent_path();
      GridRow row{id, {gt.planes.front()}};
      for (const auto& q : summary.at("patients"))
        if (q.at("patient_id") == pid)
          for (const auto& f : q.at("followups"))
            row.planes.push_back(plane_of(load_volume(dir / f.at("predicted_volume_ref").get<std::string>()), k));
      if (row.planes.size() == gt.planes.size()) rows.push_back(std::move(row));
    }
    const auto path = paths.plots_dir() / (pid + "_slices.png");
    emit_slice_grid(path, headers, rows, ctv_plane, ctv.shape().rows, ctv.shape().cols);
    files.push_back(path.string());
  }

  // Trajectories: volume against dose, one line per model and patient.
  std::vector<render::Series> series;
  double vmax = 0, dmax = 0;
  for (const auto& [id, summary] : by_model)
    for (const auto& p : summary.at("patients")) {
      render::Series s{id + " " + p.at("patient_id").get<std::string>(), {}, {}};
      for (const auto& e : p.at("trajectory").at("entries")) {
        s.x.push_back(e.at("delta_gy"));
        s.y.push_back(e.at("volume_mm3"));
        vmax = std::max(vmax, s.y.back());
        dmax = std::max(dmax, s.x.back());
      }
      series.push_back(std::move(s));
    }
  const auto x = linear_axis("dose increment (Gy)", 0, std::max(1.0, dmax * 1.05));
  const auto y = linear_axis("predicted volume (mm3)", 0, vmax > 0 ? vmax * 1.1 : 1.0);
  const auto traj = paths.plots_dir() / "trajectories.png";
  render::line_chart(series, x, y, "dose-response trajectories", 760, 460).write_png(traj);
  files.push_back(traj.string());
  return {{"stage", "plot"}, {"files", files}, {"seconds", seconds_since(t0)}};
}

}  // namespace vt
