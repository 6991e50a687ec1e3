// vt: command-line entry point for the virtual treatment pipeline.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vt/config.hpp"
#include "vt/pipeline.hpp"
#include "vt/service.hpp"
#include "vt/training.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kNumerical = 4 };

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<int> workers;
  std::optional<std::string> workdir;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_file, "JSON run config (defaults apply to missing keys)");
  app->add_option("--set", c.sets, "override a config key, e.g. --set train.epochs=5 (repeatable)")
      ->take_all()
      ->allow_extra_args(false);
  app->add_option("--workers", c.workers, "worker threads for parallel stages")->check(CLI::PositiveNumber);
  app->add_option("--workdir", c.workdir, "directory holding every stage's outputs");
}

vt::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dose-conditioned CT follow-up forecasting on phantom cohorts"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "print the resolved config as JSON and exit");

  Common common;
  add_common(&app, common);

  auto* synth = app.add_subcommand("synth", "generate a phantom cohort");
  std::optional<int> patients;
  std::optional<unsigned long long> synth_seed;
  synth->add_option("--patients", patients, "number of patients (phantom.n_patients)");
  synth->add_option("--seed", synth_seed, "generator seed (phantom.seed)");

  auto* preprocess = app.add_subcommand("preprocess", "normalise, resample and crop the cohort");

  auto* pairs = app.add_subcommand("pairs", "split patients and enumerate training tuples");
  std::optional<unsigned long long> pairs_seed;
  pairs->add_option("--seed", pairs_seed, "split seed (pairs.seed)");

  auto* train = app.add_subcommand("train", "train one model family");
  std::optional<std::string> family, model_id;
  std::optional<int> epochs;
  std::optional<unsigned long long> train_seed;
  bool force = false;
  train->add_option("--family", family, "paired_gan | cycle_gan | diffusion_25d (train.family)");
  train->add_option("--model-id", model_id, "checkpoint name (train.model_id; default: the family)");
  train->add_option("--epochs", epochs, "epochs (train.epochs)")->check(CLI::PositiveNumber);
  train->add_option("--seed", train_seed, "training seed (train.seed)");
  train->add_flag("--force", force, "retrain even when a matching checkpoint exists");

  auto* infer = app.add_subcommand("infer", "predict test-split follow-ups and dose trajectories");
  std::optional<std::string> infer_model;
  std::optional<unsigned long long> infer_seed;
  infer->add_option("--model", infer_model, "only this checkpoint id (default: every checkpoint)");
  infer->add_option("--seed", infer_seed, "query seed (infer.seed)");

  auto* eval = app.add_subcommand("eval", "volumetric evaluation of inference outputs");
  bool largest = false;
  eval->add_flag("--largest-component", largest, "keep only the largest connected Otsu component");

  auto* profile = app.add_subcommand("profile", "MAC and parameter counts per checkpoint");

  auto* serve = app.add_subcommand("serve", "HTTP inference service (/v1)");
  std::optional<std::string> host, model_dir;
  std::optional<int> port;
  serve->add_option("--host", host, "bind address (service.host)");
  serve->add_option("--port", port, "port, 0 for any free port (service.port)")->envname("VT_PORT");
  serve->add_option("--model-dir", model_dir, "checkpoint directory (service.model_dir)")->envname("VT_MODEL_DIR");

  auto* plot = app.add_subcommand("plot", "training curves, slice grids and trajectory plots");

  for (auto* sub : {synth, preprocess, pairs, train, infer, eval, profile, serve, plot}) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  using nlohmann::json;
  vt::RunConfig config;
  try {
    auto sets = common.sets;
    auto set = [&sets](const std::string& key, const json& v) { sets.push_back(key + "=" + v.dump()); };
    if (common.workers) set("workers", *common.workers);
    if (common.workdir) set("workdir", *common.workdir);
    if (patients) set("phantom.n_patients", *patients);
    if (synth_seed) set("phantom.seed", *synth_seed);
    if (pairs_seed) set("pairs.seed", *pairs_seed);
    if (family) set("train.family", *family);
    if (model_id) set("train.model_id", *model_id);
    if (epochs) set("train.epochs", *epochs);
    if (train_seed) set("train.seed", *train_seed);
    if (infer_seed) set("infer.seed", *infer_seed);
    if (largest) set("eval.largest_component", true);
    if (host) set("service.host", *host);
    if (port) set("service.port", *port);
    if (model_dir) set("service.model_dir", *model_dir);
    config = vt::load_run_config(common.config_file, sets);
  } catch (const vt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  }
  if (dump_config) {
    std::cout << vt::to_json(config).dump(2) << '\n';
    return kOk;
  }

  try {
    json summary;
    if (synth->parsed()) summary = vt::run_synth(config);
    else if (preprocess->parsed()) summary = vt::run_preprocess(config);
    else if (pairs->parsed()) summary = vt::run_pairs(config);
    else if (train->parsed()) summary = vt::run_train(config, force);
    else if (infer->parsed()) summary = vt::run_infer(config, infer_model);
    else if (eval->parsed()) summary = vt::run_eval(config);
    else if (profile->parsed()) summary = vt::run_profile(config);
    else if (plot->parsed()) summary = vt::run_plot(config);
    else if (serve->parsed()) {
      auto service = std::make_shared<const vt::InferenceService>(config);
      vt::HttpServer server(service, config.service.workers);
      const int bound = server.bind(config.service.host, config.service.port);
      std::cout << json{{"stage", "serve"},
                        {"host", config.service.host},
                        {"port", bound},
                        {"models", service->model_count()}}
                       .dump()
                << std::endl;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen();
      g_server = nullptr;
      return kOk;
    }
    summary["status"] = "ok";
    std::cout << summary.dump() << '\n';
    return kOk;
  } catch (const vt::MissingArtifact& e) {
    std::cerr << "missing artifact from stage '" << e.stage() << "': " << e.what() << '\n';
    std::cout << json{{"status", "error"}, {"missing_stage", e.stage()}, {"message", e.what()}}.dump() << '\n';
    return kMissing;
  } catch (const vt::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    std::cout << json{{"status", "error"}, {"numerical_failure", e.what()}}.dump() << '\n';
    return kNumerical;
  } catch (const vt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
