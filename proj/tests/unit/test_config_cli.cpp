#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "vt/config.hpp"

using namespace vt;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(VT_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (auto n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json last_json_line(const std::string& out) {
  auto end = out.find_last_not_of('\n');
  auto start = out.rfind('\n', end);
  return json::parse(out.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config JSON round-trip and overrides") {
  RunConfig c;
  c.train.epochs = 7;
  c.infer.trajectory_doses = {5, 15};
  const auto back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  auto j = to_json(c);
  apply_override(j, "train.lr_diffusion=0.0005");
  apply_override(j, "phantom.grid=[48,48,10]");
  apply_override(j, "train.family=paired_gan");
  apply_override(j, "workdir=elsewhere");
  const auto o = run_config_from_json(j);
  CHECK(o.train.lr_diffusion == doctest::Approx(5e-4));
  CHECK(o.phantom.grid.rows == 48);
  CHECK(o.phantom.grid.slices == 10);
  CHECK(o.train.family == Family::paired_gan);
  CHECK(o.workdir == "elsewhere");
  CHECK(o.resolved_model_id() == "paired_gan");

  auto unknown = j;
  apply_override(unknown, "train.nonsense=1");
  CHECK_THROWS_WITH_AS(run_config_from_json(unknown), doctest::Contains("train.nonsense"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
  auto bad = to_json(c);
  bad["train"]["epochs"] = "many";
  CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);
  bad = to_json(c);
  bad["extra"] = 1;
  CHECK_THROWS_WITH_AS(run_config_from_json(bad), doctest::Contains("extra"), ConfigError);
  bad = to_json(c);
  bad["train"]["epochs"] = 0;
  CHECK_THROWS(run_config_from_json(bad).validate());
}

TEST_CASE("stage paths") {
  RunConfig c;
  c.workdir = "w";
  const auto p = c.paths();
  CHECK(p.cohort_manifest() == std::filesystem::path("w/cohort/manifest.json"));
  CHECK(p.checkpoint("m") == std::filesystem::path("w/models/m.vtck"));
  CHECK(p.inference_summary("m") == std::filesystem::path("w/inference/m/summary.json"));
  CHECK(c.service_model_dir() == std::filesystem::path("w/models"));
}

TEST_CASE("cli: help, config errors and missing stages") {
  for (const auto* sub : {"synth", "preprocess", "pairs", "train", "infer", "eval", "profile", "serve", "plot"}) {
    const auto r = cli(std::string(sub) + " --help");
    CHECK(r.code == 0);
    CHECK(r.out.find("--workdir") != std::string::npos);
  }
  CHECK(cli("--help").code == 0);
  CHECK(cli("bogus").code == 2);

  const auto dir = oracle::scratch_dir("cli_errors");
  const auto wd = (dir / "run").string();
  CHECK(cli("synth --workdir " + wd + " --set train.nonsense=1").code == 2);
  CHECK(cli("synth --workdir " + wd + " --set train.epochs=0").code == 2);
  CHECK(cli("synth --workdir " + wd + " -c " + (dir / "absent.json").string()).code == 2);

  const auto r = cli("eval --workdir " + wd);
  CHECK(r.code == 3);
  CHECK(last_json_line(r.out).at("missing_stage") == "infer");
  const auto t = cli("train --workdir " + wd);
  CHECK(t.code == 3);
  CHECK(last_json_line(t.out).at("missing_stage") == "pairs");
}

TEST_CASE("cli: synth twice gives identical bytes; dump-config applies overrides") {
  const auto dir = oracle::scratch_dir("cli_synth");
  const auto wd = (dir / "run").string();
  const auto a = cli("synth --workdir " + wd + " --patients 3 --seed 4");
  REQUIRE(a.code == 0);
  CHECK(last_json_line(a.out).at("status") == "ok");
  const auto first = slurp(dir / "run" / "cohort" / "manifest.json");
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "run"))
    if (e.is_regular_file()) files[e.path().string()] = slurp(e.path());
  REQUIRE(cli("synth --workdir " + wd + " --patients 3 --seed 4").code == 0);
  std::size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "run"))
    if (e.is_regular_file()) {
      ++n;
      CHECK(files.at(e.path().string()) == slurp(e.path()));
    }
  CHECK(n == files.size());
  CHECK(first == slurp(dir / "run" / "cohort" / "manifest.json"));

  std::ofstream(dir / "cfg.json") << R"({"train": {"epochs": 9}, "workers": 1})";
  const auto d = cli("--dump-config synth -c " + (dir / "cfg.json").string() + " --set train.seed=12");
  REQUIRE(d.code == 0);
  const auto j = json::parse(d.out);
  CHECK(j.at("train").at("epochs") == 9);
  CHECK(j.at("train").at("seed") == 12);
}
