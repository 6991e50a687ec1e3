#include "vt/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

namespace vt {

using nlohmann::json;

namespace {

// One traversal drives both serialisation directions.
class Writer {
 public:
  explicit Writer(json& j) : j_(j) {}

  template <typename T>
  void field(const char* key, T& value) {
    j_[key] = value;
  }
  void field(const char* key, GridShape& g) { j_[key] = {g.rows, g.cols, g.slices}; }
  void field(const char* key, Spacing& s) { j_[key] = {s.x, s.y, s.z}; }
  void field(const char* key, Family& f) { j_[key] = to_string(f); }
  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    json sub = json::object();
    Writer w(sub);
    fn(w);
    j_[key] = std::move(sub);
  }

 private:
  json& j_;
};

class Reader {
 public:
  Reader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("config key '" + where() + "' must be an object");
  }

  template <typename T>
  void field(const char* key, T& value) {
    if (const auto* v = take(key)) {
      try {
        value = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key '" + path(key) + "' has the wrong type (got " + v->dump() + ")");
      }
    }
  }
  void field(const char* key, GridShape& g) {
    std::vector<int> v{g.rows, g.cols, g.slices};
    field(key, v);
    if (v.size() != 3) throw ConfigError("config key '" + path(key) + "' needs 3 entries [rows, cols, slices]");
    g = {v[0], v[1], v[2]};
  }
  void field(const char* key, Spacing& s) {
    std::vector<double> v{s.x, s.y, s.z};
    field(key, v);
    if (v.size() != 3) throw ConfigError("config key '" + path(key) + "' needs 3 entries [x, y, z]");
    s = {v[0], v[1], v[2]};
  }
  void field(const char* key, Family& f) {
    std::string name = to_string(f);
    field(key, name);
    try {
      f = parse_family(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config key '" + path(key) + "': " + e.what());
    }
  }
  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    if (const auto* v = take(key)) {
      Reader r(*v, path(key));
      fn(r);
      r.finish();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path(k.c_str()) + "'");
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string path(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  std::string where() const { return prefix_.empty() ? "<root>" : prefix_; }

  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

template <typename V>
void visit(V& v, RunConfig& c) {
  v.field("workdir", c.workdir);
  v.field("workers", c.workers);
  v.section("phantom", [&](auto& s) {
    auto& p = c.phantom;
    s.field("n_patients", p.n_patients);
    s.field("grid", p.grid);
    s.field("spacing", p.spacing);
    s.field("followups_mean", p.followups_mean);
    s.field("followups_sd", p.followups_sd);
    s.field("followups_min", p.followups_min);
    s.field("followups_max", p.followups_max);
    s.field("fraction_sizes_gy", p.fraction_sizes_gy);
    s.field("prescribed_dose_gy", p.prescribed_dose_gy);
    s.field("max_cumulative_dose_gy", p.max_cumulative_dose_gy);
    s.field("boost_probability", p.boost_probability);
    s.field("alpha_min", p.alpha_min);
    s.field("alpha_max", p.alpha_max);
    s.field("alpha_per_ct_stage", p.alpha_per_ct_stage);
    s.field("axis_xy_min_mm", p.axis_xy_min_mm);
    s.field("axis_xy_max_mm", p.axis_xy_max_mm);
    s.field("axis_z_min_mm", p.axis_z_min_mm);
    s.field("axis_z_max_mm", p.axis_z_max_mm);
    s.field("center_jitter_mm", p.center_jitter_mm);
    s.field("background_hu", p.background_hu);
    s.field("tumor_hu", p.tumor_hu);
    s.field("texture_amplitude_hu", p.texture_amplitude_hu);
    s.field("texture_correlation_vox", p.texture_correlation_vox);
    s.field("age_min", p.age_min);
    s.field("age_max", p.age_max);
    s.field("n_histology", p.n_histology);
    s.field("seed", p.seed);
  });
  v.section("preprocess", [&](auto& s) {
    s.field("target_spacing", c.preprocess.target_spacing);
    s.field("crop_margin", c.preprocess.crop.margin);
    s.field("crop_align", c.preprocess.crop.align);
  });
  v.section("pairs", [&](auto& s) {
    s.field("seed", c.pairs.seed);
    s.field("include_identity", c.pairs.include_identity);
  });
  v.section("train", [&](auto& s) {
    auto& t = c.train;
    s.field("model_id", c.model_id);
    s.field("family", t.family);
    s.field("epochs", t.epochs);
    s.field("batch_size", t.batch_size);
    s.field("lr_generator", t.lr_generator);
    s.field("lr_discriminator", t.lr_discriminator);
    s.field("lr_diffusion", t.lr_diffusion);
    s.field("seed", t.seed);
    s.field("checkpoint_every", t.checkpoint_every);
    s.field("device", t.device);
    s.field("base_channels", t.base_channels);
    s.field("n_res_blocks", t.n_res_blocks);
    s.field("embed_dim", t.embed_dim);
    s.field("context_channels", t.context_channels);
    s.field("diffusion_steps", t.diffusion_steps);
    s.field("beta_start", t.beta_start);
    s.field("beta_end", t.beta_end);
    s.section("loss", [&](auto& l) {
      l.field("lambda_tumor", t.loss.lambda_tumor);
      l.field("adversarial_weight", t.loss.adversarial_weight);
      l.field("l1_weight", t.loss.l1_weight);
      l.field("cycle_weight", t.loss.cycle_weight);
    });
  });
  v.section("infer", [&](auto& s) {
    s.field("seed", c.infer.seed);
    s.field("trajectory_doses", c.infer.trajectory_doses);
    s.field("roi_pad", c.infer.roi_pad);
  });
  v.section("eval", [&](auto& s) {
    s.field("otsu_bins", c.eval.otsu_bins);
    s.field("largest_component", c.eval.largest_component);
    s.field("summary_max_delta_gy", c.eval.summary_max_delta_gy);
  });
  v.section("service", [&](auto& s) {
    s.field("host", c.service.host);
    s.field("port", c.service.port);
    s.field("model_dir", c.service.model_dir);
    s.field("workers", c.service.workers);
  });
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (workdir.empty()) fail("workdir must not be empty");
  if (workers < 1) fail("workers must be >= 1");
  try {
    phantom.validate();
  } catch (const std::exception& e) {
    fail(std::string("phantom: ") + e.what());
  }
  if (!(preprocess.target_spacing.x > 0 && preprocess.target_spacing.y > 0 && preprocess.target_spacing.z > 0))
    fail("preprocess.target_spacing must be positive");
  if (preprocess.crop.margin < 0) fail("preprocess.crop_margin must be >= 0");
  if (preprocess.crop.align < 1) fail("preprocess.crop_align must be >= 1");
  try {
    train.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  if (!(train.beta_start > 0 && train.beta_end >= train.beta_start && train.beta_end < 1))
    fail("train: need 0 < beta_start <= beta_end < 1");
  for (char ch : model_id)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.'))
      fail("train.model_id may only contain letters, digits, '_', '-' and '.'");
  if (infer.trajectory_doses.empty()) fail("infer.trajectory_doses must not be empty");
  for (double d : infer.trajectory_doses)
    if (!(d >= 0) || !std::isfinite(d)) fail("infer.trajectory_doses must be finite and >= 0");
  if (infer.roi_pad < 0) fail("infer.roi_pad must be >= 0");
  if (eval.otsu_bins < 2) fail("eval.otsu_bins must be >= 2");
  if (!(eval.summary_max_delta_gy > 0)) fail("eval.summary_max_delta_gy must be positive");
  if (service.port < 0 || service.port > 65535) fail("service.port must be in [0, 65535]");
  if (service.workers < 1) fail("service.workers must be >= 1");
}

json to_json(const RunConfig& config) {
  json j = json::object();
  Writer w(j);
  auto copy = config;
  visit(w, copy);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  visit(r, c);
  r.finish();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const auto key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + file.string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(j, o);
  auto c = run_config_from_json(j);
  c.validate();
  return c;
}

}  // namespace vt
