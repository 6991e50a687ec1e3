#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>

#include "vt/pipeline.hpp"

namespace oracle {

std::vector<double> pairwise_increments(const std::vector<vt::PatientRecord>& patients, bool identity) {
  std::vector<double> out;
  for (const auto& p : patients) {
    const auto& s = p.scans;
    for (std::size_t a = 0; a < s.size(); ++a)
      for (std::size_t b = 0; b < s.size(); ++b) {
        if (s[a].time_index < s[b].time_index) out.push_back(s[b].cumulative_dose_gy - s[a].cumulative_dose_gy);
        if (identity && a == b) out.push_back(0.0);
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t expected_tuple_count(const std::vector<vt::PatientRecord>& patients, bool identity) {
  std::size_t n = 0;
  for (const auto& p : patients) {
    const std::size_t k = p.scans.size();
    n += k * (k - 1) / 2 + (identity ? k : 0);
  }
  return n;
}

int exhaustive_otsu(std::span<const std::int64_t> h) {
  const int bins = static_cast<int>(h.size());
  int best = -1;
  double best_var = -1;
  for (int k = 0; k + 1 < bins; ++k) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i <= k; ++i) n0 += h[i], s0 += static_cast<double>(i) * h[i];
    for (int i = k + 1; i < bins; ++i) n1 += h[i], s1 += static_cast<double>(i) * h[i];
    if (n0 == 0 || n1 == 0) continue;
    const double n = n0 + n1;
    const double var = (n0 / n) * (n1 / n) * std::pow(s0 / n0 - s1 / n1, 2);
    if (var > best_var) best_var = var, best = k;
  }
  return best;
}

std::size_t shell_voxels(const vt::PhantomTruth& t, double dose, vt::GridShape g, vt::Spacing sp) {
  const double s = std::cbrt(std::exp(-t.alpha * dose / 60.0));
  const double a[3] = {t.axes_mm[0] * s, t.axes_mm[1] * s, t.axes_mm[2] * s};
  const double c[3] = {t.center_mm[0], t.center_mm[1], t.center_mm[2]};
  const double step[3] = {sp.x, sp.y, sp.z};
  std::size_t n = 0;
  for (int k = 0; k < g.slices; ++k)
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) {
        const int idx[3] = {j, i, k};
        double fmin = 0, fmax = 0;
        for (int d = 0; d < 3; ++d) {
          const double lo = (idx[d] * step[d] - c[d]) / a[d], hi = ((idx[d] + 1) * step[d] - c[d]) / a[d];
          const double nearest = std::clamp(0.0, lo, hi);
          fmin += nearest * nearest;
          fmax += std::max(lo * lo, hi * hi);
        }
        if (fmin <= 1.0 && fmax >= 1.0) ++n;
      }
  return n;
}

double central_difference(const std::function<double(std::span<const float>)>& f, std::vector<float> x,
                          std::size_t i, double h) {
  const float orig = x[i];
  x[i] = static_cast<float>(orig + h);
  const double up = f(x);
  x[i] = static_cast<float>(orig - h);
  const double down = f(x);
  const double actual_h = (static_cast<double>(static_cast<float>(orig + h)) - static_cast<float>(orig - h)) / 2;
  return (up - down) / (2 * actual_h);
}

std::int64_t walk_parameters(const vt::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.local_parameters()) {
    std::int64_t e = 1;
    for (int d : p.tensor.shape()) e *= d;
    n += e;
  }
  for (const auto* child : m.children()) n += walk_parameters(*child);
  return n;
}

int patch_side(int input) {
  int s = input;
  for (int i = 0; i < 3; ++i) s = (s + 2 * 1 - 4) / 2 + 1;
  return s - 3 + 1;
}

vt::RunConfig tiny_config(const std::filesystem::path& dir, int patients) {
  vt::RunConfig c;
  c.workdir = dir.string();
  c.phantom.n_patients = patients;
  c.phantom.seed = 7;
  c.pairs.seed = 1;
  c.train.epochs = 1;
  c.train.batch_size = 8;
  c.train.base_channels = 8;
  c.train.n_res_blocks = 1;
  c.train.embed_dim = 16;
  c.train.context_channels = 8;
  c.train.diffusion_steps = 4;
  c.train.seed = 3;
  c.infer.trajectory_doses = {10, 30, 60};
  c.validate();
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void prepare_data(const vt::RunConfig& config) {
  static std::mutex mutex;
  static std::set<std::string> done;
  std::lock_guard lock(mutex);
  if (done.count(config.workdir)) return;
  vt::run_synth(config);
  vt::run_preprocess(config);
  vt::run_pairs(config);
  done.insert(config.workdir);
}

}  // namespace oracle
