#include "vt/profiling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "vt/nn/tensor.hpp"
#include "vt/render.hpp"

namespace vt {

using nn::Tensor;

std::int64_t layer_macs(const nn::LayerCall& call) {
  const auto& m = *call.layer;
  if (const auto* conv = dynamic_cast<const nn::Conv2d*>(&m)) {
    const auto& o = call.output;
    return static_cast<std::int64_t>(o.at(0)) * conv->in_channels * conv->out_channels * conv->kernel * conv->kernel *
           o.at(2) * o.at(3);
  }
  if (const auto* fc = dynamic_cast<const nn::Linear*>(&m)) {
    const std::int64_t rows = call.input.size() == 2 ? call.input[0] : 1;
    return rows * fc->in_features * fc->out_features;
  }
  if (dynamic_cast<const nn::GroupNorm*>(&m)) return 0;
  throw UnsupportedLayer("count_macs: unsupported layer '" + m.name() + "' of kind '" + m.kind() + "'");
}

std::int64_t count_macs(const std::vector<nn::LayerCall>& calls) {
  std::int64_t total = 0;
  for (const auto& c : calls) total += layer_macs(c);
  return total;
}

std::vector<nn::LayerCall> trace_layers(const std::function<void()>& fn) {
  nn::NoGradGuard ng;
  nn::LayerTrace trace;
  fn();
  return trace.calls();
}

std::int64_t count_params(const nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += static_cast<std::int64_t>(p.tensor.numel());
  return n;
}

MacsReport profile_model(const GenerativeModel& model, int rows, int cols, const std::string& model_id) {
  const auto& spec = model.spec();
  MacsReport r;
  r.model_id = model_id;
  r.family = spec.family;
  r.params = count_params(model);
  const auto x = Tensor::full({1, spec.in_channels, rows, cols}, 0.5f);
  const auto h = Tensor::full({1, spec.condition_dim}, 0.5f);
  const auto img = Tensor::full({1, 1, rows, cols}, 0.5f);

  switch (spec.family) {
    case Family::paired_gan: {
      const auto& gan = static_cast<const PairedGan&>(model);
      const auto g = count_macs(trace_layers([&] { gan.generator().forward(x, h); }));
      const auto d = count_macs(trace_layers([&] { gan.discriminator().forward(img); }));
      r.components = {{"generator", g}, {"discriminator", d}};
      r.train_forward_macs = g + d;
      r.infer_macs = g;
      break;
    }
    case Family::cycle_gan: {
      const auto& gan = static_cast<const CycleGan&>(model);
      const auto hf = CycleGan::with_direction(h, false);
      const auto hb = CycleGan::with_direction(h, true);
      const auto gf = count_macs(trace_layers([&] { gan.forward_generator().forward(x, hf); }));
      const auto gb = count_macs(trace_layers([&] { gan.backward_generator().forward(img, hb); }));
      const auto da = count_macs(trace_layers([&] { gan.discriminator_a().forward(img); }));
      const auto db = count_macs(trace_layers([&] { gan.discriminator_b().forward(img); }));
      r.components = {{"g_forward", gf}, {"g_backward", gb}, {"d_a", da}, {"d_b", db}};
      // both cycles: translate and reconstruct in each direction
      r.train_forward_macs = 2 * (gf + gb) + da + db;
      r.infer_macs = gf;
      break;
    }
    case Family::diffusion_25d: {
      const auto& dm = static_cast<const ResidualDiffusion&>(model);
      Tensor context;
      const auto enc = count_macs(trace_layers([&] { context = dm.encoder().forward(x); }));
      const auto den = count_macs(trace_layers([&] {
        dm.denoiser().forward(img, context, {1}, nn::columns(h, spec.clinical_dim(), 1),
                              nn::columns(h, 0, spec.clinical_dim()));
      }));
      r.components = {{"context_encoder", enc}, {"denoiser_step", den}};
      r.train_forward_macs = enc + den;
      r.infer_macs = enc + static_cast<std::int64_t>(dm.schedule().steps()) * den;
      break;
    }
  }
  r.train_macs = 3 * r.train_forward_macs;
  return r;
}

std::vector<std::filesystem::path> emit_cost_report(const std::vector<MacsReport>& reports,
                                                    const std::map<std::string, double>& mean_delta_v,
                                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto table = dir / "costs.csv";
  {
    std::ofstream out(table, std::ios::trunc);
    out << "# training cost = forward passes of one optimisation step x3 (backward approximated as 2x forward)\n";
    out << "model,params,train_gmacs,infer_gmacs,reduction_pct\n";
    out << std::setprecision(10);
    for (const auto& r : reports)
      out << r.model_id << ',' << r.params << ',' << r.train_gmacs() << ',' << r.infer_gmacs() << ','
          << r.reduction_percent() << '\n';
    if (!out) throw std::runtime_error("cannot write " + table.string());
  }
  written.push_back(table);
  if (reports.empty()) return written;

  double cmin = 1e300, cmax = 0, ymax = 30, pmax = 1;
  for (const auto& r : reports) {
    cmin = std::min({cmin, r.train_gmacs(), r.infer_gmacs()});
    cmax = std::max({cmax, r.train_gmacs(), r.infer_gmacs()});
    pmax = std::max(pmax, static_cast<double>(r.params));
    if (auto it = mean_delta_v.find(r.model_id); it != mean_delta_v.end()) ymax = std::max(ymax, it->second);
  }
  const double lo = std::pow(10.0, std::floor(std::log10(cmin)) - 0.2);
  const double hi = std::pow(10.0, std::ceil(std::log10(cmax)) + 0.2);
  render::AxisSpec x{"GMACs per sample (log)", lo, hi, true, {}};
  for (double t = std::pow(10.0, std::ceil(std::log10(lo))); t <= hi; t *= 10) x.ticks.push_back(t);
  const double top = std::ceil(ymax * 1.15 / 10.0) * 10.0;
  render::AxisSpec y{"mean |dV| (%)", 0, top, false, {}};
  for (int t = 0; t <= 5; ++t) y.ticks.push_back(top * t / 5.0);

  render::Canvas canvas(720, 460);
  render::ChartFrame frame(canvas, x, y, "accuracy vs compute");
  std::vector<std::pair<std::string, render::Rgba>> legend;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    auto colour = render::series_colour(i);
    const auto it = mean_delta_v.find(r.model_id);
    const double dv = it == mean_delta_v.end() ? 0.0 : it->second;
    const int radius = 4 + static_cast<int>(std::lround(26.0 * r.params / pmax));
    auto dark = colour;
    dark.a = 200;
    auto light = colour;
    light.a = 90;
    canvas.disc(frame.px(r.train_gmacs()), frame.py(dv), radius, dark);
    canvas.disc(frame.px(r.infer_gmacs()), frame.py(dv), radius, light);
    const auto label = r.model_id + " " + render::format_number(r.reduction_percent(), 3) + "%";
    canvas.text(frame.px(r.infer_gmacs()) + radius + 3, frame.py(dv) - 3, label, render::kBlack);
    legend.emplace_back(r.model_id + " (dark train, light infer)", colour);
  }
  frame.legend(legend);
  const auto plot = dir / "cost_bubbles.png";
  canvas.write_png(plot);
  written.push_back(plot);
  return written;
}

}  // namespace vt
