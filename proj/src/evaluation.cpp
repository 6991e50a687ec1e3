#include "vt/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "vt/render.hpp"

namespace vt {

int OtsuResult::bin_of(double v) const {
  const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
  return std::clamp(b, 0, bins - 1);
}

int otsu_bin(std::span<const std::int64_t> histogram) {
  const int n_bins = static_cast<int>(histogram.size());
  std::int64_t total = 0, total_sum = 0;
  int occupied = 0;
  for (int i = 0; i < n_bins; ++i) {
    if (histogram[i] < 0) throw OtsuError("histogram has a negative count");
    total += histogram[i];
    total_sum += histogram[i] * i;
    occupied += histogram[i] > 0;
  }
  if (occupied < 2) throw OtsuError("constant region: Otsu threshold needs at least two distinct intensity bins");

  std::int64_t c0 = 0, s0 = 0;
  int best = -1;
  double best_var = -1.0;
  for (int k = 0; k + 1 < n_bins; ++k) {
    c0 += histogram[k];
    s0 += histogram[k] * k;
    const std::int64_t c1 = total - c0, s1 = total_sum - s0;
    if (c0 == 0 || c1 == 0) continue;
    const double w0 = static_cast<double>(c0) / total, w1 = static_cast<double>(c1) / total;
    const double mu0 = static_cast<double>(s0) / c0, mu1 = static_cast<double>(s1) / c1;
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best = k;
    }
  }
  return best;
}

OtsuResult otsu_threshold(std::span<const float> values, int bins) {
  if (bins < 2) throw std::invalid_argument("otsu_threshold: need at least 2 bins");
  if (values.empty()) throw OtsuError("otsu_threshold: empty region");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (!std::isfinite(*mn) || !std::isfinite(*mx)) throw OtsuError("otsu_threshold: non-finite intensity");
  if (*mn == *mx) throw OtsuError("constant region: Otsu threshold needs at least two distinct values");
  OtsuResult r;
  r.lo = *mn;
  r.hi = *mx;
  r.bins = bins;
  std::vector<std::int64_t> hist(bins, 0);
  for (float v : values) ++hist[r.bin_of(v)];
  r.bin = otsu_bin(hist);
  r.threshold = r.lo + (r.hi - r.lo) * (r.bin + 1) / bins;
  return r;
}

LocalROI LocalROI::from_mask(const Mask& ctv, int pad) {
  if (pad < 0) throw std::invalid_argument("ROI padding must be >= 0");
  auto box = bounding_box(ctv);
  if (box.empty()) throw std::invalid_argument("ROI: baseline CTV mask is empty");
  const auto& g = ctv.shape();
  box.row_min = std::max(0, box.row_min - pad);
  box.col_min = std::max(0, box.col_min - pad);
  box.slice_min = std::max(0, box.slice_min - pad);
  box.row_max = std::min(g.rows - 1, box.row_max + pad);
  box.col_max = std::min(g.cols - 1, box.col_max + pad);
  box.slice_max = std::min(g.slices - 1, box.slice_max + pad);
  return {box};
}

void LocalROI::check(const GridShape& g) const {
  if (box.empty()) throw std::invalid_argument("ROI is empty");
  if (box.row_min < 0 || box.col_min < 0 || box.slice_min < 0 || box.row_max >= g.rows || box.col_max >= g.cols ||
      box.slice_max >= g.slices)
    throw std::invalid_argument("ROI lies outside the volume grid");
}

namespace {

void keep_largest_component(Mask& m, const Box3& box) {
  const auto& g = m.shape();
  std::vector<int> label(m.data().size(), 0);
  int next = 0, best_label = 0;
  std::size_t best_size = 0;
  std::vector<std::array<int, 3>> stack;
  for (int k = box.slice_min; k <= box.slice_max; ++k)
    for (int i = box.row_min; i <= box.row_max; ++i)
      for (int j = box.col_min; j <= box.col_max; ++j) {
        if (!m.at(i, j, k) || label[m.index(i, j, k)]) continue;
        ++next;
        std::size_t size = 0;
        stack.push_back({i, j, k});
        label[m.index(i, j, k)] = next;
        while (!stack.empty()) {
          const auto [r, c, s] = stack.back();
          stack.pop_back();
          ++size;
          const int nb[6][3] = {{r - 1, c, s}, {r + 1, c, s}, {r, c - 1, s}, {r, c + 1, s}, {r, c, s - 1}, {r, c, s + 1}};
          for (const auto& q : nb) {
            if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= g.rows || q[1] >= g.cols || q[2] >= g.slices) continue;
            const auto idx = m.index(q[0], q[1], q[2]);
            if (m.data()[idx] && !label[idx]) {
              label[idx] = next;
              stack.push_back({q[0], q[1], q[2]});
            }
          }
        }
        if (size > best_size) {
          best_size = size;
          best_label = next;
        }
      }
  for (std::size_t i = 0; i < label.size(); ++i)
    if (m.data()[i] && label[i] != best_label) m.data()[i] = 0;
}

std::string csv_number(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

}  // namespace

Mask otsu_segment(const Volume& volume, const LocalROI& roi, const SegmentOptions& options) {
  roi.check(volume.shape());
  const auto& b = roi.box;
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(b.rows()) * b.cols() * b.slices());
  for (int k = b.slice_min; k <= b.slice_max; ++k)
    for (int i = b.row_min; i <= b.row_max; ++i)
      for (int j = b.col_min; j <= b.col_max; ++j) values.push_back(volume.at(i, j, k));
  const auto otsu = otsu_threshold(values, options.bins);
  Mask m(volume.shape(), volume.spacing(), volume.origin());
  for (int k = b.slice_min; k <= b.slice_max; ++k)
    for (int i = b.row_min; i <= b.row_max; ++i)
      for (int j = b.col_min; j <= b.col_max; ++j) m.at(i, j, k) = otsu.foreground(volume.at(i, j, k)) ? 1 : 0;
  if (options.largest_component) keep_largest_component(m, b);
  return m;
}

double tumor_volume_otsu(const Volume& volume, const LocalROI& roi, const SegmentOptions& options) {
  const auto m = otsu_segment(volume, roi, options);
  return static_cast<double>(count_nonzero(m)) * volume.spacing().voxel_volume();
}

std::optional<double> delta_v_percent(double v_pred, double v_real) {
  if (!(v_real > 0)) return std::nullopt;
  return 100.0 * std::abs(v_pred - v_real) / v_real;
}

std::optional<int> dose_bin(double delta_gy) {
  for (int c : kDoseBinCentres)
    if (delta_gy >= c - 5.0 && delta_gy < c + 5.0) return c;
  return std::nullopt;
}

VolumetricEntry make_entry(std::string model_id, std::string patient_id, double delta_gy, double v_real,
                           double v_pred) {
  VolumetricEntry e{std::move(model_id), std::move(patient_id), delta_gy, v_real, v_pred, {}, {}};
  e.delta_v = delta_v_percent(v_pred, v_real);
  if (!e.delta_v) e.diagnostic = "real tumour volume is zero; |dV| undefined";
  return e;
}

std::vector<BinStat> dose_binned_curve(const std::vector<VolumetricEntry>& entries) {
  std::vector<BinStat> out;
  for (int c : kDoseBinCentres) {
    BinStat b;
    b.centre_gy = c;
    double sum = 0, sq = 0;
    for (const auto& e : entries)
      if (e.delta_v && dose_bin(e.delta_gy) == c) {
        ++b.count;
        sum += *e.delta_v;
      }
    if (b.count > 0) {
      const double mean = sum / b.count;
      for (const auto& e : entries)
        if (e.delta_v && dose_bin(e.delta_gy) == c) sq += (*e.delta_v - mean) * (*e.delta_v - mean);
      b.mean = mean;
      b.sd = std::sqrt(sq / b.count);
    }
    out.push_back(b);
  }
  return out;
}

std::vector<std::string> VolumetricsReport::models() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (std::find(out.begin(), out.end(), e.model_id) == out.end()) out.push_back(e.model_id);
  return out;
}

std::vector<VolumetricEntry> VolumetricsReport::for_model(const std::string& id) const {
  std::vector<VolumetricEntry> out;
  for (const auto& e : entries)
    if (e.model_id == id) out.push_back(e);
  return out;
}

std::optional<double> VolumetricsReport::acceptability_rate(const std::string& id) const {
  int n = 0, ok = 0;
  for (const auto& e : entries)
    if (e.model_id == id && e.delta_v) {
      ++n;
      ok += acceptable(*e.delta_v);
    }
  if (n == 0) return std::nullopt;
  return static_cast<double>(ok) / n;
}

std::optional<double> VolumetricsReport::mean_delta_v(const std::string& id, double max_delta_gy) const {
  int n = 0;
  double sum = 0;
  for (const auto& e : entries)
    if (e.model_id == id && e.delta_v && e.delta_gy <= max_delta_gy) {
      ++n;
      sum += *e.delta_v;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::vector<std::filesystem::path> emit_report(const VolumetricsReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;

  const auto table = dir / "volumetrics.csv";
  {
    std::ofstream out(table, std::ios::trunc);
    out << "model,patient,delta_gy,v_real_mm3,v_pred_mm3,abs_delta_v_pct,acceptable,diagnostic\n";
    for (const auto& e : report.entries)
      out << e.model_id << ',' << e.patient_id << ',' << csv_number(e.delta_gy) << ',' << csv_number(e.v_real_mm3)
          << ',' << csv_number(e.v_pred_mm3) << ',' << csv_number(e.delta_v) << ','
          << (e.delta_v ? (acceptable(*e.delta_v) ? "1" : "0") : "") << ',' << e.diagnostic << '\n';
    if (!out) throw std::runtime_error("cannot write " + table.string());
  }
  written.push_back(table);

  const auto bins = dir / "dose_bins.csv";
  {
    std::ofstream out(bins, std::ios::trunc);
    out << "model,bin_gy,count,mean_abs_delta_v_pct,sd_abs_delta_v_pct,acceptability_rate\n";
    for (const auto& m : report.models()) {
      const auto rate = report.acceptability_rate(m);
      for (const auto& b : dose_binned_curve(report.for_model(m)))
        out << m << ',' << b.centre_gy << ',' << b.count << ',' << csv_number(b.mean) << ',' << csv_number(b.sd) << ','
            << csv_number(rate) << '\n';
    }
    if (!out) throw std::runtime_error("cannot write " + bins.string());
  }
  written.push_back(bins);

  if (report.entries.empty()) return written;

  std::vector<render::Series> series;
  double ymax = kAcceptableDeltaV;
  for (const auto& m : report.models()) {
    render::Series s{m, {}, {}};
    for (const auto& b : dose_binned_curve(report.for_model(m))) {
      s.x.push_back(b.centre_gy);
      s.y.push_back(b.mean ? *b.mean : std::numeric_limits<double>::quiet_NaN());
      if (b.mean) ymax = std::max(ymax, *b.mean);
    }
    series.push_back(std::move(s));
  }
  const double top = std::ceil(ymax * 1.1 / 10.0) * 10.0;
  render::AxisSpec x{"dose increment bin (Gy)", 5, 65, false, {10, 20, 30, 40, 50, 60}};
  render::AxisSpec y{"mean |dV| (%)", 0, top, false, {}};
  for (int t = 0; t <= 10; ++t) y.ticks.push_back(top * t / 10.0);
  auto canvas = render::line_chart(series, x, y, "|dV| by dose bin");
  // acceptability bound
  render::ChartFrame frame(canvas, x, y, "");
  for (int px = frame.px(5); px < frame.px(65); px += 6)
    canvas.line(px, frame.py(kAcceptableDeltaV), px + 2, frame.py(kAcceptableDeltaV), render::kGrey);
  const auto plot = dir / "delta_v_by_dose.png";
  canvas.write_png(plot);
  written.push_back(plot);
  return written;
}

void emit_slice_grid(const std::filesystem::path& path, const std::vector<std::string>& headers,
                     const std::vector<GridRow>& rows, const std::vector<float>& ctv, int pr, int pc, int zoom) {
  if (rows.empty()) throw std::invalid_argument("slice grid: no rows");
  const int n_cols = static_cast<int>(headers.size());
  const int cell_w = pc * zoom + 8, cell_h = pr * zoom + 8;
  const int label_w = 110, header_h = 20;
  render::Canvas canvas(label_w + n_cols * cell_w, header_h + static_cast<int>(rows.size()) * cell_h);
  for (int c = 0; c < n_cols; ++c) canvas.text(label_w + c * cell_w + 4, 6, headers[c], render::kBlack);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int y0 = header_h + static_cast<int>(r) * cell_h + 4;
    canvas.text(4, y0 + cell_h / 2 - 4, rows[r].label, render::kBlack);
    if (static_cast<int>(rows[r].planes.size()) != n_cols)
      throw std::invalid_argument("slice grid: row '" + rows[r].label + "' has the wrong number of planes");
    for (int c = 0; c < n_cols; ++c) {
      const int x0 = label_w + c * cell_w + 4;
      canvas.image(x0, y0, rows[r].planes[c], pr, pc, 0.0f, 1.0f, zoom);
      canvas.contour(x0, y0, ctv, pr, pc, zoom, render::kRed);
    }
  }
  canvas.write_png(path);
}

}  // namespace vt
