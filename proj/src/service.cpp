#include "vt/service.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <httplib.h>

#include "vt/pairing.hpp"
#include "vt/pipeline.hpp"
#include "vt/render.hpp"

namespace vt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kCacheSize = 32;

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump(), {}};
}

HttpResponse error(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"error", {{"code", code}, {"message", message}}}});
}

std::string dose_text(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

std::string param(const QueryParams& q, const std::string& key) {
  auto it = q.find(key);
  return it == q.end() ? std::string() : it->second;
}

int most_ctv_slice(const Mask& m) {
  int best = 0;
  std::size_t most = 0;
  for (int k = 0; k < m.shape().slices; ++k) {
    std::size_t n = 0;
    for (auto v : m.slice(k)) n += v != 0;
    if (n > most) most = n, best = k;
  }
  return best;
}

HttpResponse png(const render::Canvas& c) {
  const auto bytes = c.encode_png();
  return {200, "image/png", std::string(bytes.begin(), bytes.end()), {}};
}

}  // namespace

InferenceService::InferenceService(const RunConfig& config)
    : config_(config), segment_{config.eval.otsu_bins, config.eval.largest_component} {
  const auto paths = config.paths();
  for (const auto& id : list_model_ids(config.service_model_dir()))
    models_.emplace(id, load_checkpoint(config.service_model_dir() / (id + ".vtck")));
  if (models_.empty()) return;  // nothing to query, nothing to list

  if (!fs::exists(paths.preprocessed_manifest()))
    throw MissingArtifact("preprocess", "no preprocessed cohort at " + paths.preprocessed_manifest().string());
  if (!fs::exists(paths.pairs_dir() / "pairs.json"))
    throw MissingArtifact("pairs", "no pairing output at " + paths.pairs_dir().string());
  cohort_ = load_preprocessed(paths.preprocessed_manifest());
  const auto pairs = load_pairs(paths.pairs_dir());
  const auto& stats = models_.begin()->second.meta.stats;
  for (const auto& [id, split] : pairs.split) {
    if (split != Split::test) continue;
    Patient p;
    p.context = load_patient_context(cohort_, id, stats);
    p.record = &cohort_.cohort.patient(id);
    p.ctv_box = LocalROI::from_mask(*p.context.ctv, config.infer.roi_pad).box;
    p.central_slice = most_ctv_slice(*p.context.ctv);
    patients_.emplace(id, std::move(p));
  }
}

const LoadedModel* InferenceService::find_model(const std::string& id) const {
  if (id.empty()) return models_.size() == 1 ? &models_.begin()->second : nullptr;
  auto it = models_.find(id);
  return it == models_.end() ? nullptr : &it->second;
}

const InferenceService::Patient* InferenceService::find_patient(const std::string& id) const {
  auto it = patients_.find(id);
  return it == patients_.end() ? nullptr : &it->second;
}

std::shared_ptr<const Volume> InferenceService::predict_volume(const LoadedModel& m, const Patient& p, double delta,
                                                               std::uint64_t seed) const {
  const auto key = m.meta.model_id + '|' + p.context.patient_id + '|' + dose_text(delta) + '|' + std::to_string(seed);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const auto clinical = encode_clinical(*p.record, m.meta.stats);
  auto v = std::make_shared<const Volume>(predict_followup(m, *p.context.baseline, clinical, delta,
                                                           entry_seed(seed, delta), p.context.preprocess_fingerprint));
  std::lock_guard lock(cache_mutex_);
  if (cache_.emplace(key, v).second) {
    cache_order_.push_back(key);
    if (cache_order_.size() > kCacheSize) {
      cache_.erase(cache_order_.front());
      cache_order_.erase(cache_order_.begin());
    }
  }
  return v;
}

HttpResponse InferenceService::patients() const {
  json out = json::array();
  for (const auto& [id, p] : patients_) {
    const auto& r = *p.record;
    const auto& g = p.context.baseline->shape();
    const auto& s = p.context.baseline->spacing();
    json doses = json::array();
    for (const auto& scan : r.scans) doses.push_back(scan.cumulative_dose_gy);
    const auto& b = p.ctv_box;
    out.push_back({{"patient_id", id},
                   {"age_years", r.age_years},
                   {"sex", r.sex},
                   {"histology", r.histology},
                   {"ct_stage", r.ct_stage},
                   {"cn_stage", r.cn_stage},
                   {"scan_doses_gy", doses},
                   {"grid", {g.rows, g.cols, g.slices}},
                   {"spacing_mm", {s.x, s.y, s.z}},
                   {"ctv_box",
                    {{"row_min", b.row_min}, {"row_max", b.row_max}, {"col_min", b.col_min},
                     {"col_max", b.col_max}, {"slice_min", b.slice_min}, {"slice_max", b.slice_max}}},
                   {"central_slice", p.central_slice},
                   {"baseline_volume_mm3",
                    tumor_volume_otsu(*p.context.baseline, LocalROI{b}, segment_)}});
  }
  return json_response(200, {{"patients", out}});
}

HttpResponse InferenceService::models() const {
  json out = json::array();
  for (const auto& [id, m] : models_)
    out.push_back({{"model_id", id},
                   {"family", to_string(m.meta.spec.family)},
                   {"dose_max_gy", m.meta.stats.dose_max},
                   {"diffusion_steps", m.meta.schedule_steps},
                   {"epochs_trained", m.meta.epochs_trained}});
  return json_response(200, {{"models", out}});
}

HttpResponse InferenceService::predict(const std::string& body) const {
  const auto t0 = std::chrono::steady_clock::now();
  const auto req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return error(400, "invalid_request", "body must be a JSON object");
  if (!req.contains("patient_id") || !req["patient_id"].is_string())
    return error(400, "invalid_request", "patient_id (string) is required");
  if (!req.contains("dose_gy") || !req["dose_gy"].is_number())
    return error(400, "invalid_request", "dose_gy (number) is required");
  const std::string pid = req["patient_id"];
  const double dose = req["dose_gy"];
  const std::string mid = req.value("model_id", std::string());
  std::uint64_t seed = config_.infer.seed;
  if (req.contains("seed")) {
    if (!req["seed"].is_number_unsigned()) return error(400, "invalid_request", "seed must be a non-negative integer");
    seed = req["seed"];
  }
  if (!(dose >= 0) || !std::isfinite(dose)) return error(400, "invalid_dose", "dose_gy must be finite and >= 0");
  const auto* m = find_model(mid);
  if (!m) return error(404, "unknown_model", mid.empty() ? "model_id is required when several models are loaded"
                                                         : "no model '" + mid + "'");
  const auto* p = find_patient(pid);
  if (!p) return error(404, "unknown_patient", "no test-split patient '" + pid + "'");

  std::shared_ptr<const Volume> v;
  try {
    v = predict_volume(*m, *p, dose, seed);
  } catch (const StatsMismatch& e) {
    return error(409, "stats_mismatch", e.what());
  }
  const double volume = tumor_volume_otsu(*v, LocalROI{p->ctv_box}, segment_);
  const auto q = "patient=" + pid + "&model=" + m->meta.model_id + "&dose=" + dose_text(dose) +
                 "&seed=" + std::to_string(seed);
  json out{{"patient_id", pid},
           {"model_id", m->meta.model_id},
           {"dose_gy", dose},
           {"seed", seed},
           {"volume_mm3", volume},
           {"extrapolated", dose > m->meta.stats.dose_max},
           {"dose_max_gy", m->meta.stats.dose_max},
           {"slices",
            {{"count", v->shape().slices},
             {"central_index", p->central_slice},
             {"image", "/v1/slice?" + q + "&index={index}"},
             {"baseline", "/v1/baseline?patient=" + pid + "&index={index}"},
             {"overlay", "/v1/overlay?patient=" + pid + "&index={index}"}}}};
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  out["latency_ms"] = ms;
  auto r = json_response(200, out);
  r.headers["X-Latency-Ms"] = std::to_string(ms);
  return r;
}

HttpResponse InferenceService::trajectory(const QueryParams& q) const {
  const auto* p = find_patient(param(q, "patient"));
  if (!p) return error(404, "unknown_patient", "no test-split patient '" + param(q, "patient") + "'");
  const auto* m = find_model(param(q, "model"));
  if (!m) return error(404, "unknown_model", "unknown or missing model '" + param(q, "model") + "'");
  DoseQuery dq{p->context.patient_id, {}, config_.infer.seed};
  if (const auto s = param(q, "seed"); !s.empty()) {
    const auto v = parse_u64(s);
    if (!v) return error(400, "invalid_request", "seed must be a non-negative integer");
    dq.seed = *v;
  }
  const auto doses = param(q, "doses");
  if (doses.empty()) return error(400, "invalid_request", "doses is required (comma-separated Gy)");
  std::size_t start = 0;
  while (start <= doses.size()) {
    const auto comma = doses.find(',', start);
    const auto d = parse_double(doses.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!d) return error(400, "invalid_request", "doses must be comma-separated numbers");
    if (!(*d >= 0) || !std::isfinite(*d)) return error(400, "invalid_dose", "doses must be finite and >= 0");
    dq.doses_gy.push_back(*d);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  auto ctx = p->context;
  ctx.clinical = encode_clinical(*p->record, m->meta.stats);
  const auto t = dose_response_trajectory(*m, ctx, dq, segment_, config_.infer.roi_pad, 1);
  auto out = json::parse(t.to_json());
  out["dose_max_gy"] = m->meta.stats.dose_max;
  return json_response(200, out);
}

HttpResponse InferenceService::predicted_slice(const QueryParams& q) const {
  const auto* p = find_patient(param(q, "patient"));
  if (!p) return error(404, "unknown_patient", "no test-split patient '" + param(q, "patient") + "'");
  const auto* m = find_model(param(q, "model"));
  if (!m) return error(404, "unknown_model", "unknown or missing model '" + param(q, "model") + "'");
  const auto dose = parse_double(param(q, "dose"));
  if (!dose || !(*dose >= 0) || !std::isfinite(*dose)) return error(400, "invalid_dose", "dose must be >= 0");
  std::uint64_t seed = config_.infer.seed;
  if (const auto s = param(q, "seed"); !s.empty()) {
    const auto v = parse_u64(s);
    if (!v) return error(400, "invalid_request", "seed must be a non-negative integer");
    seed = *v;
  }
  int k = p->central_slice;
  if (const auto s = param(q, "index"); !s.empty()) {
    const auto v = parse_u64(s);
    if (!v || *v >= static_cast<std::uint64_t>(p->context.baseline->shape().slices))
      return error(400, "invalid_index", "index outside the volume");
    k = static_cast<int>(*v);
  }
  const auto v = predict_volume(*m, *p, *dose, seed);
  const auto& g = v->shape();
  render::Canvas c(g.cols * kZoom, g.rows * kZoom);
  c.image(0, 0, v->slice(k), g.rows, g.cols, 0.0f, 1.0f, kZoom);
  return png(c);
}

HttpResponse InferenceService::baseline_slice(const QueryParams& q) const {
  const auto* p = find_patient(param(q, "patient"));
  if (!p) return error(404, "unknown_patient", "no test-split patient '" + param(q, "patient") + "'");
  const auto& v = *p->context.baseline;
  int k = p->central_slice;
  if (const auto s = param(q, "index"); !s.empty()) {
    const auto i = parse_u64(s);
    if (!i || *i >= static_cast<std::uint64_t>(v.shape().slices))
      return error(400, "invalid_index", "index outside the volume");
    k = static_cast<int>(*i);
  }
  render::Canvas c(v.shape().cols * kZoom, v.shape().rows * kZoom);
  c.image(0, 0, v.slice(k), v.shape().rows, v.shape().cols, 0.0f, 1.0f, kZoom);
  return png(c);
}

HttpResponse InferenceService::overlay(const QueryParams& q) const {
  const auto* p = find_patient(param(q, "patient"));
  if (!p) return error(404, "unknown_patient", "no test-split patient '" + param(q, "patient") + "'");
  const auto& m = *p->context.ctv;
  int k = p->central_slice;
  if (const auto s = param(q, "index"); !s.empty()) {
    const auto i = parse_u64(s);
    if (!i || *i >= static_cast<std::uint64_t>(m.shape().slices))
      return error(400, "invalid_index", "index outside the volume");
    k = static_cast<int>(*i);
  }
  std::vector<float> plane(m.slice(k).begin(), m.slice(k).end());
  render::Canvas c(m.shape().cols * kZoom, m.shape().rows * kZoom, render::kTransparent);
  c.contour(0, 0, plane, m.shape().rows, m.shape().cols, kZoom, render::kRed);
  return png(c);
}

struct HttpServer::Impl {
  std::shared_ptr<const InferenceService> service;
  httplib::Server server;
};

namespace {

void reply(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body, r.content_type);
}

QueryParams params_of(const httplib::Request& req) {
  QueryParams q;
  for (const auto& [k, v] : req.params) q.emplace(k, v);
  return q;
}

}  // namespace

HttpServer::HttpServer(std::shared_ptr<const InferenceService> service, int threads) : impl_(std::make_unique<Impl>()) {
  impl_->service = std::move(service);
  auto& s = impl_->server;
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  s.new_task_queue = [n] { return new httplib::ThreadPool(n); };
  const auto* svc = impl_->service.get();
  s.Get("/v1/patients", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->patients()); });
  s.Get("/v1/models", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->models()); });
  s.Post("/v1/predict",
         [svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc->predict(req.body)); });
  s.Get("/v1/trajectory", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->trajectory(params_of(req)));
  });
  s.Get("/v1/slice", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->predicted_slice(params_of(req)));
  });
  s.Get("/v1/baseline", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->baseline_slice(params_of(req)));
  });
  s.Get("/v1/overlay", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->overlay(params_of(req)));
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply(res, error(500, "internal", what));
  });
  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) reply(res, error(404, "not_found", "no endpoint " + req.path));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) {
    const int p = s.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!s.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace vt
