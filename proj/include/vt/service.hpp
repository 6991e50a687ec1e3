#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vt/checkpoint.hpp"
#include "vt/config.hpp"
#include "vt/evaluation.hpp"
#include "vt/inference.hpp"
#include "vt/preprocess.hpp"

namespace vt {

/// Transport-neutral response.
struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

using QueryParams = std::map<std::string, std::string>;

/// Handlers behind the /v1 endpoints. Checkpoints are loaded once at
/// construction and never modified; handlers are safe to call concurrently.
class InferenceService {
 public:
  /// Reads the preprocessed cohort and pairing split under config.workdir and
  /// every checkpoint in config.service_model_dir().
  explicit InferenceService(const RunConfig& config);

  HttpResponse patients() const;
  HttpResponse models() const;
  HttpResponse predict(const std::string& body) const;
  HttpResponse trajectory(const QueryParams& q) const;
  /// Predicted slice as a greyscale PNG (patient, dose, model, seed, index).
  HttpResponse predicted_slice(const QueryParams& q) const;
  HttpResponse baseline_slice(const QueryParams& q) const;
  /// Transparent PNG with the CTV contour only, same size as the slice images.
  HttpResponse overlay(const QueryParams& q) const;

  std::size_t model_count() const { return models_.size(); }

  static constexpr int kZoom = 4;

 private:
  struct Patient {
    PatientContext context;  // clinical encoding from the first model's stats
    const PatientRecord* record = nullptr;
    Box3 ctv_box;
    int central_slice = 0;
  };

  const LoadedModel* find_model(const std::string& id) const;
  const Patient* find_patient(const std::string& id) const;
  std::shared_ptr<const Volume> predict_volume(const LoadedModel& m, const Patient& p, double delta,
                                               std::uint64_t seed) const;

  RunConfig config_;
  PreprocessedCohort cohort_;
  std::map<std::string, LoadedModel> models_;
  std::map<std::string, Patient> patients_;  // test split only
  SegmentOptions segment_;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const Volume>> cache_;
  mutable std::vector<std::string> cache_order_;
};

/// Serves the handlers over HTTP until stop() is called.
class HttpServer {
 public:
  HttpServer(std::shared_ptr<const InferenceService> service, int threads);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vt
