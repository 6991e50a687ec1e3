#include "vt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace vt {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'T', 'C', 'K'};

json spec_to_json(const GeneratorSpec& s) {
  return json{{"family", to_string(s.family)},     {"base_channels", s.base_channels},
              {"n_res_blocks", s.n_res_blocks},    {"embed_dim", s.embed_dim},
              {"in_channels", s.in_channels},      {"condition_dim", s.condition_dim},
              {"context_channels", s.context_channels}, {"init_seed", s.init_seed}};
}

GeneratorSpec spec_from_json(const json& j) {
  GeneratorSpec s;
  s.family = parse_family(j.at("family").get<std::string>());
  s.base_channels = j.at("base_channels").get<int>();
  s.n_res_blocks = j.at("n_res_blocks").get<int>();
  s.embed_dim = j.at("embed_dim").get<int>();
  s.in_channels = j.at("in_channels").get<int>();
  s.condition_dim = j.at("condition_dim").get<int>();
  s.context_channels = j.at("context_channels").get<int>();
  s.init_seed = j.at("init_seed").get<unsigned long long>();
  return s;
}

}  // namespace

NoiseSchedule CheckpointMeta::schedule() const {
  if (schedule_steps == 0) return {};
  return NoiseSchedule(schedule_steps, beta_start, beta_end);
}

void save_checkpoint(const std::filesystem::path& path, const GenerativeModel& model, const CheckpointMeta& meta) {
  const auto params = model.parameters();
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += p.tensor.numel();
  }
  const json header{{"model_id", meta.model_id},
                    {"spec", spec_to_json(meta.spec)},
                    {"schedule", {{"steps", meta.schedule_steps}, {"beta_start", meta.beta_start}, {"beta_end", meta.beta_end}}},
                    {"stats",
                     {{"age_min", meta.stats.age_min},
                      {"age_max", meta.stats.age_max},
                      {"dose_max", meta.stats.dose_max},
                      {"n_histology", meta.stats.n_histology}}},
                    {"preprocess_fingerprint", meta.preprocess_fingerprint},
                    {"epochs_trained", meta.epochs_trained},
                    {"train_seed", meta.train_seed},
                    {"tensors", tensors},
                    {"elements", offset}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = CheckpointMeta::kFormatVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
      auto d = p.tensor.data();
      out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
    }
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + ": not a checkpoint file");
  if (version != CheckpointMeta::kFormatVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (len > (1u << 26)) throw CheckpointError(path.string() + ": implausible header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");

  LoadedModel out;
  json header;
  try {
    header = json::parse(text);
    auto& m = out.meta;
    m.model_id = header.at("model_id").get<std::string>();
    m.spec = spec_from_json(header.at("spec"));
    const auto& sch = header.at("schedule");
    m.schedule_steps = sch.at("steps").get<int>();
    m.beta_start = sch.at("beta_start").get<double>();
    m.beta_end = sch.at("beta_end").get<double>();
    const auto& st = header.at("stats");
    m.stats.age_min = st.at("age_min").get<double>();
    m.stats.age_max = st.at("age_max").get<double>();
    m.stats.dose_max = st.at("dose_max").get<double>();
    m.stats.n_histology = st.at("n_histology").get<int>();
    m.preprocess_fingerprint = header.at("preprocess_fingerprint").get<std::string>();
    m.epochs_trained = header.at("epochs_trained").get<int>();
    m.train_seed = header.at("train_seed").get<unsigned long long>();
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }

  out.model = build_model(out.meta.spec, out.meta.schedule());
  auto params = out.model->parameters();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size())
    throw CheckpointError(path.string() + ": holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (tensors[i].at("name").get<std::string>() != p.name ||
        tensors[i].at("shape").get<nn::Shape>() != p.tensor.shape())
      throw CheckpointError(path.string() + ": tensor " + std::to_string(i) + " does not match " + p.name + " " +
                            nn::shape_string(p.tensor.shape()));
    auto d = p.tensor.data();
    in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
    if (!in) throw CheckpointError(path.string() + ": truncated parameter data at " + p.name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  return out;
}

}  // namespace vt
