#include "gtep/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "gtep/errors.hpp"
#include "gtep/telemetry.hpp"

namespace gtep {

namespace {

constexpr std::size_t kMaxLayers = 64;
constexpr std::size_t kMaxWidth = 1u << 16;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t header_size(std::size_t n_layers) { return 4 + 4 + 4 + 4 * (n_layers + 1) + 4; }

}  // namespace

std::size_t model_file_size(std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw std::invalid_argument("model_file_size: need at least 2 dims");
  const std::size_t n_layers = dims.size() - 1;
  return header_size(n_layers) + 4 * (2 * dims[0] + 2) + 4 * param_count(dims);
}

std::vector<std::uint8_t> encode_model_file(const ModelFile& file) {
  const auto& dims = file.mlp.dims();
  if (dims.size() < 2) throw std::invalid_argument("encode_model_file: model has no layers");
  if (file.normalizer.dim() != dims[0] || file.normalizer.feature_stds.size() != dims[0]) {
    throw std::invalid_argument("encode_model_file: normalizer width does not match dims[0]");
  }
  Writer w;
  w.raw(kModelMagic, 4);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(dims.size() - 1));
  for (auto d : dims) w.u32(static_cast<std::uint32_t>(d));
  w.u32(file.mode_tag);
  for (float m : file.normalizer.feature_means) w.f32(m);
  for (float s : file.normalizer.feature_stds) w.f32(s);
  w.f32(file.normalizer.target_mean);
  w.f32(file.normalizer.target_std);
  for (const auto& layer : file.mlp.layers()) {
    for (float x : layer.weights) w.f32(x);
    for (float x : layer.bias) w.f32(x);
  }
  return w.take();
}

ModelFile decode_model_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw LengthError(12, bytes.size());
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw FormatError("model file: bad magic (expected \"GTEP\")");
  }
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw VersionError("model file: unsupported format version " + std::to_string(version) +
                       " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  const std::size_t n_layers = r.u32();
  if (n_layers < 1 || n_layers > kMaxLayers) {
    throw FormatError("model file: invalid layer count " + std::to_string(n_layers));
  }
  if (bytes.size() < header_size(n_layers)) throw LengthError(header_size(n_layers), bytes.size());
  std::vector<std::size_t> dims(n_layers + 1);
  for (auto& d : dims) {
    d = r.u32();
    if (d < 1 || d > kMaxWidth) throw FormatError("model file: invalid layer width " + std::to_string(d));
  }
  if (dims.back() != 1) throw FormatError("model file: output width must be 1");
  ModelFile file;
  file.mode_tag = r.u32();
  const std::size_t expected = model_file_size(dims);
  if (bytes.size() != expected) throw LengthError(expected, bytes.size());

  file.normalizer.feature_means.resize(dims[0]);
  file.normalizer.feature_stds.resize(dims[0]);
  for (auto& m : file.normalizer.feature_means) m = r.f32();
  for (auto& s : file.normalizer.feature_stds) s = r.f32();
  file.normalizer.target_mean = r.f32();
  file.normalizer.target_std = r.f32();
  file.mlp = Mlp(dims);
  for (auto& layer : file.mlp.mutable_layers()) {
    for (auto& x : layer.weights) x = r.f32();
    for (auto& x : layer.bias) x = r.f32();
  }
  return file;
}

std::vector<std::uint8_t> serialize_model(const PowerModel& model) {
  model.validate();
  if (!model.mlp.all_finite()) throw std::invalid_argument("save: model has non-finite parameters");
  return encode_model_file({static_cast<std::uint32_t>(model.mode), model.normalizer, model.mlp});
}

PowerModel deserialize_model(std::span<const std::uint8_t> bytes) {
  ModelFile file = decode_model_file(bytes);
  const auto mode = feature_mode_from_tag(file.mode_tag);
  if (!mode) throw FormatError("model file: unknown feature mode tag " + std::to_string(file.mode_tag));
  const std::size_t width = file.mlp.input_dim();
  if (width != feature_dim(*mode)) {
    throw FormatError("model file: input width " + std::to_string(width) + " does not match feature mode '" +
                      std::string(feature_mode_name(*mode)) + "'");
  }
  PowerModel model;
  model.mode = *mode;
  model.normalizer = std::move(file.normalizer);
  model.mlp = std::move(file.mlp);
  return model;
}

void save_model(const PowerModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

PowerModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

nlohmann::json model_metadata(const TrainedModel& model, const nlohmann::json& metrics) {
  const auto& dims = model.model.mlp.dims();
  nlohmann::json j;
  j["schema"] = 1;
  j["format"] = "GTEP";
  j["format_version"] = kModelFormatVersion;
  j["dims"] = dims;
  j["param_count"] = param_count(dims);
  j["activation"] = "gelu_exact";
  j["feature_mode"] = std::string(feature_mode_name(model.model.mode));
  j["feature_order"] = nlohmann::json::array();
  for (auto name : kFeatureNames) j["feature_order"].push_back(std::string(name));
  j["input_features"] = nlohmann::json::array();
  for (std::size_t k = 0; k < dims[0]; ++k) j["input_features"].push_back(std::string(kFeatureNames[k]));
  j["sample_rate_hz"] = kSampleRateHz;

  const auto& c = model.config;
  j["training"] = {
      {"lr", c.lr},
      {"batch_size", c.batch_size},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"dropout_p", c.dropout_p},
      {"seed", c.seed},
      {"lag_norm", c.lag_norm == LagNorm::Target ? "target" : "column"},
      {"min_improvement", c.min_improvement},
      {"optimizer", {{"name", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"epsilon", 1e-8}}},
  };
  j["best_epoch"] = model.best_epoch;
  j["stop_epoch"] = model.stop_epoch;
  j["stopped_early"] = model.stopped_early;
  if (!model.history.empty() && model.best_epoch < model.history.size()) {
    j["best_val_loss"] = model.history[model.best_epoch].val_loss;
    j["best_train_loss"] = model.history[model.best_epoch].train_loss;
  }
  j["metrics"] = metrics.is_null() ? nlohmann::json::object() : metrics;
  return j;
}

void export_json_meta(const TrainedModel& model, const std::filesystem::path& path,
                      const nlohmann::json& metrics) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model_metadata(model, metrics).dump(2) << '\n';
}

std::string history_csv(const TrainedModel& model) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : model.history) {
    out += std::to_string(e.epoch) + ',' + format_double(e.train_loss) + ',' +
           format_double(e.val_loss) + '\n';
  }
  return out;
}

}  // namespace gtep
