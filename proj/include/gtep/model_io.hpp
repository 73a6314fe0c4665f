#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "gtep/model.hpp"
#include "gtep/training.hpp"

namespace gtep {

// Model file layout, all integers u32 and all reals IEEE-754 binary32, little-endian:
//
//   "GTEP"                      magic, 4 bytes
//   format_version              = 1
//   n_layers
//   dims[n_layers + 1]
//   feature_mode                0 full, 1 vel, 2 vel1lag
//   feature_means[dims[0]]
//   feature_stds[dims[0]]
//   target_mean, target_std
//   for each layer l:           weights[dims[l+1]][dims[l]] row-major, then bias[dims[l+1]]

inline constexpr char kModelMagic[4] = {'G', 'T', 'E', 'P'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Exact file size for a model with these dims.
std::size_t model_file_size(std::span<const std::size_t> dims);

/// The file contents without the feature-mode/width agreement that PowerModel
/// requires, so toy networks such as dims [2, 1] can be written and inspected.
struct ModelFile {
  std::uint32_t mode_tag = 0;
  Normalizer normalizer;
  Mlp mlp;
};

std::vector<std::uint8_t> encode_model_file(const ModelFile& file);
/// Checks magic, version, layer widths and exact length.
ModelFile decode_model_file(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_model(const PowerModel& model);
/// Throws FormatError (magic, layout, unknown mode or mode/width mismatch),
/// VersionError or LengthError.
PowerModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const PowerModel& model, const std::filesystem::path& path);
PowerModel load_model(const std::filesystem::path& path);

/// Human-readable sidecar: dims, parameter count, feature order, training
/// config and history summary, plus optional caller-supplied metrics.
nlohmann::json model_metadata(const TrainedModel& model, const nlohmann::json& metrics = nullptr);
void export_json_meta(const TrainedModel& model, const std::filesystem::path& path,
                      const nlohmann::json& metrics = nullptr);

/// Training history as "epoch,train_loss,val_loss" CSV text.
std::string history_csv(const TrainedModel& model);

}  // namespace gtep
