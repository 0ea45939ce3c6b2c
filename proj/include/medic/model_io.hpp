#pragma once

#include "medic/network.hpp"
#include "medic/training.hpp"

#include <filesystem>
#include <string>

namespace medic {

inline constexpr int kModelFormatVersion = 1;

/// A trained model with the configuration that produced it.
struct ModelFile {
  int format_version = kModelFormatVersion;
  Model model;
  TrainConfig config;

  bool operator==(const ModelFile&) const = default;
};

/// Single JSON document; doubles are written with enough digits to read back
/// bit-identically.
std::string to_json(const ModelFile& f);
ModelFile model_from_json(const std::string& text);

void save_model(const ModelFile& f, const std::filesystem::path& path);
ModelFile load_model(const std::filesystem::path& path);

/// Applies "key = value" lines onto `base`. Keys are the TrainConfig field
/// names; '#' starts a comment and [section] headers are ignored.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig read_config(const std::filesystem::path& path, TrainConfig base = {});

}  // namespace medic
