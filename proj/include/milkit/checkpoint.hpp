#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "milkit/param_store.hpp"

#include "json.hpp"

namespace milkit {

// Binary container: magic "MILKIT1", uint32 header length, JSON header
// (metadata plus a tensor directory of name/shape/offset entries), then raw
// little-endian payloads. Checkpoint payloads are float32; the optional
// training-state file uses float64 so a resumed run continues bit-identically.
namespace container {

struct Entry {
  std::string name;
  Tensor tensor;
};

void write(const std::filesystem::path& path, const nlohmann::json& meta,
           const std::vector<std::pair<std::string, const Tensor*>>& tensors,
           bool float64 = false);

struct Contents {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

Contents read(const std::filesystem::path& path);

}  // namespace container

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& model_config,
                     const nlohmann::json& train_config,
                     const std::vector<std::string>& class_names, const ParamStore& params);

struct Checkpoint {
  nlohmann::json model_config;
  nlohmann::json train_config;
  std::vector<std::string> class_names;
  ParamStore params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace milkit
