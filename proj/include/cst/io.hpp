#pragma once

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cst/trainer.hpp"

namespace cst {

// Usage/config problems map to CLI exit code 2; everything else is 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Versioned binary container: "cst-ckpt-v1" magic, JSON meta block (carries
// the array index: name, shape, element count, in order), then concatenated
// row-major float32 payload.
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

void write_array_container(const std::string& path, const nlohmann::json& meta,
                           const std::vector<NamedArray>& arrays);
std::pair<nlohmann::json, std::vector<NamedArray>> read_array_container(
    const std::string& path);

nlohmann::json arch_to_json(const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& c);
// Strict: unknown keys raise ConfigError naming the key.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);
// Raises ConfigError on out-of-range values; from_json calls this, and the
// CLI calls it again after applying flag overrides.
void validate_train_config(const TrainConfig& c);

std::string version_string();

}  // namespace cst
