#pragma once

#include <filesystem>
#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"
#include "samda/adapter.hpp"
#include "samda/errors.hpp"
#include "samda/losses.hpp"
#include "samda/model.hpp"
#include "samda/synth.hpp"

namespace samda {
using Json = nlohmann::ordered_json;
}

namespace samda::config {

// Every top-level config document carries "version": kConfigVersion.
inline constexpr int kConfigVersion = 1;

// Reads keys out of a JSON object. Missing keys keep the caller's default,
// wrong types and unknown keys raise ValidationError naming the key path.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path);

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ValidationError(path_ + "." + key + ": wrong type (got " + j_.at(key).dump() + ")");
    }
  }

  // Sub-object, or nullptr if absent.
  const Json* child(const char* key);
  std::string path(const char* key) const { return path_ + "." + key; }
  // Throws on keys that were never requested.
  void finish() const;

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Throws ValidationError unless j["version"] == kConfigVersion.
void check_version(const Json& j, const std::string& what);

Json to_json(const sam::ModelConfig& c);
sam::ModelConfig model_config_from_json(const Json& j, const std::string& path = "model");

Json to_json(const adapt::AdapterConfig& c);
adapt::AdapterConfig adapter_config_from_json(const Json& j, const std::string& path = "adapter");

Json to_json(const adapt::LoraConfig& c);
adapt::LoraConfig lora_config_from_json(const Json& j, const std::string& path = "lora");

Json to_json(const loss::LossConfig& c);
loss::LossConfig loss_config_from_json(const Json& j, const std::string& path = "loss");

Json to_json(const data::DomainConfig& c);
data::DomainConfig domain_config_from_json(const Json& j, const std::string& path, data::DomainConfig defaults);

// The gen-data document: version, seed, image_size, slices_per_volume,
// source_sizes, target_sizes, source, target.
Json to_json(const data::DatasetSpec& s);
data::DatasetSpec dataset_spec_from_json(const Json& j);

// Parse errors and missing files raise ValidationError with the path.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace samda::config
