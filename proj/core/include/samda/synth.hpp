#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "samda/losses.hpp"

namespace samda::data {

// Acquisition domain: blob geometry statistics plus photometric degradation.
// Geometry is drawn from the volume seed alone, so two domains with equal
// geometry fields produce identical masks for the same (volume, slice).
struct DomainConfig {
  std::string name = "source";
  int min_blobs = 1;
  int max_blobs = 3;
  double min_radius = 5.0;
  double max_radius = 11.0;
  double drift = 5.0;  // amplitude (px) of the slice-wise centre oscillation
  double fg_min = 0.60;
  double fg_max = 0.90;
  double bg_min = 0.10;
  double bg_max = 0.30;
  double texture = 0.05;  // amplitude of low-frequency background variation
  double gamma = 1.0;
  double noise_sigma = 0.05;
  double speckle_sigma = 0.0;
  int blur_radius = 0;
  double edge_softness = 1.0;  // width (px) of the blob edge ramp; 0 gives hard edges
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const DomainConfig&) const = default;
};

DomainConfig default_source_domain();
DomainConfig default_target_domain();

struct Sample {
  int height = 0;
  int width = 0;
  std::vector<float> image;  // row-major, in [0, 1]
  loss::BinaryMask mask;
  std::uint32_t volume_id = 0;
  std::uint32_t slice_index = 0;
  std::string domain;

  bool operator==(const Sample&) const = default;
};

// Slices per volume must not exceed this window; geometry is validated over it.
inline constexpr int kMaxSlicesPerVolume = 32;
inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.5;

std::uint64_t volume_seed(std::uint64_t dataset_seed, std::uint32_t volume_id);

Sample generate_sample(const DomainConfig& domain, std::uint64_t volume_seed, std::uint32_t slice_index,
                       int image_size = 64);

// SDIM layout, little-endian:
//   "SDIM" | u16 version=1 | u16 reserved=0 | u32 H | u32 W |
//   f32 image[H*W] | u8 mask[H*W] | u32 volume_id | u32 slice_index
inline constexpr std::uint16_t kSampleVersion = 1;

std::vector<std::uint8_t> encode_sample(const Sample& sample);
Sample decode_sample(std::span<const std::uint8_t> bytes, const std::string& domain = {});
void write_sample(const std::filesystem::path& path, const Sample& sample);
Sample read_sample(const std::filesystem::path& path, const std::string& domain = {});

struct SplitSizes {
  int train = 0;
  int val = 0;
  int test = 0;
  bool operator==(const SplitSizes&) const = default;
};

struct DatasetSpec {
  std::uint64_t seed = 7;
  int image_size = 64;
  int slices_per_volume = 10;
  SplitSizes source_sizes{200, 50, 50};
  SplitSizes target_sizes{0, 50, 50};
  DomainConfig source = default_source_domain();
  DomainConfig target = default_target_domain();

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct VolumeEntry {
  std::uint32_t volume_id = 0;
  std::vector<std::string> files;  // relative to the dataset root, slice order
};

struct SplitEntry {
  std::string domain;
  std::string split;  // train | val | test
  std::vector<VolumeEntry> volumes;

  std::size_t sample_count() const;
};

struct DatasetManifest {
  int format_version = 1;
  DatasetSpec spec;
  std::vector<SplitEntry> splits;

  const SplitEntry* find(const std::string& domain, const std::string& split) const;
  std::size_t count(const std::string& domain, const std::string& split) const;
};

// Renders every sample and writes the files plus manifest.json under `root`.
// Source supplies train/val/test, target val/test only. Target volumes reuse
// the source val/test volume ids, so their masks are paired with the source.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Samples of one (domain, split), in volume then slice order.
std::vector<Sample> load_split(const std::filesystem::path& root, const DatasetManifest& manifest,
                               const std::string& domain, const std::string& split);

}  // namespace samda::data
