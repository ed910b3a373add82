#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "samda/params.hpp"

namespace samda {

// SDCK layout, all integers little-endian:
//   "SDCK" | u16 version=1 | u32 count |
//   per entry: u16 name_len | name (UTF-8) | u8 rank | u32 extents[rank] | f32 data[numel]
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const CheckpointEntry&) const = default;
};

using Checkpoint = std::vector<CheckpointEntry>;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (with byte offset) on bad magic, version or truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Entries in name order for every parameter accepted by `select`.
template <typename S>
Checkpoint to_checkpoint(const ParamStore<S>& store, const NamePredicate& select = {});

// Copies entry values into matching parameters. With `strict`, the entry set
// must equal the registry's name set; otherwise unknown names are an error
// and missing ones are left untouched.
template <typename S>
void load_checkpoint(ParamStore<S>& store, const Checkpoint& ckpt, bool strict);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace samda
