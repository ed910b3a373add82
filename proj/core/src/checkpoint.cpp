#include "samda/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <set>

#include "samda/byteio.hpp"
#include "samda/errors.hpp"

namespace samda {

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  byteio::put_bytes(out, "SDCK", 4);
  byteio::put<std::uint16_t>(out, kCheckpointVersion);
  byteio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& e : ckpt) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("checkpoint: parameter name too long: " + e.name);
    }
    if (e.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw ValidationError("checkpoint: rank too large for " + e.name);
    }
    if (shape_numel(e.shape) != static_cast<std::int64_t>(e.data.size())) {
      throw DimensionError("checkpoint: data size does not match shape for " + e.name);
    }
    byteio::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    byteio::put_bytes(out, e.name.data(), e.name.size());
    byteio::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (auto extent : e.shape) byteio::put<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
    for (float v : e.data) byteio::put<float>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  byteio::Reader in(bytes, "SDCK checkpoint");
  in.expect_magic("SDCK");
  const auto version_at = in.position();
  const auto version = in.get<std::uint16_t>();
  if (version != kCheckpointVersion) in.fail("unsupported version " + std::to_string(version), version_at);
  const auto count = in.get<std::uint32_t>();
  Checkpoint ckpt;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto entry_at = in.position();
    const auto name_len = in.get<std::uint16_t>();
    auto name = in.take(name_len);
    e.name.assign(name.begin(), name.end());
    if (!seen.insert(e.name).second) in.fail("duplicate parameter " + e.name, entry_at);
    const auto rank = in.get<std::uint8_t>();
    std::uint64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const auto extent_at = in.position();
      const auto extent = in.get<std::uint32_t>();
      if (extent == 0) in.fail("zero extent in " + e.name, extent_at);
      numel *= extent;
      if (numel > in.remaining() / sizeof(float) + 1) in.fail("extent exceeds file size in " + e.name, extent_at);
      e.shape.push_back(extent);
    }
    if (numel * sizeof(float) > in.remaining()) {
      in.fail("truncated data for " + e.name, in.position());
    }
    e.data.resize(static_cast<std::size_t>(numel));
    for (auto& v : e.data) v = in.get<float>();
    ckpt.push_back(std::move(e));
  }
  if (in.remaining() != 0) in.fail("trailing bytes after last entry", in.position());
  return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ValidationError("write failed for " + path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

template <typename S>
Checkpoint to_checkpoint(const ParamStore<S>& store, const NamePredicate& select) {
  Checkpoint ckpt;
  for (const auto& [name, p] : store) {
    if (select && !select(name)) continue;
    CheckpointEntry e{name, p.tensor.shape(), {}};
    e.data.reserve(static_cast<std::size_t>(p.tensor.numel()));
    for (auto v : p.tensor.data()) e.data.push_back(static_cast<float>(v));
    ckpt.push_back(std::move(e));
  }
  return ckpt;
}

template <typename S>
void load_checkpoint(ParamStore<S>& store, const Checkpoint& ckpt, bool strict) {
  std::set<std::string> loaded;
  for (const auto& e : ckpt) {
    if (!store.contains(e.name)) throw ValidationError("checkpoint has unknown parameter " + e.name);
    auto& p = store.at(e.name);
    if (p.tensor.shape() != e.shape) {
      throw DimensionError("checkpoint shape " + shape_to_string(e.shape) + " for " + e.name +
                           " does not match model shape " + shape_to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(e.data[i]);
    loaded.insert(e.name);
  }
  if (strict && loaded.size() != store.size()) {
    for (const auto& [name, _] : store) {
      if (!loaded.count(name)) throw ValidationError("checkpoint is missing parameter " + name);
    }
  }
}

template Checkpoint to_checkpoint(const ParamStore<float>&, const NamePredicate&);
template Checkpoint to_checkpoint(const ParamStore<double>&, const NamePredicate&);
template void load_checkpoint(ParamStore<float>&, const Checkpoint&, bool);
template void load_checkpoint(ParamStore<double>&, const Checkpoint&, bool);

}  // namespace samda
