#include "samda/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "samda/byteio.hpp"
#include "samda/checkpoint.hpp"
#include "samda/config.hpp"
#include "samda/errors.hpp"
#include "samda/rng.hpp"

namespace samda::data {

namespace {

struct Blob {
  double cx, cy;        // centre at slice 0 phase
  double ax, ay;        // centre oscillation amplitudes
  double phase_x, phase_y, freq;
  double rx, ry, theta;
  double radius_phase, radius_freq;
};

struct BlobPose {
  double cx, cy, rx, ry, theta;
};

BlobPose pose_at(const Blob& b, double slice) {
  const double s = 1.0 + 0.2 * std::sin(b.radius_freq * slice + b.radius_phase);
  return {b.cx + b.ax * std::sin(b.freq * slice + b.phase_x), b.cy + b.ay * std::sin(b.freq * slice + b.phase_y),
          b.rx * s, b.ry * s, b.theta + 0.03 * slice};
}

// Normalised elliptical radius; <= 1 inside the blob.
double ellipse_rho(const BlobPose& p, double x, double y) {
  const double dx = x - p.cx, dy = y - p.cy;
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  const double u = (c * dx + s * dy) / p.rx;
  const double v = (-s * dx + c * dy) / p.ry;
  return std::sqrt(u * u + v * v);
}

std::vector<Blob> sample_geometry(CounterRng& rng, const DomainConfig& d, int size) {
  const auto n = static_cast<int>(rng.uniform_int(d.min_blobs, d.max_blobs));
  std::vector<Blob> blobs;
  for (int i = 0; i < n; ++i) {
    Blob b{};
    b.rx = rng.uniform(d.min_radius, d.max_radius);
    b.ry = b.rx * rng.uniform(0.6, 1.0);
    b.theta = rng.uniform(0.0, std::numbers::pi);
    const double margin = b.rx * 1.2 + d.drift + 1.0;
    b.cx = rng.uniform(margin, size - margin);
    b.cy = rng.uniform(margin, size - margin);
    b.ax = rng.uniform(0.5, 1.0) * d.drift;
    b.ay = rng.uniform(0.5, 1.0) * d.drift;
    b.phase_x = rng.uniform(0.0, 2 * std::numbers::pi);
    b.phase_y = rng.uniform(0.0, 2 * std::numbers::pi);
    b.freq = rng.uniform(0.25, 0.45);
    b.radius_phase = rng.uniform(0.0, 2 * std::numbers::pi);
    b.radius_freq = rng.uniform(0.2, 0.4);
    blobs.push_back(b);
  }
  return blobs;
}

std::vector<std::uint8_t> render_mask(const std::vector<Blob>& blobs, double slice, int size) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(size * size), 0);
  for (const auto& b : blobs) {
    const auto p = pose_at(b, slice);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (ellipse_rho(p, x + 0.5, y + 0.5) <= 1.0) mask[static_cast<std::size_t>(y * size + x)] = 1;
  }
  return mask;
}

// Geometry for a volume: redrawn until every slice in the window has a
// foreground fraction inside [kMinForeground, kMaxForeground].
std::vector<Blob> volume_geometry(const DomainConfig& d, std::uint64_t vseed, int size) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    CounterRng rng(derive_seed(vseed, {0x6e0, attempt}));
    auto blobs = sample_geometry(rng, d, size);
    bool ok = true;
    for (int s = 0; s < kMaxSlicesPerVolume && ok; s += 1) {
      const auto mask = render_mask(blobs, s, size);
      const double frac = static_cast<double>(std::count(mask.begin(), mask.end(), 1)) / (size * size);
      ok = frac >= kMinForeground && frac <= kMaxForeground;
    }
    if (ok) return blobs;
  }
  throw ValidationError("domain '" + d.name + "': could not draw blob geometry within the foreground bounds");
}

void box_blur(std::vector<double>& img, int size, int radius) {
  if (radius <= 0) return;
  std::vector<double> tmp(img.size());
  const auto clampi = [size](int v) { return std::clamp(v, 0, size - 1); };
  const double norm = 1.0 / (2 * radius + 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0;
      for (int k = -radius; k <= radius; ++k) acc += img[static_cast<std::size_t>(y * size + clampi(x + k))];
      tmp[static_cast<std::size_t>(y * size + x)] = acc * norm;
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0;
      for (int k = -radius; k <= radius; ++k) acc += tmp[static_cast<std::size_t>(clampi(y + k) * size + x)];
      img[static_cast<std::size_t>(y * size + x)] = acc * norm;
    }
}

}  // namespace

void DomainConfig::validate() const {
  const auto fail = [this](const std::string& msg) { throw ValidationError("domain '" + name + "': " + msg); };
  if (min_blobs < 1 || max_blobs < min_blobs) fail("need 1 <= min_blobs <= max_blobs");
  if (min_radius < 1 || max_radius < min_radius) fail("need 1 <= min_radius <= max_radius");
  if (drift < 0) fail("drift must be non-negative");
  for (double v : {fg_min, fg_max, bg_min, bg_max}) {
    if (!(v >= 0 && v <= 1)) fail("intensities must lie in [0, 1]");
  }
  if (fg_max < fg_min || bg_max < bg_min) fail("intensity ranges must be ordered");
  if (!(gamma > 0)) fail("gamma must be positive");
  if (noise_sigma < 0 || speckle_sigma < 0 || texture < 0 || edge_softness < 0) fail("noise levels must be non-negative");
  if (blur_radius < 0) fail("blur radius must be non-negative");
}

DomainConfig default_source_domain() {
  DomainConfig d;
  d.name = "source";
  d.seed = 101;
  return d;
}

DomainConfig default_target_domain() {
  DomainConfig d;
  d.name = "target";
  d.fg_min = 0.45;
  d.fg_max = 0.70;
  d.bg_min = 0.22;
  d.bg_max = 0.42;
  d.texture = 0.08;
  d.gamma = 1.6;
  d.noise_sigma = 0.08;
  d.speckle_sigma = 0.15;
  d.blur_radius = 1;
  d.seed = 202;
  return d;
}

std::uint64_t volume_seed(std::uint64_t dataset_seed, std::uint32_t volume_id) {
  return derive_seed(dataset_seed, {0x701, volume_id});
}

Sample generate_sample(const DomainConfig& d, std::uint64_t vseed, std::uint32_t slice_index, int size) {
  d.validate();
  if (slice_index >= static_cast<std::uint32_t>(kMaxSlicesPerVolume)) {
    throw ValidationError("slice_index " + std::to_string(slice_index) + " exceeds the volume window");
  }
  const auto blobs = volume_geometry(d, vseed, size);
  const double slice = slice_index;

  // Per-volume photometry depends on the domain seed; per-slice noise on the slice too.
  CounterRng vol_rng(derive_seed(d.seed, {0xb6, vseed}));
  const double bg = vol_rng.uniform(d.bg_min, d.bg_max);
  const double tex_fx = vol_rng.uniform(0.5, 2.0), tex_fy = vol_rng.uniform(0.5, 2.0);
  const double tex_px = vol_rng.uniform(0.0, 2 * std::numbers::pi), tex_py = vol_rng.uniform(0.0, 2 * std::numbers::pi);
  std::vector<double> fg(blobs.size());
  for (auto& f : fg) f = vol_rng.uniform(d.fg_min, d.fg_max);
  CounterRng noise_rng(derive_seed(d.seed, {0x501, vseed, slice_index}));

  Sample s;
  s.height = s.width = size;
  s.mask.height = s.mask.width = size;
  s.mask.data = render_mask(blobs, slice, size);
  s.slice_index = slice_index;
  s.domain = d.name;

  std::vector<double> img(static_cast<std::size_t>(size * size));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      img[static_cast<std::size_t>(y * size + x)] =
          bg + d.texture * std::sin(2 * std::numbers::pi * tex_fx * u + tex_px) *
                   std::sin(2 * std::numbers::pi * tex_fy * v + tex_py);
    }
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const auto p = pose_at(blobs[i], slice);
    const double r_mean = 0.5 * (p.rx + p.ry);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double rho = ellipse_rho(p, x + 0.5, y + 0.5);
        double alpha;
        if (d.edge_softness > 0) {
          alpha = std::clamp(0.5 + (1.0 - rho) * r_mean / d.edge_softness, 0.0, 1.0);
        } else {
          alpha = rho <= 1.0 ? 1.0 : 0.0;
        }
        auto& px = img[static_cast<std::size_t>(y * size + x)];
        px = px * (1.0 - alpha) + fg[i] * alpha;
      }
  }

  for (auto& px : img) px = std::pow(std::clamp(px, 0.0, 1.0), d.gamma);
  box_blur(img, size, d.blur_radius);
  if (d.speckle_sigma > 0) {
    for (auto& px : img) px *= 1.0 + d.speckle_sigma * noise_rng.normal();
  }
  if (d.noise_sigma > 0) {
    for (auto& px : img) px += d.noise_sigma * noise_rng.normal();
  }
  s.image.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) s.image[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  return s;
}

std::vector<std::uint8_t> encode_sample(const Sample& s) {
  const auto n = static_cast<std::size_t>(s.height) * static_cast<std::size_t>(s.width);
  if (s.image.size() != n || s.mask.data.size() != n) throw DimensionError("encode_sample: buffers do not match H x W");
  std::vector<std::uint8_t> out;
  out.reserve(16 + 5 * n + 8);
  byteio::put_bytes(out, "SDIM", 4);
  byteio::put<std::uint16_t>(out, kSampleVersion);
  byteio::put<std::uint16_t>(out, 0);
  byteio::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.height));
  byteio::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.width));
  for (float v : s.image) byteio::put<float>(out, v);
  for (auto m : s.mask.data) byteio::put<std::uint8_t>(out, m ? 1 : 0);
  byteio::put<std::uint32_t>(out, s.volume_id);
  byteio::put<std::uint32_t>(out, s.slice_index);
  return out;
}

Sample decode_sample(std::span<const std::uint8_t> bytes, const std::string& domain) {
  byteio::Reader in(bytes, "SDIM sample");
  in.expect_magic("SDIM");
  const auto version_at = in.position();
  const auto version = in.get<std::uint16_t>();
  if (version != kSampleVersion) in.fail("unsupported version " + std::to_string(version), version_at);
  const auto reserved_at = in.position();
  if (in.get<std::uint16_t>() != 0) in.fail("reserved field must be zero", reserved_at);
  const auto dims_at = in.position();
  const auto h = in.get<std::uint32_t>();
  const auto w = in.get<std::uint32_t>();
  if (h == 0 || w == 0 || h > 1u << 15 || w > 1u << 15) in.fail("implausible image size", dims_at);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (in.remaining() < 5 * n + 8) in.fail("truncated payload", in.position());
  Sample s;
  s.height = static_cast<int>(h);
  s.width = static_cast<int>(w);
  s.image.resize(n);
  for (auto& v : s.image) v = in.get<float>();
  s.mask.height = s.height;
  s.mask.width = s.width;
  s.mask.data.resize(n);
  for (auto& m : s.mask.data) {
    const auto at = in.position();
    m = in.get<std::uint8_t>();
    if (m > 1) in.fail("mask value out of range", at);
  }
  s.volume_id = in.get<std::uint32_t>();
  s.slice_index = in.get<std::uint32_t>();
  if (in.remaining() != 0) in.fail("trailing bytes", in.position());
  s.domain = domain;
  return s;
}

void write_sample(const std::filesystem::path& path, const Sample& sample) {
  write_file_bytes(path, encode_sample(sample));
}

Sample read_sample(const std::filesystem::path& path, const std::string& domain) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_sample(bytes, domain);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void DatasetSpec::validate() const {
  if (image_size < 8) throw ValidationError("dataset: image_size must be >= 8");
  if (slices_per_volume < 1 || slices_per_volume > kMaxSlicesPerVolume) {
    throw ValidationError("dataset: slices_per_volume must lie in [1, " + std::to_string(kMaxSlicesPerVolume) + "]");
  }
  if (source_sizes.train < 1 || source_sizes.val < 1 || source_sizes.test < 1) {
    throw ValidationError("dataset: source split sizes must be >= 1");
  }
  if (target_sizes.train != 0) throw ValidationError("dataset: the target domain has no train split");
  if (target_sizes.val < 1 || target_sizes.test < 1) throw ValidationError("dataset: target split sizes must be >= 1");
  if (target_sizes.val > source_sizes.val || target_sizes.test > source_sizes.test) {
    throw ValidationError("dataset: target splits pair with source volumes and cannot be larger");
  }
  if (source.name == target.name) throw ValidationError("dataset: source and target domains need distinct names");
  source.validate();
  target.validate();
}

std::size_t SplitEntry::sample_count() const {
  std::size_t n = 0;
  for (const auto& v : volumes) n += v.files.size();
  return n;
}

const SplitEntry* DatasetManifest::find(const std::string& domain, const std::string& split) const {
  for (const auto& s : splits) {
    if (s.domain == domain && s.split == split) return &s;
  }
  return nullptr;
}

std::size_t DatasetManifest::count(const std::string& domain, const std::string& split) const {
  const auto* s = find(domain, split);
  return s ? s->sample_count() : 0;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root) {
  spec.validate();
  DatasetManifest manifest;
  manifest.spec = spec;
  std::uint32_t next_volume = 0;
  std::map<std::string, std::uint32_t> first_volume;

  const auto emit = [&](const DomainConfig& dom, const std::string& split, int count, std::uint32_t first_id) {
    SplitEntry entry{dom.name, split, {}};
    int remaining = count;
    for (std::uint32_t vid = first_id; remaining > 0; ++vid) {
      VolumeEntry vol{vid, {}};
      const auto vseed = volume_seed(spec.seed, vid);
      const int slices = std::min(remaining, spec.slices_per_volume);
      for (int s = 0; s < slices; ++s) {
        auto sample = generate_sample(dom, vseed, static_cast<std::uint32_t>(s), spec.image_size);
        sample.volume_id = vid;
        char name[64];
        std::snprintf(name, sizeof(name), "v%04u_s%02d.sdim", vid, s);
        const auto rel = dom.name + "/" + split + "/" + name;
        try {
          write_sample(root / rel, sample);
        } catch (const std::exception& e) {
          throw ValidationError("gen-data: writing " + (root / rel).string() + " failed: " + e.what());
        }
        vol.files.push_back(rel);
      }
      remaining -= slices;
      entry.volumes.push_back(std::move(vol));
    }
    manifest.splits.push_back(std::move(entry));
  };

  const auto volumes_for = [&](int count) {
    return static_cast<std::uint32_t>((count + spec.slices_per_volume - 1) / spec.slices_per_volume);
  };
  for (const auto& [split, count] : {std::pair<std::string, int>{"train", spec.source_sizes.train},
                                     {"val", spec.source_sizes.val},
                                     {"test", spec.source_sizes.test}}) {
    first_volume[split] = next_volume;
    emit(spec.source, split, count, next_volume);
    next_volume += volumes_for(count);
  }
  emit(spec.target, "val", spec.target_sizes.val, first_volume["val"]);
  emit(spec.target, "test", spec.target_sizes.test, first_volume["test"]);

  write_manifest(root / "manifest.json", manifest);
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  Json j;
  j["format_version"] = manifest.format_version;
  j["spec"] = config::to_json(manifest.spec);
  Json splits = Json::array();
  for (const auto& s : manifest.splits) {
    Json vols = Json::array();
    for (const auto& v : s.volumes) vols.push_back({{"volume_id", v.volume_id}, {"files", v.files}});
    splits.push_back({{"domain", s.domain}, {"split", s.split}, {"count", s.sample_count()}, {"volumes", vols}});
  }
  j["splits"] = splits;
  config::write_json_file(path, j);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto j = config::read_json_file(path);
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) throw ValidationError("unsupported manifest format_version");
    m.spec = config::dataset_spec_from_json(j.at("spec"));
    for (const auto& s : j.at("splits")) {
      SplitEntry e{s.at("domain").get<std::string>(), s.at("split").get<std::string>(), {}};
      for (const auto& v : s.at("volumes")) {
        e.volumes.push_back({v.at("volume_id").get<std::uint32_t>(), v.at("files").get<std::vector<std::string>>()});
      }
      if (s.contains("count") && s.at("count").get<std::size_t>() != e.sample_count()) {
        throw ValidationError("manifest count does not match its file list for " + e.domain + "/" + e.split);
      }
      m.splits.push_back(std::move(e));
    }
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

std::vector<Sample> load_split(const std::filesystem::path& root, const DatasetManifest& manifest,
                               const std::string& domain, const std::string& split) {
  const auto* entry = manifest.find(domain, split);
  if (!entry) throw ValidationError("dataset has no split " + domain + "/" + split);
  std::vector<Sample> out;
  for (const auto& v : entry->volumes) {
    for (const auto& f : v.files) {
      auto s = read_sample(root / f, domain);
      if (s.volume_id != v.volume_id) throw ValidationError(f + ": volume id does not match the manifest");
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace samda::data
