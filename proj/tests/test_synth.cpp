#include <gtest/gtest.h>

#include <set>

#include "samda/checkpoint.hpp"
#include "samda/errors.hpp"
#include "samda/synth.hpp"
#include "test_util.hpp"

namespace samda {
namespace {

using namespace samda::data;

TEST(Synth, Deterministic) {
  const auto d = default_target_domain();
  const auto a = generate_sample(d, volume_seed(7, 3), 4);
  const auto b = generate_sample(d, volume_seed(7, 3), 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.image, generate_sample(d, volume_seed(7, 4), 4).image);
  EXPECT_NE(a.image, generate_sample(d, volume_seed(7, 3), 5).image);
}

TEST(Synth, ValuesInRangeAndForegroundBounded) {
  for (std::uint32_t v = 0; v < 30; ++v)
    for (std::uint32_t s : {0u, 9u, 31u}) {
      const auto x = generate_sample(default_source_domain(), volume_seed(1, v), s);
      for (float p : x.image) {
        ASSERT_GE(p, 0.0f);
        ASSERT_LE(p, 1.0f);
      }
      const double frac = double(x.mask.count()) / double(x.mask.data.size());
      EXPECT_GE(frac, kMinForeground);
      EXPECT_LE(frac, kMaxForeground);
    }
}

TEST(Synth, SliceCorrelation) {
  double adjacent = 0, distant = 0;
  int n_adj = 0, n_far = 0;
  double worst_adjacent = 1.0;
  for (std::uint32_t v = 0; v < 100; ++v) {
    const auto vs = volume_seed(11, v);
    std::vector<loss::BinaryMask> masks;
    for (std::uint32_t s = 0; s < 10; ++s) masks.push_back(generate_sample(default_source_domain(), vs, s, 64).mask);
    for (int s = 0; s + 1 < 10; ++s) {
      const double iou = loss::compute_iou(masks[s], masks[s + 1]);
      worst_adjacent = std::min(worst_adjacent, iou);
      adjacent += iou;
      ++n_adj;
    }
    for (int s = 0; s + 5 < 10; ++s) {
      distant += loss::compute_iou(masks[s], masks[s + 5]);
      ++n_far;
    }
  }
  EXPECT_GE(worst_adjacent, 0.5);
  EXPECT_LT(distant / n_far, adjacent / n_adj);
}

TEST(Synth, DegradationFreeImageIsPiecewiseConstant) {
  auto d = default_source_domain();
  d.noise_sigma = 0;
  d.speckle_sigma = 0;
  d.gamma = 1;
  d.blur_radius = 0;
  d.texture = 0;
  d.edge_softness = 0;
  for (std::uint32_t v = 0; v < 10; ++v) {
    const auto x = generate_sample(d, volume_seed(2, v), 3);
    std::set<float> background, foreground;
    for (std::size_t i = 0; i < x.image.size(); ++i) (x.mask.data[i] ? foreground : background).insert(x.image[i]);
    ASSERT_EQ(background.size(), 1u);
    EXPECT_GE(*background.begin(), float(d.bg_min));
    EXPECT_LE(*background.begin(), float(d.bg_max));
    EXPECT_LE(foreground.size(), std::size_t(d.max_blobs));
    for (float f : foreground) {
      EXPECT_GE(f, float(d.fg_min));
      EXPECT_LE(f, float(d.fg_max));
    }
  }
}

TEST(Synth, MasksSharedAcrossDomains) {
  for (std::uint32_t v = 0; v < 10; ++v) {
    const auto a = generate_sample(default_source_domain(), volume_seed(3, v), 2);
    const auto b = generate_sample(default_target_domain(), volume_seed(3, v), 2);
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_NE(a.image, b.image);
  }
}

TEST(Synth, ConfigValidation) {
  auto d = default_source_domain();
  d.min_blobs = 0;
  EXPECT_THROW(d.validate(), ValidationError);
  d = default_source_domain();
  d.fg_min = 0.9;
  d.fg_max = 0.5;
  EXPECT_THROW(d.validate(), ValidationError);
  EXPECT_THROW(generate_sample(default_source_domain(), 1, kMaxSlicesPerVolume), ValidationError);
}

TEST(Sdim, SizeAndRoundTrip) {
  auto s = generate_sample(default_target_domain(), volume_seed(7, 1), 3);
  s.volume_id = 1234;
  const auto bytes = encode_sample(s);
  EXPECT_EQ(bytes.size(), 16u + 4u * 4096u + 4096u + 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SDIM");
  const auto back = decode_sample(bytes, s.domain);
  EXPECT_EQ(back, s);
  EXPECT_EQ(encode_sample(back), bytes);

  testing::TempDir dir("sdim");
  write_sample(dir.path() / "x.sdim", s);
  EXPECT_EQ(read_file_bytes(dir.path() / "x.sdim"), bytes);
  EXPECT_EQ(read_sample(dir.path() / "x.sdim", s.domain), s);
}

TEST(Sdim, CorruptInputsAreFormatErrors) {
  auto s = generate_sample(default_source_domain(), volume_seed(7, 1), 3, 8);
  const auto bytes = encode_sample(s);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    EXPECT_THROW(decode_sample(std::span(bytes.data(), n)), FormatError) << n;
  }
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_sample(bad), FormatError);
  bad = bytes;
  bad[4] = 9;  // version
  EXPECT_THROW(decode_sample(bad), FormatError);
  bad = bytes;
  bad[6] = 1;  // reserved
  EXPECT_THROW(decode_sample(bad), FormatError);
  bad = bytes;
  bad[16 + 4 * 64] = 2;  // mask byte
  EXPECT_THROW(decode_sample(bad), FormatError);
  bad = bytes;
  bad[11] = 0x7f;  // absurd height
  EXPECT_THROW(decode_sample(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_sample(bad), FormatError);
}

DatasetSpec small_spec() {
  DatasetSpec s;
  s.image_size = 32;
  s.slices_per_volume = 4;
  s.source_sizes = {10, 6, 5};
  s.target_sizes = {0, 6, 5};
  return s;
}

TEST(Dataset, CountsSplitsAndRegeneration) {
  testing::TempDir a("ds_a"), b("ds_b");
  const auto spec = small_spec();
  const auto m = generate_dataset(spec, a.path());
  EXPECT_EQ(m.count("source", "train"), 10u);
  EXPECT_EQ(m.count("source", "val"), 6u);
  EXPECT_EQ(m.count("source", "test"), 5u);
  EXPECT_EQ(m.count("target", "val"), 6u);
  EXPECT_EQ(m.count("target", "test"), 5u);
  EXPECT_EQ(m.find("target", "train"), nullptr);

  // Volumes never straddle splits within a domain.
  std::map<std::string, std::set<std::uint32_t>> by_split;
  for (const auto& s : m.splits)
    for (const auto& v : s.volumes) by_split[s.domain + "/" + s.split].insert(v.volume_id);
  for (const auto& [k1, ids1] : by_split)
    for (const auto& [k2, ids2] : by_split) {
      if (k1 >= k2 || k1.substr(0, 6) != k2.substr(0, 6)) continue;
      for (auto id : ids1) EXPECT_EQ(ids2.count(id), 0u) << k1 << " vs " << k2;
    }
  EXPECT_EQ(by_split["source/test"], by_split["target/test"]);

  generate_dataset(spec, b.path());
  for (const auto& s : m.splits)
    for (const auto& v : s.volumes)
      for (const auto& f : v.files) EXPECT_EQ(read_file_bytes(a.path() / f), read_file_bytes(b.path() / f)) << f;
  EXPECT_EQ(read_file_bytes(a.path() / "manifest.json"), read_file_bytes(b.path() / "manifest.json"));

  const auto back = read_manifest(a.path() / "manifest.json");
  EXPECT_EQ(back.spec, spec);
  const auto samples = load_split(a.path(), back, "target", "test");
  ASSERT_EQ(samples.size(), 5u);
  const auto source = load_split(a.path(), back, "source", "test");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(samples[i].mask, source[i].mask);
    EXPECT_EQ(samples[i].volume_id, source[i].volume_id);
    EXPECT_EQ(samples[i].slice_index, source[i].slice_index);
  }
}

TEST(Dataset, SpecValidation) {
  auto s = small_spec();
  s.source_sizes.train = 0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = small_spec();
  s.slices_per_volume = kMaxSlicesPerVolume + 1;
  EXPECT_THROW(s.validate(), ValidationError);
}

}  // namespace
}  // namespace samda
