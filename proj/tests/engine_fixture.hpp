#pragma once

#include <filesystem>

#include "samda/engine.hpp"
#include "test_util.hpp"

namespace samda::testing {

// 32x32 images with blobs scaled to match.
inline data::DatasetSpec tiny_dataset() {
  data::DatasetSpec s;
  s.seed = 3;
  s.image_size = 32;
  s.slices_per_volume = 8;
  s.source_sizes = {24, 8, 16};
  s.target_sizes = {0, 8, 16};
  for (auto* d : {&s.source, &s.target}) {
    d->min_radius = 3.0;
    d->max_radius = 6.0;
    d->drift = 2.5;
  }
  return s;
}

inline sam::ModelConfig tiny_engine_model() {
  sam::ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.enc_dim = 16;
  c.enc_depth = 2;
  c.enc_heads = 2;
  c.enc_mlp_ratio = 2;
  c.dec_dim = 16;
  c.dec_depth = 2;
  c.dec_heads = 2;
  c.dec_mlp_ratio = 2;
  c.seed = 1;
  return c;
}

inline engine::TrainConfig tiny_train(adapt::Method method, const std::filesystem::path& data) {
  engine::TrainConfig t;
  t.method = method;
  t.model = tiny_engine_model();
  t.adapter.prompts = 2;
  t.adapter.prompt_dim = 8;
  t.adapter.key_dim = 8;
  t.adapter.value_dim = 8;
  t.lr = 3e-3;
  t.epochs = 3;
  t.batch_size = 4;
  t.data_dir = data.string();
  return t;
}

}  // namespace samda::testing
