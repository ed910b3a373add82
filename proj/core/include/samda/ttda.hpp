#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "samda/engine.hpp"

namespace samda::ttda {

struct TTDAConfig {
  adapt::Method method = adapt::Method::kSamDaDec;  // whose trainable set adapts
  int iterations = 5;
  double lr = 1e-3;
  double weight_decay = 0.0;
  loss::LossConfig loss;  // lambdas, q, temperature and slice offsets
  int max_negatives = 4;
  int prompt_jitter = 2;
  std::string domain = "target";
  std::string split = "test";
  std::uint64_t seed = 0;  // adapter init when a fresh adapter is attached

  void validate() const;
};

Json to_json(const TTDAConfig& c);
TTDAConfig ttda_config_from_json(const Json& j);

struct SampleRecord {
  std::string id;
  std::uint32_t volume_id = 0;
  std::uint32_t slice_index = 0;
  double iou_before = 0.0;
  double iou_after = 0.0;
  double entropy_before = 0.0;  // mean entropy of the q most confident pixels
  double entropy_after = 0.0;
  bool used_contrastive = false;
};

struct TTDAResult {
  std::vector<SampleRecord> samples;
  double mean_before = 0.0;
  double mean_after = 0.0;
  double entropy_decreased_fraction = 0.0;
  std::size_t restores_verified = 0;
  Json fragment;
};

// Gives the loaded model the trainable set of cfg.method. A checkpoint that
// already carries that method is used as is; a plain checkpoint (full_ft or
// decoder_ft) gets freshly attached, zero-initialised adapters.
void prepare_model(engine::LoadedModel& loaded, const TTDAConfig& cfg);

// Adapts sample by sample in the given (volume, slice) order and restores the
// starting weights after each one. A restore that is not byte-identical to
// the starting checkpoint raises IntegrityError.
TTDAResult run_ttda(sam::SamModel<float>& model, const std::vector<data::Sample>& samples, const TTDAConfig& cfg,
                    const engine::ProgressFn& progress = {});

}  // namespace samda::ttda
