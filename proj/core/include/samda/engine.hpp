#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "samda/adapter.hpp"
#include "samda/config.hpp"
#include "samda/losses.hpp"
#include "samda/model.hpp"
#include "samda/synth.hpp"

namespace samda::engine {

struct TrainConfig {
  adapt::Method method = adapt::Method::kSamDaDec;
  double lr = 1e-3;
  double weight_decay = 0.01;
  int epochs = 12;
  int batch_size = 4;
  std::uint64_t seed = 0;
  int prompt_jitter = 2;  // px, train and eval
  // Reuse frozen image embeddings across epochs (decoder-only methods).
  bool cache_encoder = true;
  sam::ModelConfig model;
  adapt::AdapterConfig adapter;
  adapt::LoraConfig lora;
  loss::LossConfig loss;
  std::string data_dir;         // may be overridden by --data
  std::string base_checkpoint;  // required unless training full_ft from scratch
  std::string group;            // report row label; defaults to the method name

  std::string label() const { return group.empty() ? adapt::method_name(method) : group; }
  void validate() const;
};

Json to_json(const TrainConfig& c);
// With `top_level`, the document must carry a version field.
TrainConfig train_config_from_json(const Json& j, bool top_level = true, TrainConfig defaults = {});

// ---- prompts ---------------------------------------------------------------

// Interior pixel (4-neighbourhood erosion) nearest the mask centroid, then a
// seeded jitter of up to +-jitter px that is dropped if it leaves the mask.
sam::PromptPoint interior_point(const loss::BinaryMask& mask, std::uint64_t seed, int jitter);

// Evaluation prompt: seeded from (volume_id, slice_index) only, so every
// method and domain sees the same point for a given image.
sam::PromptSet eval_prompt(const data::Sample& sample, int jitter);

// ---- model files -----------------------------------------------------------

// Everything needed to rebuild a model for a checkpoint; stored as JSON next
// to it (<checkpoint>.json).
struct ModelSpec {
  adapt::Method method = adapt::Method::kFullFt;
  sam::ModelConfig model;
  adapt::AdapterConfig adapter;
  adapt::LoraConfig lora;
  std::uint64_t attach_seed = 0;
};

Json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const Json& j);

// Constructs the model and attaches whatever the method needs.
std::unique_ptr<sam::SamModel<float>> build_model(const ModelSpec& spec);

struct LoadedModel {
  std::unique_ptr<sam::SamModel<float>> model;
  ModelSpec spec;
};

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);
void save_model(const std::filesystem::path& checkpoint, const sam::SamModel<float>& model, const ModelSpec& spec);
// Reads the sidecar, rebuilds the model and loads every weight (strict).
LoadedModel load_model(const std::filesystem::path& checkpoint);

// ---- data ------------------------------------------------------------------

struct Dataset {
  std::filesystem::path root;
  data::DatasetManifest manifest;

  static Dataset open(const std::filesystem::path& root);
  bool has(const std::string& domain, const std::string& split) const;
  std::vector<data::Sample> load(const std::string& domain, const std::string& split) const;
};

Tensor<float> image_tensor(const data::Sample& s);

// ---- evaluation ------------------------------------------------------------

struct EvalResult {
  std::string domain;
  std::string split;
  std::vector<double> per_image;
  std::vector<std::string> sample_ids;  // "v0003_s07"
  double mean = 0.0;
  double std = 0.0;
};

Json to_json(const EvalResult& r);
EvalResult eval_result_from_json(const Json& j);

// Returns mask logits [H x W] for one sample and its prompt.
using Predictor = std::function<Tensor<float>(const data::Sample&, const sam::PromptSet&)>;

EvalResult evaluate_predictor(const Predictor& predict, const std::vector<data::Sample>& samples,
                              const std::string& domain, const std::string& split, int jitter);
EvalResult evaluate(const sam::SamModel<float>& model, const std::vector<data::Sample>& samples,
                    const std::string& domain, const std::string& split, int jitter = 2);

// ---- supervised training ---------------------------------------------------

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<double> epoch_loss;  // mean supervised loss per epoch
  std::vector<double> val_iou;     // index 0 is before the first update
  int best_epoch = 0;
  std::int64_t trainable = 0;
  std::int64_t total = 0;
  std::vector<EvalResult> evaluations;
  Json fragment;
};

using ProgressFn = std::function<void(const std::string&)>;

// Trains on source/train, keeps the best source/val checkpoint, audits the
// frozen weights, evaluates source/test and target/test, and writes
// checkpoint.sdck (+ sidecar) and train.fragment.json under `out_dir`.
TrainResult train_supervised(const TrainConfig& config, const std::filesystem::path& out_dir,
                             const ProgressFn& progress = {});

// ---- ablation --------------------------------------------------------------

enum class AblationAxis { kSize, kPlacement, kMethod };
AblationAxis parse_axis(const std::string& name);
std::string axis_name(AblationAxis axis);

struct ExperimentConfig {
  TrainConfig train;  // shared settings for every adapted run
  // Settings for the base model when none is given; always full_ft.
  TrainConfig base = [] {
    TrainConfig t;
    t.method = adapt::Method::kFullFt;
    return t;
  }();
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
  std::vector<int> sizes = {128, 256, 512};  // D_a values for the size axis
  std::vector<adapt::Method> methods = {adapt::Method::kFullFt, adapt::Method::kDecoderFt, adapt::Method::kLora,
                                        adapt::Method::kSamDaDec, adapt::Method::kSamDaEnc};
};

Json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const Json& j);

struct AblationRun {
  std::string group;
  std::uint64_t seed = 0;
  TrainConfig config;
};

// The run matrix for an axis: one entry per (axis value, seed).
std::vector<AblationRun> ablation_matrix(const ExperimentConfig& config, AblationAxis axis);

// Trains the base model if config.train.base_checkpoint is empty, then every
// run of the matrix under out_dir/<group>/seed<k>/. Returns the base path.
std::filesystem::path run_ablation(const ExperimentConfig& config, AblationAxis axis,
                                   const std::filesystem::path& out_dir, const ProgressFn& progress = {});

}  // namespace samda::engine
