#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "samda/model.hpp"
#include "samda/params.hpp"

namespace samda::adapt {

enum class Method { kFullFt, kDecoderFt, kLora, kSamDaDec, kSamDaEnc };

inline constexpr Method kAllMethods[] = {Method::kFullFt, Method::kDecoderFt, Method::kLora, Method::kSamDaDec,
                                         Method::kSamDaEnc};

std::string method_name(Method m);
// Accepts full_ft, decoder_ft, lora, sam_da_dec, sam_da_enc.
Method parse_method(const std::string& name);

enum class Placement { kDecoder, kEncoder };

std::string placement_name(Placement p);
Placement parse_placement(const std::string& name);

struct AdapterConfig {
  int prompts = 2;       // N
  int prompt_dim = 128;  // D_a
  int key_dim = 64;      // D_k
  int value_dim = 64;    // D_v
  Placement placement = Placement::kDecoder;
  // Number of trailing encoder blocks to adapt; -1 means ceil(5/6 * depth).
  int encoder_adapted_blocks = -1;
  double init_scale = 0.02;

  // Dimensions used with the full-size SAM decoder (N=2, D_a=512, D_k=D_v=256).
  static AdapterConfig full_scale();

  int adapted_encoder_blocks(int enc_depth) const;
  void validate() const;

  bool operator==(const AdapterConfig&) const = default;
};

struct LoraConfig {
  int rank = 4;
  double alpha = 8.0;
  std::vector<sam::Projection> targets = {sam::Projection::kQuery, sam::Projection::kValue};

  double scaling() const { return alpha / rank; }
  void validate() const;

  bool operator==(const LoraConfig&) const = default;
};

// Adapter state for one layer: prompt A [N x D_a], gate g, and the
// q/k/v/o/t projections. Reads T [M x D], returns T' [M x D].
template <typename S>
class AdapterLayer final : public sam::TokenHook<S> {
 public:
  // Registers the layer's parameters under `prefix` in `store`.
  AdapterLayer(ParamStore<S>& store, const std::string& prefix, int model_dim, const AdapterConfig& config);

  // softmax(Q K^T / sqrt(D_v)) V projected back to model_dim: S' [M x D].
  Tensor<S> attention(const Tensor<S>& dense) const;
  // W_t(T + g * S').
  Tensor<S> apply(const Tensor<S>& dense) const override;

  int model_dim() const noexcept { return model_dim_; }

  Tensor<S> prompt;
  Tensor<S> gate;
  sam::LinearLayer<S> query, key, value, output, transform;

 private:
  int model_dim_;
  int value_dim_;
};

template <typename S>
Tensor<S> adapter_attention(const Tensor<S>& dense, const AdapterLayer<S>& layer) {
  return layer.attention(dense);
}

template <typename S>
Tensor<S> adapter_apply(const Tensor<S>& dense, const AdapterLayer<S>& layer) {
  return layer.apply(dense);
}

// Low-rank delta scale * (x . down) . up with `up` zero-initialised.
template <typename S>
class LoraDelta final : public sam::ProjectionDelta<S> {
 public:
  LoraDelta(ParamStore<S>& store, const std::string& prefix, int in_dim, int out_dim, const LoraConfig& config);
  Tensor<S> apply(const Tensor<S>& input) const override;

  Tensor<S> down;  // [in x r]
  Tensor<S> up;    // [r x out]

 private:
  double scale_;
};

// Installs one adapter per decoder layer, initialises it from `seed`, and
// applies the sam_da_dec freeze policy. Throws ContractError if the model
// already carries decoder adapters.
template <typename S>
std::vector<std::shared_ptr<AdapterLayer<S>>> attach_decoder_adapter(sam::SamModel<S>& model,
                                                                     const AdapterConfig& config,
                                                                     std::uint64_t seed);

// Installs adapters on the last encoder blocks (all image tokens as queries)
// and applies the sam_da_enc freeze policy.
template <typename S>
std::vector<std::shared_ptr<AdapterLayer<S>>> attach_encoder_adapter(sam::SamModel<S>& model,
                                                                     const AdapterConfig& config,
                                                                     std::uint64_t seed);

// Adds low-rank deltas to the targeted encoder attention projections and
// applies the lora freeze policy.
template <typename S>
std::vector<std::shared_ptr<LoraDelta<S>>> attach_lora(sam::SamModel<S>& model, const LoraConfig& config,
                                                       std::uint64_t seed);

// Name predicate for the parameters `method` trains.
bool is_trainable(Method method, const std::string& name);

template <typename S>
void apply_freeze_policy(ParamStore<S>& store, Method method) {
  store.set_trainable([method](const std::string& name) { return is_trainable(method, name); });
}

// Attaches whatever `method` needs (nothing for full_ft / decoder_ft) and
// applies its freeze policy.
template <typename S>
void prepare_method(sam::SamModel<S>& model, Method method, const AdapterConfig& adapter, const LoraConfig& lora,
                    std::uint64_t seed);

// Closed-form learnable parameters of the adapter over `layers` layers.
std::int64_t adapter_param_count(const AdapterConfig& config, int model_dim, int layers);

inline constexpr const char* kAdapterPrefix = "adapter.";

}  // namespace samda::adapt
