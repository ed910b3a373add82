#include "samda/adapter.hpp"

#include <algorithm>
#include <cmath>

#include "samda/errors.hpp"
#include "samda/ops.hpp"

namespace samda::adapt {

namespace {

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

template <typename S>
sam::LinearLayer<S> make_linear(ParamStore<S>& store, const std::string& name, int in, int out, InitSpec weight_init) {
  return {store.create(name + ".weight", {in, out}, weight_init), store.create(name + ".bias", {out}, InitSpec::zeros())};
}

InitSpec fan_in(int in) { return InitSpec::normal(1.0 / std::sqrt(static_cast<double>(in))); }

const char* projection_name(sam::Projection p) {
  switch (p) {
    case sam::Projection::kQuery:
      return "q";
    case sam::Projection::kKey:
      return "k";
    case sam::Projection::kValue:
      return "v";
  }
  return "?";
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::kFullFt:
      return "full_ft";
    case Method::kDecoderFt:
      return "decoder_ft";
    case Method::kLora:
      return "lora";
    case Method::kSamDaDec:
      return "sam_da_dec";
    case Method::kSamDaEnc:
      return "sam_da_enc";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (auto m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw ValidationError("unknown method '" + name + "' (expected full_ft, decoder_ft, lora, sam_da_dec, sam_da_enc)");
}

std::string placement_name(Placement p) { return p == Placement::kDecoder ? "decoder" : "encoder"; }

Placement parse_placement(const std::string& name) {
  if (name == "decoder") return Placement::kDecoder;
  if (name == "encoder") return Placement::kEncoder;
  throw ValidationError("unknown adapter placement '" + name + "' (expected decoder or encoder)");
}

AdapterConfig AdapterConfig::full_scale() {
  AdapterConfig c;
  c.prompts = 2;
  c.prompt_dim = 512;
  c.key_dim = 256;
  c.value_dim = 256;
  return c;
}

int AdapterConfig::adapted_encoder_blocks(int enc_depth) const {
  if (encoder_adapted_blocks >= 0) return encoder_adapted_blocks;
  return (5 * enc_depth + 5) / 6;  // ceil(5/6 * depth)
}

void AdapterConfig::validate() const {
  if (prompts < 1) throw ValidationError("adapter: prompt count N must be >= 1");
  if (prompt_dim < 1 || key_dim < 1 || value_dim < 1) throw ValidationError("adapter: dimensions must be positive");
  if (!(init_scale >= 0)) throw ValidationError("adapter: init_scale must be non-negative");
  if (encoder_adapted_blocks < -1) throw ValidationError("adapter: encoder_adapted_blocks must be >= 0 (or -1)");
}

void LoraConfig::validate() const {
  if (rank < 1) throw ValidationError("lora: rank must be >= 1");
  if (targets.empty()) throw ValidationError("lora: at least one target projection is required");
}

template <typename S>
AdapterLayer<S>::AdapterLayer(ParamStore<S>& store, const std::string& prefix, int model_dim,
                              const AdapterConfig& config)
    : model_dim_(model_dim), value_dim_(config.value_dim) {
  prompt = store.create(prefix + ".prompt", {config.prompts, config.prompt_dim}, InitSpec::normal(config.init_scale));
  gate = store.create(prefix + ".gate", {1}, InitSpec::zeros());
  query = make_linear(store, prefix + ".q", model_dim, config.key_dim, fan_in(model_dim));
  key = make_linear(store, prefix + ".k", config.prompt_dim, config.key_dim, fan_in(config.prompt_dim));
  value = make_linear(store, prefix + ".v", config.prompt_dim, config.value_dim, fan_in(config.prompt_dim));
  output = make_linear(store, prefix + ".o", config.value_dim, model_dim, fan_in(config.value_dim));
  transform = make_linear(store, prefix + ".t", model_dim, model_dim, InitSpec::identity());
}

template <typename S>
Tensor<S> AdapterLayer<S>::attention(const Tensor<S>& dense) const {
  if (dense.rank() != 2 || dense.dim(1) != model_dim_) {
    throw DimensionError("adapter: expected embeddings [M x " + std::to_string(model_dim_) + "], got " +
                         shape_to_string(dense.shape()));
  }
  const auto q = ops::linear(dense, query.weight, query.bias);
  const auto k = ops::linear(prompt, key.weight, key.bias);
  const auto v = ops::linear(prompt, value.weight, value.bias);
  const auto scores = ops::scale(ops::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(value_dim_)));
  const auto mixed = ops::matmul(ops::softmax(scores, 1), v);
  return ops::linear(mixed, output.weight, output.bias);
}

template <typename S>
Tensor<S> AdapterLayer<S>::apply(const Tensor<S>& dense) const {
  const auto corrected = ops::add(dense, ops::mul(attention(dense), gate));
  return ops::linear(corrected, transform.weight, transform.bias);
}

template <typename S>
LoraDelta<S>::LoraDelta(ParamStore<S>& store, const std::string& prefix, int in_dim, int out_dim,
                        const LoraConfig& config)
    : scale_(config.scaling()) {
  down = store.create(prefix + ".down", {in_dim, config.rank}, fan_in(in_dim));
  up = store.create(prefix + ".up", {config.rank, out_dim}, InitSpec::zeros());
}

template <typename S>
Tensor<S> LoraDelta<S>::apply(const Tensor<S>& input) const {
  return ops::scale(ops::matmul(ops::matmul(input, down), up), scale_);
}

template <typename S>
std::vector<std::shared_ptr<AdapterLayer<S>>> attach_decoder_adapter(sam::SamModel<S>& model,
                                                                     const AdapterConfig& config,
                                                                     std::uint64_t seed) {
  config.validate();
  if (config.placement != Placement::kDecoder) {
    throw ContractError("attach_decoder_adapter: adapter placement must be decoder");
  }
  const auto& mc = model.config();
  for (int l = 0; l < mc.dec_depth; ++l) {
    if (model.has_decoder_hook(l)) throw ContractError("attach_decoder_adapter: decoder adapter already attached");
  }
  std::vector<std::shared_ptr<AdapterLayer<S>>> layers;
  for (int l = 0; l < mc.dec_depth; ++l) {
    auto layer = std::make_shared<AdapterLayer<S>>(model.params(), "adapter.decoder." + std::to_string(l),
                                                   mc.dec_dim, config);
    model.set_decoder_hook(l, layer);
    layers.push_back(std::move(layer));
  }
  model.params().initialize(seed, [](const std::string& n) { return starts_with(n, "adapter.decoder."); });
  apply_freeze_policy(model.params(), Method::kSamDaDec);
  return layers;
}

template <typename S>
std::vector<std::shared_ptr<AdapterLayer<S>>> attach_encoder_adapter(sam::SamModel<S>& model,
                                                                     const AdapterConfig& config,
                                                                     std::uint64_t seed) {
  config.validate();
  if (config.placement != Placement::kEncoder) {
    throw ContractError("attach_encoder_adapter: adapter placement must be encoder");
  }
  const auto& mc = model.config();
  const int count = config.adapted_encoder_blocks(mc.enc_depth);
  if (count > mc.enc_depth) {
    throw ValidationError("attach_encoder_adapter: " + std::to_string(count) + " adapted blocks requested but the encoder has " +
                          std::to_string(mc.enc_depth));
  }
  for (int b = 0; b < mc.enc_depth; ++b) {
    if (model.has_encoder_hook(b)) throw ContractError("attach_encoder_adapter: encoder adapter already attached");
  }
  std::vector<std::shared_ptr<AdapterLayer<S>>> layers;
  for (int b = mc.enc_depth - count; b < mc.enc_depth; ++b) {
    auto layer = std::make_shared<AdapterLayer<S>>(model.params(), "adapter.encoder." + std::to_string(b),
                                                   mc.enc_dim, config);
    model.set_encoder_hook(b, layer);
    layers.push_back(std::move(layer));
  }
  model.params().initialize(seed, [](const std::string& n) { return starts_with(n, "adapter.encoder."); });
  apply_freeze_policy(model.params(), Method::kSamDaEnc);
  return layers;
}

template <typename S>
std::vector<std::shared_ptr<LoraDelta<S>>> attach_lora(sam::SamModel<S>& model, const LoraConfig& config,
                                                       std::uint64_t seed) {
  config.validate();
  const auto& mc = model.config();
  if (config.rank > mc.enc_dim) {
    throw ValidationError("attach_lora: rank " + std::to_string(config.rank) + " exceeds projection size " +
                          std::to_string(mc.enc_dim));
  }
  std::vector<std::shared_ptr<LoraDelta<S>>> deltas;
  for (int b = 0; b < mc.enc_depth; ++b) {
    for (auto target : config.targets) {
      if (model.has_projection_delta(b, target)) throw ContractError("attach_lora: LoRA already attached");
      const auto& proj = [&]() -> const sam::LinearLayer<S>& {
        const auto& attn = model.encoder_attention(b);
        return target == sam::Projection::kQuery ? attn.q : target == sam::Projection::kKey ? attn.k : attn.v;
      }();
      const int in = static_cast<int>(proj.weight.dim(0));
      const int out = static_cast<int>(proj.weight.dim(1));
      if (config.rank > std::min(in, out)) throw ValidationError("attach_lora: rank exceeds min(d_in, d_out)");
      auto delta = std::make_shared<LoraDelta<S>>(
          model.params(), "adapter.lora." + std::to_string(b) + "." + projection_name(target), in, out, config);
      model.set_projection_delta(b, target, delta);
      deltas.push_back(std::move(delta));
    }
  }
  model.params().initialize(seed, [](const std::string& n) { return starts_with(n, "adapter.lora."); });
  apply_freeze_policy(model.params(), Method::kLora);
  return deltas;
}

bool is_trainable(Method method, const std::string& name) {
  switch (method) {
    case Method::kFullFt:
      return true;
    case Method::kDecoderFt:
      return starts_with(name, "decoder.");
    case Method::kLora:
      return starts_with(name, "adapter.lora.") || starts_with(name, "decoder.");
    case Method::kSamDaDec:
      return starts_with(name, "adapter.decoder.");
    case Method::kSamDaEnc:
      return starts_with(name, "adapter.encoder.") || starts_with(name, "decoder.");
  }
  return false;
}

template <typename S>
void prepare_method(sam::SamModel<S>& model, Method method, const AdapterConfig& adapter, const LoraConfig& lora,
                    std::uint64_t seed) {
  switch (method) {
    case Method::kFullFt:
    case Method::kDecoderFt:
      break;
    case Method::kLora:
      attach_lora(model, lora, seed);
      break;
    case Method::kSamDaDec: {
      auto c = adapter;
      c.placement = Placement::kDecoder;
      attach_decoder_adapter(model, c, seed);
      break;
    }
    case Method::kSamDaEnc: {
      auto c = adapter;
      c.placement = Placement::kEncoder;
      attach_encoder_adapter(model, c, seed);
      break;
    }
  }
  apply_freeze_policy(model.params(), method);
}

std::int64_t adapter_param_count(const AdapterConfig& c, int model_dim, int layers) {
  const std::int64_t n = c.prompts, da = c.prompt_dim, dk = c.key_dim, dv = c.value_dim, dt = model_dim;
  const std::int64_t per_layer = n * da + 1 + (dt * dk + dk) + (da * dk + dk) + (da * dv + dv) + (dv * dt + dt) +
                                 (dt * dt + dt);
  return per_layer * layers;
}

#define SAMDA_INSTANTIATE_ADAPTER(S)                                                                              \
  template class AdapterLayer<S>;                                                                                \
  template class LoraDelta<S>;                                                                                   \
  template std::vector<std::shared_ptr<AdapterLayer<S>>> attach_decoder_adapter(sam::SamModel<S>&,               \
                                                                                const AdapterConfig&,             \
                                                                                std::uint64_t);                   \
  template std::vector<std::shared_ptr<AdapterLayer<S>>> attach_encoder_adapter(sam::SamModel<S>&,               \
                                                                                const AdapterConfig&,             \
                                                                                std::uint64_t);                   \
  template std::vector<std::shared_ptr<LoraDelta<S>>> attach_lora(sam::SamModel<S>&, const LoraConfig&,          \
                                                                  std::uint64_t);                                 \
  template void prepare_method(sam::SamModel<S>&, Method, const AdapterConfig&, const LoraConfig&, std::uint64_t);

SAMDA_INSTANTIATE_ADAPTER(float)
SAMDA_INSTANTIATE_ADAPTER(double)

}  // namespace samda::adapt
