#include "samda/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "samda/errors.hpp"
#include "samda/ops.hpp"

namespace samda::sam {

namespace {

constexpr double kNormEps = 1e-5;

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

template <typename S>
Tensor<S> apply_linear(const LinearLayer<S>& l, const Tensor<S>& x) {
  return ops::linear(x, l.weight, l.bias);
}

template <typename S>
Tensor<S> apply_norm(const NormLayer<S>& n, const Tensor<S>& x) {
  return ops::layer_norm(x, n.gain, n.bias, kNormEps);
}

template <typename S>
Tensor<S> apply_mlp(const MlpLayer<S>& m, const Tensor<S>& x) {
  return apply_linear(m.fc2, ops::gelu(apply_linear(m.fc1, x)));
}

}  // namespace

int ModelConfig::upsample_stages() const {
  int stages = 0;
  for (int p = patch_size; p > 1; p /= 2) ++stages;
  return stages;
}

int ModelConfig::pixel_feature_dim() const { return dec_dim >> upsample_stages(); }

void ModelConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (image_size <= 0 || patch_size <= 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (!is_power_of_two(patch_size)) fail("patch_size must be a power of two (2x upsampling stages)");
  if (enc_dim <= 0 || enc_heads <= 0 || enc_dim % enc_heads != 0) fail("enc_dim must be divisible by enc_heads");
  if (dec_dim <= 0 || dec_heads <= 0 || dec_dim % dec_heads != 0) fail("dec_dim must be divisible by dec_heads");
  if (dec_dim % 4 != 0) fail("dec_dim must be divisible by 4 (sinusoidal point encoding)");
  if (enc_depth < 1) fail("enc_depth must be >= 1");
  if (dec_depth < 1) fail("dec_depth must be >= 1");
  if (enc_mlp_ratio < 1 || dec_mlp_ratio < 1) fail("mlp ratios must be >= 1");
  if (num_mask_tokens != 1) fail("only num_mask_tokens == 1 is supported");
  if ((dec_dim >> upsample_stages()) < 1 || (dec_dim % (1 << upsample_stages())) != 0) {
    fail("dec_dim must be divisible by 2^log2(patch_size)");
  }
}

template <typename S>
void sinusoidal_encoding(double x, double y, int dim, S* out) {
  const int freqs = dim / 4;
  for (int k = 0; k < freqs; ++k) {
    const double w = std::numbers::pi * (k + 1);
    out[4 * k + 0] = static_cast<S>(std::sin(w * x));
    out[4 * k + 1] = static_cast<S>(std::cos(w * x));
    out[4 * k + 2] = static_cast<S>(std::sin(w * y));
    out[4 * k + 3] = static_cast<S>(std::cos(w * y));
  }
}

template <typename S>
Tensor<S> patchify(const Tensor<S>& image, int patch_size) {
  if (image.rank() != 2 || image.dim(0) % patch_size != 0 || image.dim(1) % patch_size != 0) {
    throw DimensionError("patchify: image shape " + shape_to_string(image.shape()) +
                         " is not divisible into patches of " + std::to_string(patch_size));
  }
  const auto h = image.dim(0), w = image.dim(1);
  const auto gh = h / patch_size, gw = w / patch_size;
  const auto pp = static_cast<std::int64_t>(patch_size) * patch_size;
  std::vector<S> out(static_cast<std::size_t>(gh * gw * pp));
  const auto src = image.data();
  for (std::int64_t gi = 0; gi < gh; ++gi)
    for (std::int64_t gj = 0; gj < gw; ++gj)
      for (std::int64_t di = 0; di < patch_size; ++di)
        for (std::int64_t dj = 0; dj < patch_size; ++dj) {
          out[static_cast<std::size_t>((gi * gw + gj) * pp + di * patch_size + dj)] =
              src[static_cast<std::size_t>((gi * patch_size + di) * w + gj * patch_size + dj)];
        }
  return Tensor<S>::from({gh * gw, pp}, std::move(out));
}

template <typename S>
Tensor<S> attention(const AttentionLayer<S>& layer, const Tensor<S>& queries, const Tensor<S>& keys,
                    const Tensor<S>& values,
                    const std::array<std::shared_ptr<const ProjectionDelta<S>>, 3>* deltas) {
  auto project = [&](const LinearLayer<S>& l, const Tensor<S>& x, Projection which) {
    auto y = apply_linear(l, x);
    if (deltas) {
      if (const auto& d = (*deltas)[static_cast<std::size_t>(which)]) y = ops::add(y, d->apply(x));
    }
    return y;
  };
  const auto q = project(layer.q, queries, Projection::kQuery);
  const auto k = project(layer.k, keys, Projection::kKey);
  const auto v = project(layer.v, values, Projection::kValue);
  const auto dim = q.dim(1);
  const auto head_dim = dim / layer.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor<S> mixed;
  if (layer.heads == 1) {
    mixed = ops::matmul(ops::softmax(ops::scale(ops::matmul_nt(q, k), scale), 1), v);
  } else {
    std::vector<Tensor<S>> heads;
    heads.reserve(static_cast<std::size_t>(layer.heads));
    for (int h = 0; h < layer.heads; ++h) {
      const auto qh = ops::slice_cols(q, h * head_dim, head_dim);
      const auto kh = ops::slice_cols(k, h * head_dim, head_dim);
      const auto vh = ops::slice_cols(v, h * head_dim, head_dim);
      heads.push_back(ops::matmul(ops::softmax(ops::scale(ops::matmul_nt(qh, kh), scale), 1), vh));
    }
    mixed = ops::concat_cols(heads);
  }
  return apply_linear(layer.out, mixed);
}

template <typename S>
LinearLayer<S> SamModel<S>::make_linear(const std::string& name, int in, int out) {
  return {params_.create(name + ".weight", {in, out}, InitSpec::normal(1.0 / std::sqrt(double(in)))),
          params_.create(name + ".bias", {out}, InitSpec::zeros())};
}

template <typename S>
NormLayer<S> SamModel<S>::make_norm(const std::string& name, int dim) {
  return {params_.create(name + ".gain", {dim}, InitSpec::ones()),
          params_.create(name + ".bias", {dim}, InitSpec::zeros())};
}

template <typename S>
AttentionLayer<S> SamModel<S>::make_attention(const std::string& name, int dim, int heads) {
  return {make_linear(name + ".q", dim, dim), make_linear(name + ".k", dim, dim),
          make_linear(name + ".v", dim, dim), make_linear(name + ".out", dim, dim), heads};
}

template <typename S>
MlpLayer<S> SamModel<S>::make_mlp(const std::string& name, int in, int hidden, int out) {
  return {make_linear(name + ".fc1", in, hidden), make_linear(name + ".fc2", hidden, out)};
}

template <typename S>
SamModel<S>::SamModel(ModelConfig config) : config_(config) {
  config_.validate();
  const int e = config_.enc_dim;
  const int d = config_.dec_dim;
  const int m = config_.num_patches();
  const int pp = config_.patch_size * config_.patch_size;

  patch_embed_ = make_linear("encoder.patch_embed", pp, e);
  pos_embed_ = params_.create("encoder.pos_embed", {m, e}, InitSpec::normal(0.02));
  for (int i = 0; i < config_.enc_depth; ++i) {
    const auto prefix = "encoder.blocks." + std::to_string(i);
    EncoderBlock b;
    b.norm1 = make_norm(prefix + ".norm1", e);
    b.attn = make_attention(prefix + ".attn", e, config_.enc_heads);
    b.norm2 = make_norm(prefix + ".norm2", e);
    b.mlp = make_mlp(prefix + ".mlp", e, e * config_.enc_mlp_ratio, e);
    enc_blocks_.push_back(std::move(b));
  }
  neck_norm_ = make_norm("encoder.neck.norm", e);
  neck_proj_ = make_linear("encoder.neck.proj", e, d);

  label_embed_ = params_.create("prompt_encoder.label_embed", {2, d}, InitSpec::normal(1.0));

  mask_token_ = params_.create("decoder.mask_token", {1, d}, InitSpec::normal(1.0));
  iou_token_ = params_.create("decoder.iou_token", {1, d}, InitSpec::normal(1.0));
  for (int l = 0; l < config_.dec_depth; ++l) {
    const auto prefix = "decoder.layers." + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = make_attention(prefix + ".self_attn", d, config_.dec_heads);
    layer.norm1 = make_norm(prefix + ".norm1", d);
    layer.token_to_image = make_attention(prefix + ".token_to_image", d, config_.dec_heads);
    layer.norm2 = make_norm(prefix + ".norm2", d);
    layer.mlp = make_mlp(prefix + ".mlp", d, d * config_.dec_mlp_ratio, d);
    layer.norm3 = make_norm(prefix + ".norm3", d);
    layer.image_to_token = make_attention(prefix + ".image_to_token", d, config_.dec_heads);
    layer.norm4 = make_norm(prefix + ".norm4", d);
    dec_layers_.push_back(std::move(layer));
  }
  int c = d;
  for (int s = 0; s < config_.upsample_stages(); ++s) {
    upscale_.push_back(make_linear("decoder.upscale." + std::to_string(s), c, 2 * c));
    c /= 2;
  }
  hyper_ = make_mlp("decoder.hyper", d, d, config_.pixel_feature_dim());
  iou_head_ = make_mlp("decoder.iou_head", d, d, 1);

  params_.initialize(config_.seed);

  const int side = config_.grid_side();
  std::vector<S> pe(static_cast<std::size_t>(m * d));
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      const double x = (j + 0.5) / side;
      const double y = (i + 0.5) / side;
      sinusoidal_encoding<S>(x, y, d, pe.data() + static_cast<std::size_t>((i * side + j) * d));
    }
  dense_pe_ = Tensor<S>::from({m, d}, std::move(pe));

  decoder_hooks_.resize(static_cast<std::size_t>(config_.dec_depth));
  encoder_hooks_.resize(static_cast<std::size_t>(config_.enc_depth));
  deltas_.resize(static_cast<std::size_t>(config_.enc_depth));
}

template <typename S>
ImageEmbedding<S> SamModel<S>::encode_image(const Tensor<S>& image) const {
  if (image.rank() != 2 || image.dim(0) != config_.image_size || image.dim(1) != config_.image_size) {
    throw DimensionError("encode_image: expected a " + std::to_string(config_.image_size) + "x" +
                         std::to_string(config_.image_size) + " image, got " + shape_to_string(image.shape()));
  }
  auto x = ops::add(apply_linear(patch_embed_, patchify(image, config_.patch_size)), pos_embed_);
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
    const auto& b = enc_blocks_[i];
    const auto h = apply_norm(b.norm1, x);
    const bool has_delta = deltas_[i][0] || deltas_[i][1] || deltas_[i][2];
    x = ops::add(x, attention(b.attn, h, h, h, has_delta ? &deltas_[i] : nullptr));
    x = ops::add(x, apply_mlp(b.mlp, apply_norm(b.norm2, x)));
    if (encoder_hooks_[i]) x = encoder_hooks_[i]->apply(x);
  }
  auto grid = apply_linear(neck_proj_, apply_norm(neck_norm_, x));
  return {std::move(grid), config_.grid_side(), config_.grid_side()};
}

template <typename S>
Tensor<S> SamModel<S>::encode_prompts(const PromptSet& prompts) const {
  if (prompts.points.empty()) throw ValidationError("prompt set must contain at least one point");
  const int d = config_.dec_dim;
  const double size = config_.image_size;
  std::vector<S> pe(prompts.points.size() * static_cast<std::size_t>(d));
  std::vector<Tensor<S>> labels;
  for (std::size_t i = 0; i < prompts.points.size(); ++i) {
    const auto& p = prompts.points[i];
    if (!(p.x >= 0 && p.x < size && p.y >= 0 && p.y < size)) {
      throw ValidationError("prompt point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                            ") lies outside the " + std::to_string(config_.image_size) + "px image");
    }
    sinusoidal_encoding<S>((p.x + 0.5) / size, (p.y + 0.5) / size, d, pe.data() + i * static_cast<std::size_t>(d));
    labels.push_back(ops::slice_rows(label_embed_, p.positive ? 1 : 0, 1));
  }
  const auto n = static_cast<std::int64_t>(prompts.points.size());
  return ops::add(Tensor<S>::from({n, d}, std::move(pe)), ops::concat_rows(labels));
}

template <typename S>
DecoderState<S> SamModel<S>::initial_state(const ImageEmbedding<S>& embedding, const Tensor<S>& prompt_tokens) const {
  auto tokens = ops::concat_rows<S>({mask_token_, iou_token_, prompt_tokens});
  return {tokens, embedding.grid, tokens, dense_pe_};
}

template <typename S>
DecoderState<S> SamModel<S>::twoway_layer(const DecoderState<S>& state, int layer) const {
  const auto& L = dec_layers_.at(static_cast<std::size_t>(layer));
  if (state.dense.shape() != dense_pe_.shape()) {
    throw DimensionError("twoway_layer: dense embedding shape " + shape_to_string(state.dense.shape()) +
                         " does not match " + shape_to_string(dense_pe_.shape()));
  }
  auto tokens = state.tokens;
  auto dense = state.dense;

  auto q = ops::add(tokens, state.token_pe);
  tokens = apply_norm(L.norm1, ops::add(tokens, attention(L.self_attn, q, q, tokens)));

  q = ops::add(tokens, state.token_pe);
  auto k = ops::add(dense, state.dense_pe);
  tokens = apply_norm(L.norm2, ops::add(tokens, attention(L.token_to_image, q, k, dense)));

  tokens = apply_norm(L.norm3, ops::add(tokens, apply_mlp(L.mlp, tokens)));

  q = ops::add(tokens, state.token_pe);
  k = ops::add(dense, state.dense_pe);
  dense = apply_norm(L.norm4, ops::add(dense, attention(L.image_to_token, k, q, tokens)));

  return {std::move(tokens), std::move(dense), state.token_pe, state.dense_pe};
}

template <typename S>
MaskPrediction<S> SamModel<S>::decode_masks(const ImageEmbedding<S>& embedding, const Tensor<S>& prompt_tokens) const {
  auto state = initial_state(embedding, prompt_tokens);
  for (int l = 0; l < config_.dec_depth; ++l) {
    state = twoway_layer(state, l);
    if (const auto& hook = decoder_hooks_[static_cast<std::size_t>(l)]) state.dense = hook->apply(state.dense);
  }

  auto features = state.dense;
  std::int64_t h = embedding.height, w = embedding.width;
  for (const auto& stage : upscale_) {
    features = ops::gelu(ops::pixel_shuffle(apply_linear(stage, features), h, w));
    h *= 2;
    w *= 2;
  }
  const auto mask_token = ops::slice_rows(state.tokens, 0, 1);
  const auto hyper = apply_mlp(hyper_, mask_token);
  auto logits = ops::reshape(ops::matmul_nt(features, hyper), {h, w});

  const auto iou_token = ops::slice_rows(state.tokens, 1, 1);
  auto iou = ops::reshape(ops::sigmoid(apply_mlp(iou_head_, iou_token)), {1});
  return {std::move(logits), std::move(iou), std::move(state.dense)};
}

template <typename S>
MaskPrediction<S> SamModel<S>::predict(const Tensor<S>& image, const PromptSet& prompts) const {
  const auto tokens = encode_prompts(prompts);
  return decode_masks(encode_image(image), tokens);
}

template <typename S>
std::vector<MaskPrediction<S>> SamModel<S>::predict_batch(const std::vector<Tensor<S>>& images,
                                                          const std::vector<PromptSet>& prompts) const {
  if (images.size() != prompts.size()) throw DimensionError("predict_batch: images and prompts differ in count");
  std::vector<MaskPrediction<S>> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(predict(images[i], prompts[i]));
  return out;
}

template <typename S>
void SamModel<S>::set_decoder_hook(int layer, std::shared_ptr<const TokenHook<S>> hook) {
  decoder_hooks_.at(static_cast<std::size_t>(layer)) = std::move(hook);
}

template <typename S>
void SamModel<S>::set_encoder_hook(int block, std::shared_ptr<const TokenHook<S>> hook) {
  encoder_hooks_.at(static_cast<std::size_t>(block)) = std::move(hook);
}

template <typename S>
void SamModel<S>::set_projection_delta(int block, Projection which, std::shared_ptr<const ProjectionDelta<S>> delta) {
  deltas_.at(static_cast<std::size_t>(block))[static_cast<std::size_t>(which)] = std::move(delta);
}

template <typename S>
bool SamModel<S>::has_decoder_hook(int layer) const {
  return static_cast<bool>(decoder_hooks_.at(static_cast<std::size_t>(layer)));
}

template <typename S>
bool SamModel<S>::has_encoder_hook(int block) const {
  return static_cast<bool>(encoder_hooks_.at(static_cast<std::size_t>(block)));
}

template <typename S>
bool SamModel<S>::has_projection_delta(int block, Projection which) const {
  return static_cast<bool>(deltas_.at(static_cast<std::size_t>(block))[static_cast<std::size_t>(which)]);
}

template void sinusoidal_encoding<float>(double, double, int, float*);
template void sinusoidal_encoding<double>(double, double, int, double*);
template Tensor<float> patchify(const Tensor<float>&, int);
template Tensor<double> patchify(const Tensor<double>&, int);
template Tensor<float> attention(const AttentionLayer<float>&, const Tensor<float>&, const Tensor<float>&,
                                 const Tensor<float>&,
                                 const std::array<std::shared_ptr<const ProjectionDelta<float>>, 3>*);
template Tensor<double> attention(const AttentionLayer<double>&, const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&,
                                  const std::array<std::shared_ptr<const ProjectionDelta<double>>, 3>*);
template class SamModel<float>;
template class SamModel<double>;

}  // namespace samda::sam
