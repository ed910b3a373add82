#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "samda/params.hpp"
#include "samda/tensor.hpp"

namespace samda::sam {

struct ModelConfig {
  int image_size = 64;
  int patch_size = 8;
  int enc_dim = 128;
  int enc_depth = 6;
  int enc_heads = 4;
  int enc_mlp_ratio = 4;
  int dec_dim = 64;  // D_t
  int dec_depth = 2;
  int dec_heads = 2;
  int dec_mlp_ratio = 4;
  int num_mask_tokens = 1;
  std::uint64_t seed = 0;

  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  // Number of 2x upsampling stages from the patch grid to pixels.
  int upsample_stages() const;
  // Channels of the per-pixel feature map after upsampling.
  int pixel_feature_dim() const;
  // Throws ValidationError describing the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct PromptPoint {
  double x = 0.0;  // column, pixels
  double y = 0.0;  // row, pixels
  bool positive = true;
};

struct PromptSet {
  std::vector<PromptPoint> points;
};

template <typename S>
struct ImageEmbedding {
  Tensor<S> grid;  // [M x D_t]
  int height = 0;  // h'
  int width = 0;   // w'
};

template <typename S>
struct MaskPrediction {
  Tensor<S> logits;    // [image_size x image_size]
  Tensor<S> iou_pred;  // [1], after sigmoid
  Tensor<S> dense;     // [M x D_t], dense decoder embeddings fed to the upsampler
};

template <typename S>
struct DecoderState {
  Tensor<S> tokens;    // [T x D_t]: mask token, IoU token, prompt tokens
  Tensor<S> dense;     // T_l: [M x D_t]
  Tensor<S> token_pe;  // initial tokens, re-added to queries/keys every layer
  Tensor<S> dense_pe;  // [M x D_t] positional encoding of the patch grid
};

// Transforms a token sequence in place of the original (adapter hook).
template <typename S>
class TokenHook {
 public:
  virtual ~TokenHook() = default;
  virtual Tensor<S> apply(const Tensor<S>& tokens) const = 0;
};

// Additive low-rank correction to a projection output, given its input.
template <typename S>
class ProjectionDelta {
 public:
  virtual ~ProjectionDelta() = default;
  virtual Tensor<S> apply(const Tensor<S>& input) const = 0;
};

enum class Projection { kQuery = 0, kKey = 1, kValue = 2 };

template <typename S>
struct LinearLayer {
  Tensor<S> weight;  // [in x out]
  Tensor<S> bias;    // [out]
};

template <typename S>
struct NormLayer {
  Tensor<S> gain;
  Tensor<S> bias;
};

template <typename S>
struct AttentionLayer {
  LinearLayer<S> q, k, v, out;
  int heads = 1;
};

template <typename S>
struct MlpLayer {
  LinearLayer<S> fc1, fc2;
};

// Sinusoidal encoding of a normalised (x, y) in [0, 1]^2 into `dim` values
// (dim divisible by 4): for k < dim/4, [sin, cos](pi (k+1) x), [sin, cos](pi (k+1) y).
template <typename S>
void sinusoidal_encoding(double x, double y, int dim, S* out);

// Splits an image [H x W] into row-major patches [M x p*p].
template <typename S>
Tensor<S> patchify(const Tensor<S>& image, int patch_size);

// Multi-head scaled dot-product attention with per-head dim = dim / heads.
// `deltas` optionally adds low-rank corrections to the q/k/v projections.
template <typename S>
Tensor<S> attention(const AttentionLayer<S>& layer, const Tensor<S>& queries, const Tensor<S>& keys,
                    const Tensor<S>& values,
                    const std::array<std::shared_ptr<const ProjectionDelta<S>>, 3>* deltas = nullptr);

// Small SAM-shaped promptable segmenter: ViT-style image encoder, point
// prompt encoder, two-way transformer mask decoder, upsampling mask head and
// IoU head. All weights live in params(); construction initialises them from
// config().seed.
template <typename S>
class SamModel {
 public:
  explicit SamModel(ModelConfig config);
  SamModel(const SamModel&) = delete;
  SamModel& operator=(const SamModel&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore<S>& params() noexcept { return params_; }
  const ParamStore<S>& params() const noexcept { return params_; }

  ImageEmbedding<S> encode_image(const Tensor<S>& image) const;
  Tensor<S> encode_prompts(const PromptSet& prompts) const;
  const Tensor<S>& dense_positional_encoding() const noexcept { return dense_pe_; }

  DecoderState<S> initial_state(const ImageEmbedding<S>& embedding, const Tensor<S>& prompt_tokens) const;
  // One two-way block. The adapter hook is not applied here.
  DecoderState<S> twoway_layer(const DecoderState<S>& state, int layer) const;
  MaskPrediction<S> decode_masks(const ImageEmbedding<S>& embedding, const Tensor<S>& prompt_tokens) const;

  MaskPrediction<S> predict(const Tensor<S>& image, const PromptSet& prompts) const;
  std::vector<MaskPrediction<S>> predict_batch(const std::vector<Tensor<S>>& images,
                                               const std::vector<PromptSet>& prompts) const;

  // Hook slots used by adaptation methods.
  void set_decoder_hook(int layer, std::shared_ptr<const TokenHook<S>> hook);
  void set_encoder_hook(int block, std::shared_ptr<const TokenHook<S>> hook);
  void set_projection_delta(int block, Projection which, std::shared_ptr<const ProjectionDelta<S>> delta);
  bool has_decoder_hook(int layer) const;
  bool has_encoder_hook(int block) const;
  bool has_projection_delta(int block, Projection which) const;

  // Encoder input/weights helpers exposed for adapter construction.
  const AttentionLayer<S>& encoder_attention(int block) const { return enc_blocks_.at(static_cast<std::size_t>(block)).attn; }

 private:
  struct EncoderBlock {
    NormLayer<S> norm1, norm2;
    AttentionLayer<S> attn;
    MlpLayer<S> mlp;
  };
  struct DecoderLayer {
    AttentionLayer<S> self_attn, token_to_image, image_to_token;
    NormLayer<S> norm1, norm2, norm3, norm4;
    MlpLayer<S> mlp;
  };

  LinearLayer<S> make_linear(const std::string& name, int in, int out);
  NormLayer<S> make_norm(const std::string& name, int dim);
  AttentionLayer<S> make_attention(const std::string& name, int dim, int heads);
  MlpLayer<S> make_mlp(const std::string& name, int in, int hidden, int out);

  ModelConfig config_;
  ParamStore<S> params_;

  LinearLayer<S> patch_embed_;
  Tensor<S> pos_embed_;
  std::vector<EncoderBlock> enc_blocks_;
  NormLayer<S> neck_norm_;
  LinearLayer<S> neck_proj_;

  Tensor<S> label_embed_;  // [2 x D_t], row 0 negative, row 1 positive

  Tensor<S> mask_token_;
  Tensor<S> iou_token_;
  std::vector<DecoderLayer> dec_layers_;
  std::vector<LinearLayer<S>> upscale_;
  MlpLayer<S> hyper_;
  MlpLayer<S> iou_head_;

  Tensor<S> dense_pe_;

  std::vector<std::shared_ptr<const TokenHook<S>>> decoder_hooks_;
  std::vector<std::shared_ptr<const TokenHook<S>>> encoder_hooks_;
  std::vector<std::array<std::shared_ptr<const ProjectionDelta<S>>, 3>> deltas_;
};

extern template class SamModel<float>;
extern template class SamModel<double>;

}  // namespace samda::sam
