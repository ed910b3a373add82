#pragma once

#include <cstdint>
#include <vector>

#include "samda/model.hpp"
#include "samda/tensor.hpp"

namespace samda::loss {

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // row-major, 0 or 1

  std::int64_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

struct LossConfig {
  double dice_weight = 0.8;
  double ce_weight = 0.2;
  double iou_loss_weight = 1.0;
  double focal_gamma = 2.0;
  double dice_smooth = 1.0;
  double entropy_percentile = 0.7;  // q: fraction of lowest-entropy pixels kept
  double lambda_entropy = 1.0;
  double lambda_proximity = 1.0;
  double lambda_contrastive = 0.1;
  double contrastive_temperature = 0.1;
  int positive_offset = 1;
  int negative_min_offset = 5;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

template <typename S>
Tensor<S> mask_to_tensor(const BinaryMask& mask);

// Pixels with sigmoid(logit) > 0.5.
template <typename S>
BinaryMask binarize(const Tensor<S>& logits);

// |A and B| / |A or B|; 1.0 when both masks are empty.
double compute_iou(const BinaryMask& pred, const BinaryMask& target);

// 1 - (2 sum(p t) + smooth) / (sum p + sum t + smooth), p = sigmoid(logits).
template <typename S>
Tensor<S> dice_loss(const Tensor<S>& logits, const Tensor<S>& target, double smooth);

// Mean binary cross-entropy with logs clamped at 1e-12.
template <typename S>
Tensor<S> cross_entropy_loss(const Tensor<S>& logits, const Tensor<S>& target);

// Mean of -(1 - p_t)^gamma log p_t.
template <typename S>
Tensor<S> focal_loss(const Tensor<S>& logits, const Tensor<S>& target, double gamma);

// (iou_pred - IoU(binarize(logits), target))^2; the measured IoU is a constant.
template <typename S>
Tensor<S> iou_pred_loss(const Tensor<S>& iou_pred, const Tensor<S>& logits, const BinaryMask& target);

template <typename S>
struct SupervisedLoss {
  Tensor<S> total;
  double dice = 0.0;
  double cross_entropy = 0.0;
  double iou = 0.0;
};

template <typename S>
SupervisedLoss<S> supervised_loss(const sam::MaskPrediction<S>& pred, const BinaryMask& target,
                                  const LossConfig& config);

// Per-pixel binary entropy of sigmoid(logits), values in [0, ln 2].
template <typename S>
Tensor<S> pixel_entropy(const Tensor<S>& logits);

// Mean entropy over the ceil(q * n) lowest-entropy pixels. The selection is
// fixed at call time; gradients flow through the selected pixels only.
template <typename S>
Tensor<S> binary_entropy_loss(const Tensor<S>& logits, double percentile);

// focal(logits, y0, gamma) + dice(logits, y0) with y0 = initial_probs > 0.5.
template <typename S>
Tensor<S> proximity_reg(const Tensor<S>& logits, const std::vector<S>& initial_probs, const LossConfig& config);

// Mean over rows of a dense embedding [M x D] -> [1 x D].
template <typename S>
Tensor<S> pool_embedding(const Tensor<S>& dense);

// InfoNCE over L2-normalised pooled embeddings [1 x D]. Zero-norm inputs
// raise ValidationError.
template <typename S>
Tensor<S> slice_contrastive_loss(const Tensor<S>& anchor, const Tensor<S>& positive,
                                 const std::vector<Tensor<S>>& negatives, double temperature);

}  // namespace samda::loss
