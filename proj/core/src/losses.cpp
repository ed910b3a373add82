#include "samda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "samda/errors.hpp"
#include "samda/ops.hpp"

namespace samda::loss {

namespace {

template <typename S>
void require_same(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

template <typename S>
Tensor<S> one_minus(const Tensor<S>& x) {
  return ops::add_scalar(ops::scale(x, -1.0), 1.0);
}

template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x) {
  double sq = 0;
  for (auto v : x.data()) sq += static_cast<double>(v) * v;
  if (!(sq > 0)) throw ValidationError("slice_contrastive_loss: zero-norm embedding");
  return ops::mul(x, ops::pow(ops::sum(ops::mul(x, x)), -0.5));
}

}  // namespace

std::int64_t BinaryMask::count() const {
  return std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; });
}

void LossConfig::validate() const {
  for (double w : {dice_weight, ce_weight, iou_loss_weight, focal_gamma, lambda_entropy, lambda_proximity,
                   lambda_contrastive}) {
    if (!(w >= 0)) throw ValidationError("loss config: weights must be non-negative");
  }
  if (!(dice_smooth >= 0)) throw ValidationError("loss config: dice_smooth must be non-negative");
  if (!(entropy_percentile > 0 && entropy_percentile <= 1)) {
    throw ValidationError("loss config: entropy percentile q must lie in (0, 1]");
  }
  if (!(contrastive_temperature > 0)) throw ValidationError("loss config: temperature must be positive");
  if (positive_offset < 1 || negative_min_offset <= positive_offset) {
    throw ValidationError("loss config: need 1 <= positive_offset < negative_min_offset");
  }
}

template <typename S>
Tensor<S> mask_to_tensor(const BinaryMask& mask) {
  std::vector<S> v(mask.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask.data[i] ? S(1) : S(0);
  return Tensor<S>::from({mask.height, mask.width}, std::move(v));
}

template <typename S>
BinaryMask binarize(const Tensor<S>& logits) {
  BinaryMask m;
  m.height = static_cast<int>(logits.dim(0));
  m.width = static_cast<int>(logits.numel() / logits.dim(0));
  m.data.resize(static_cast<std::size_t>(logits.numel()));
  const auto v = logits.data();
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = v[i] > 0 ? 1 : 0;
  return m;
}

double compute_iou(const BinaryMask& pred, const BinaryMask& target) {
  if (pred.height != target.height || pred.width != target.width || pred.data.size() != target.data.size()) {
    throw DimensionError("compute_iou: mask shapes differ");
  }
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = target.data[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename S>
Tensor<S> dice_loss(const Tensor<S>& logits, const Tensor<S>& target, double smooth) {
  require_same("dice_loss", logits, target);
  const auto p = ops::sigmoid(logits);
  const auto num = ops::add_scalar(ops::scale(ops::sum(ops::mul(p, target)), 2.0), smooth);
  const auto den = ops::add_scalar(ops::add(ops::sum(p), ops::sum(target)), smooth);
  return one_minus(ops::mul(num, ops::pow(den, -1.0)));
}

template <typename S>
Tensor<S> cross_entropy_loss(const Tensor<S>& logits, const Tensor<S>& target) {
  return focal_loss(logits, target, 0.0);
}

template <typename S>
Tensor<S> focal_loss(const Tensor<S>& logits, const Tensor<S>& target, double gamma) {
  require_same("focal_loss", logits, target);
  if (!(gamma >= 0)) throw ValidationError("focal_loss: gamma must be non-negative");
  const auto p = ops::sigmoid(logits);
  // p_t = p t + (1 - p)(1 - t)
  const auto pt = ops::add(ops::mul(p, target), ops::mul(one_minus(p), one_minus(target)));
  auto nll = ops::scale(ops::log(pt), -1.0);
  if (gamma != 0.0) nll = ops::mul(ops::pow(one_minus(pt), gamma), nll);
  return ops::mean(nll);
}

template <typename S>
Tensor<S> iou_pred_loss(const Tensor<S>& iou_pred, const Tensor<S>& logits, const BinaryMask& target) {
  const double actual = compute_iou(binarize(logits), target);
  const auto diff = ops::add_scalar(iou_pred, -actual);
  return ops::reshape(ops::mul(diff, diff), {1});
}

template <typename S>
SupervisedLoss<S> supervised_loss(const sam::MaskPrediction<S>& pred, const BinaryMask& target,
                                  const LossConfig& config) {
  const auto t = mask_to_tensor<S>(target);
  const auto dice = dice_loss(pred.logits, t, config.dice_smooth);
  const auto ce = cross_entropy_loss(pred.logits, t);
  const auto iou = iou_pred_loss(pred.iou_pred, pred.logits, target);
  std::vector<Tensor<S>> terms;
  if (config.dice_weight != 0) terms.push_back(ops::scale(dice, config.dice_weight));
  if (config.ce_weight != 0) terms.push_back(ops::scale(ce, config.ce_weight));
  if (config.iou_loss_weight != 0) terms.push_back(ops::scale(iou, config.iou_loss_weight));
  Tensor<S> total = terms.empty() ? Tensor<S>::scalar(S(0)) : terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return {total, static_cast<double>(dice.item()), static_cast<double>(ce.item()), static_cast<double>(iou.item())};
}

template <typename S>
Tensor<S> pixel_entropy(const Tensor<S>& logits) {
  // Written in the logit: H = log1p(e^-|z|) + |z| sigmoid(-|z|). Going through
  // p = sigmoid(z) loses confident pixels to rounding once p hits 1.
  const auto z = logits.data();
  std::vector<S> h(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const S a = std::abs(z[i]);
    const S e = std::exp(-a);
    // Rounding near z = 0 can land one ulp above the maximum.
    h[i] = std::min(std::log1p(e) + a * e / (S(1) + e), S(std::numbers::ln2));
  }
  return Tensor<S>::make(logits.shape(), std::move(h), {logits}, [](detail::Node<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const S zi = in.value[i];
      const S e = std::exp(-std::abs(zi));
      // dH/dz = -z p (1 - p), with p (1 - p) = e / (1 + e)^2.
      g[i] -= node.grad[i] * zi * e / ((S(1) + e) * (S(1) + e));
    }
  });
}

template <typename S>
Tensor<S> binary_entropy_loss(const Tensor<S>& logits, double percentile) {
  if (!(percentile > 0 && percentile <= 1)) throw ValidationError("binary_entropy_loss: q must lie in (0, 1]");
  const auto h = pixel_entropy(logits);
  const auto n = static_cast<std::size_t>(h.numel());
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(percentile * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto hv = h.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return hv[a] < hv[b]; });
  std::vector<S> select(n, S(0));
  for (std::size_t i = 0; i < keep; ++i) select[order[i]] = S(1);
  const auto mask = Tensor<S>::from(h.shape(), std::move(select));
  return ops::scale(ops::sum(ops::mul(h, mask)), 1.0 / static_cast<double>(keep));
}

template <typename S>
Tensor<S> proximity_reg(const Tensor<S>& logits, const std::vector<S>& initial_probs, const LossConfig& config) {
  if (static_cast<std::int64_t>(initial_probs.size()) != logits.numel()) {
    throw DimensionError("proximity_reg: snapshot has " + std::to_string(initial_probs.size()) + " values for logits " +
                         shape_to_string(logits.shape()));
  }
  std::vector<S> pseudo(initial_probs.size());
  for (std::size_t i = 0; i < pseudo.size(); ++i) pseudo[i] = initial_probs[i] > S(0.5) ? S(1) : S(0);
  const auto target = Tensor<S>::from(logits.shape(), std::move(pseudo));
  return ops::add(focal_loss(logits, target, config.focal_gamma), dice_loss(logits, target, config.dice_smooth));
}

template <typename S>
Tensor<S> pool_embedding(const Tensor<S>& dense) {
  return ops::mean_rows(dense);
}

template <typename S>
Tensor<S> slice_contrastive_loss(const Tensor<S>& anchor, const Tensor<S>& positive,
                                 const std::vector<Tensor<S>>& negatives, double temperature) {
  if (negatives.empty()) throw ValidationError("slice_contrastive_loss: at least one negative is required");
  if (!(temperature > 0)) throw ValidationError("slice_contrastive_loss: temperature must be positive");
  const auto as_row = [](const Tensor<S>& t) { return ops::reshape(t, {1, t.numel()}); };
  const auto a = l2_normalize(as_row(anchor));
  std::vector<Tensor<S>> scores;
  const auto add_score = [&](const Tensor<S>& other) {
    if (other.numel() != a.numel()) throw DimensionError("slice_contrastive_loss: embedding sizes differ");
    scores.push_back(ops::scale(ops::matmul_nt(a, l2_normalize(as_row(other))), 1.0 / temperature));
  };
  add_score(positive);
  for (const auto& n : negatives) add_score(n);
  const auto probs = ops::softmax(ops::concat_cols(scores), 1);
  return ops::reshape(ops::scale(ops::log(ops::slice_cols(probs, 0, 1)), -1.0), {1});
}

#define SAMDA_INSTANTIATE_LOSSES(S)                                                                              \
  template Tensor<S> mask_to_tensor<S>(const BinaryMask&);                                                      \
  template BinaryMask binarize(const Tensor<S>&);                                                               \
  template Tensor<S> dice_loss(const Tensor<S>&, const Tensor<S>&, double);                                     \
  template Tensor<S> cross_entropy_loss(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> focal_loss(const Tensor<S>&, const Tensor<S>&, double);                                    \
  template Tensor<S> iou_pred_loss(const Tensor<S>&, const Tensor<S>&, const BinaryMask&);                      \
  template SupervisedLoss<S> supervised_loss(const sam::MaskPrediction<S>&, const BinaryMask&, const LossConfig&); \
  template Tensor<S> pixel_entropy(const Tensor<S>&);                                                           \
  template Tensor<S> binary_entropy_loss(const Tensor<S>&, double);                                             \
  template Tensor<S> proximity_reg(const Tensor<S>&, const std::vector<S>&, const LossConfig&);                 \
  template Tensor<S> pool_embedding(const Tensor<S>&);                                                          \
  template Tensor<S> slice_contrastive_loss(const Tensor<S>&, const Tensor<S>&, const std::vector<Tensor<S>>&,  \
                                            double);

SAMDA_INSTANTIATE_LOSSES(float)
SAMDA_INSTANTIATE_LOSSES(double)

}  // namespace samda::loss
