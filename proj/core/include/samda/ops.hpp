#pragma once

#include <cstdint>
#include <vector>

#include "samda/tensor.hpp"

// Differentiable tensor operations. Every function records a backward rule
// when gradients are enabled and an input requires them.
//
// Broadcasting is limited to the two forms the model needs: equal shapes,
// and a one-element tensor against anything. Matrix operations take rank-2
// inputs; vectors used as biases or gains are rank 1.
namespace samda::ops {

// [m x k] . [k x n] -> [m x n]
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

// [m x k] . [n x k]^T -> [m x n]
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> transpose(const Tensor<S>& x);

// x [n x in] . weight [in x out] + bias [out]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
// Hadamard product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double factor);
template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, double value);

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x);
// Exact (erf) form.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x);
template <typename S>
Tensor<S> relu(const Tensor<S>& x);
// Natural log of max(x, 1e-12); the gradient is zero where the clamp is active.
template <typename S>
Tensor<S> log(const Tensor<S>& x);
template <typename S>
Tensor<S> exp(const Tensor<S>& x);
// x^p for x >= 0. 0^0 is 1 with zero gradient.
template <typename S>
Tensor<S> pow(const Tensor<S>& x, double p);

inline constexpr double kLogClamp = 1e-12;

template <typename S>
Tensor<S> sum(const Tensor<S>& x);
template <typename S>
Tensor<S> mean(const Tensor<S>& x);
// [n x d] -> [1 x d]
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x);

// Numerically stable softmax along one axis of any rank.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, std::int64_t axis);

// Per-row normalisation over the last axis of x [n x d].
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, double eps);

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape);

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts);
template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, std::int64_t start, std::int64_t count);
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts);
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, std::int64_t start, std::int64_t count);

// Rearranges x [(h*w) x 4c] so each token becomes a 2x2 block of c-channel
// tokens on a (2h)x(2w) grid. Channel block (dy*2+dx) lands at offset (dy, dx).
template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, std::int64_t h, std::int64_t w);

}  // namespace samda::ops
