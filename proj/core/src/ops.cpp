#include "samda/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "samda/errors.hpp"

namespace samda::ops {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using CMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using MMap = Eigen::Map<RowMat<S>>;

template <typename S>
using NodeT = detail::Node<S>;

template <typename S>
CMap<S> as_matrix(const std::vector<S>& v, std::int64_t rows, std::int64_t cols) {
  return CMap<S>(v.data(), rows, cols);
}

template <typename S>
MMap<S> as_matrix(std::vector<S>& v, std::int64_t rows, std::int64_t cols) {
  return MMap<S>(v.data(), rows, cols);
}

// dst (+)= lhs * rhs. Eigen's kernels peel loops by pointer alignment, so the
// operands are copied into owned, aligned storage first; otherwise the
// rounding of a product would depend on where its buffers happen to live.
template <typename S, typename L, typename R>
void product(MMap<S> dst, const L& lhs, const R& rhs, bool accumulate) {
  const RowMat<S> a = lhs;
  const RowMat<S> b = rhs;
  RowMat<S> c(a.rows(), b.cols());
  c.noalias() = a * b;
  if (accumulate) {
    dst += c;
  } else {
    dst = c;
  }
}

template <typename S>
void require_matrix(const Tensor<S>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_to_string(t.shape()));
  }
}

template <typename S>
void require_vector(const Tensor<S>& t, std::int64_t n, const char* op, const char* what) {
  if (t.numel() != n) {
    throw DimensionError(std::string(op) + ": " + what + " has shape " + shape_to_string(t.shape()) +
                         ", expected " + std::to_string(n) + " elements");
  }
}

template <typename S>
[[noreturn]] void mismatch(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) +
                       " and " + shape_to_string(b.shape()));
}

// Elementwise unary op: forward f(x), backward dx += dy * df(x, y).
template <typename S, typename F, typename DF>
Tensor<S> unary(const Tensor<S>& x, F f, DF df) {
  const auto& xv = x.node()->value;
  std::vector<S> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Tensor<S>::make(x.shape(), std::move(out), {x}, [df](NodeT<S>& n) {
    auto& in = *n.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(in.value[i], n.value[i]);
  });
}

enum class Broadcast { kSame, kScalarB, kScalarA };

template <typename S>
Broadcast classify(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalarB;
  if (a.numel() == 1) return Broadcast::kScalarA;
  mismatch(op, a, b);
}

// Elementwise binary op with scalar broadcasting. da/db are partials of f.
template <typename S, typename F, typename DA, typename DB>
Tensor<S> binary(const char* op, const Tensor<S>& a, const Tensor<S>& b, F f, DA da, DB db) {
  const auto mode = classify(op, a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  const std::size_t n = mode == Broadcast::kScalarA ? bv.size() : av.size();
  const auto ai = [mode](std::size_t i) { return mode == Broadcast::kScalarA ? 0 : i; };
  const auto bi = [mode](std::size_t i) { return mode == Broadcast::kScalarB ? 0 : i; };
  std::vector<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[ai(i)], bv[bi(i)]);
  Shape shape = mode == Broadcast::kScalarA ? b.shape() : a.shape();
  return Tensor<S>::make(std::move(shape), std::move(out), {a, b},
                         [=](NodeT<S>& node) {
                           auto& na = *node.inputs[0];
                           auto& nb = *node.inputs[1];
                           if (na.requires_grad) {
                             auto& g = na.ensure_grad();
                             for (std::size_t i = 0; i < n; ++i)
                               g[ai(i)] += node.grad[i] * da(na.value[ai(i)], nb.value[bi(i)]);
                           }
                           if (nb.requires_grad) {
                             auto& g = nb.ensure_grad();
                             for (std::size_t i = 0; i < n; ++i)
                               g[bi(i)] += node.grad[i] * db(na.value[ai(i)], nb.value[bi(i)]);
                           }
                         });
}

}  // namespace

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul", a, b);
  std::vector<S> out(static_cast<std::size_t>(m * n));
  product<S>(as_matrix(out, m, n), as_matrix(a.node()->value, m, k), as_matrix(b.node()->value, k, n), false);
  return Tensor<S>::make({m, n}, std::move(out), {a, b}, [m, k, n](NodeT<S>& node) {
    auto& na = *node.inputs[0];
    auto& nb = *node.inputs[1];
    const auto dy = as_matrix(static_cast<const std::vector<S>&>(node.grad), m, n);
    if (na.requires_grad) {
      product<S>(as_matrix(na.ensure_grad(), m, k),
                 dy,
                 as_matrix(static_cast<const std::vector<S>&>(nb.value), k, n).transpose(), true);
    }
    if (nb.requires_grad) {
      product<S>(as_matrix(nb.ensure_grad(), k, n),
                 as_matrix(static_cast<const std::vector<S>&>(na.value), m, k).transpose(),
                 dy, true);
    }
  });
}

template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) mismatch("matmul_nt", a, b);
  std::vector<S> out(static_cast<std::size_t>(m * n));
  product<S>(as_matrix(out, m, n),
             as_matrix(a.node()->value, m, k),
             as_matrix(b.node()->value, n, k).transpose(), false);
  return Tensor<S>::make({m, n}, std::move(out), {a, b}, [m, k, n](NodeT<S>& node) {
    auto& na = *node.inputs[0];
    auto& nb = *node.inputs[1];
    const auto dy = as_matrix(static_cast<const std::vector<S>&>(node.grad), m, n);
    if (na.requires_grad) {
      product<S>(as_matrix(na.ensure_grad(), m, k),
                 dy,
                 as_matrix(static_cast<const std::vector<S>&>(nb.value), n, k), true);
    }
    if (nb.requires_grad) {
      product<S>(as_matrix(nb.ensure_grad(), n, k),
                 dy.transpose(),
                 as_matrix(static_cast<const std::vector<S>&>(na.value), m, k), true);
    }
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  require_matrix(x, "transpose");
  const auto r = x.dim(0), c = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(r * c));
  as_matrix(out, c, r) = as_matrix(x.node()->value, r, c).transpose();
  return Tensor<S>::make({c, r}, std::move(out), {x}, [r, c](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    as_matrix(in.ensure_grad(), r, c) +=
        as_matrix(static_cast<const std::vector<S>&>(node.grad), c, r).transpose();
  });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  const auto n = x.dim(0), in = x.dim(1), outd = weight.dim(1);
  if (weight.dim(0) != in) mismatch("linear", x, weight);
  require_vector(bias, outd, "linear", "bias");
  std::vector<S> out(static_cast<std::size_t>(n * outd));
  auto y = as_matrix(out, n, outd);
  product<S>(y, as_matrix(x.node()->value, n, in), as_matrix(weight.node()->value, in, outd), false);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.node()->value.data(), outd);
  return Tensor<S>::make({n, outd}, std::move(out), {x, weight, bias}, [n, in, outd](NodeT<S>& node) {
    auto& nx = *node.inputs[0];
    auto& nw = *node.inputs[1];
    auto& nb = *node.inputs[2];
    const auto dy = as_matrix(static_cast<const std::vector<S>&>(node.grad), n, outd);
    if (nx.requires_grad) {
      product<S>(as_matrix(nx.ensure_grad(), n, in),
                 dy,
                 as_matrix(static_cast<const std::vector<S>&>(nw.value), in, outd).transpose(), true);
    }
    if (nw.requires_grad) {
      product<S>(as_matrix(nw.ensure_grad(), in, outd),
                 as_matrix(static_cast<const std::vector<S>&>(nx.value), n, in).transpose(),
                 dy, true);
    }
    if (nb.requires_grad) {
      // Fixed row order; Eigen's column reduction depends on buffer alignment.
      auto& gb = nb.ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < outd; ++j) gb[static_cast<std::size_t>(j)] += dy(i, j);
    }
  });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); }, [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; }, [](S x, S) { return x; });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double factor) {
  const S f = static_cast<S>(factor);
  return unary<S>(x, [f](S v) { return v * f; }, [f](S, S) { return f; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, double value) {
  const S c = static_cast<S>(value);
  return unary<S>(x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary<S>(
      x,
      [](S v) {
        if (v >= 0) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  return unary<S>(
      x, [](S v) { return S(0.5) * v * (S(1) + std::erf(v * S(std::numbers::sqrt2 / 2))); },
      [](S v, S) {
        const S cdf = S(0.5) * (S(1) + std::erf(v * S(std::numbers::sqrt2 / 2)));
        const S pdf = std::exp(S(-0.5) * v * v) * S(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        return cdf + v * pdf;
      });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary<S>(x, [](S v) { return v > 0 ? v : S(0); }, [](S v, S) { return v > 0 ? S(1) : S(0); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  const S lo = static_cast<S>(kLogClamp);
  return unary<S>(
      x, [lo](S v) { return std::log(std::max(v, lo)); }, [lo](S v, S) { return v > lo ? S(1) / v : S(0); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary<S>(x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> pow(const Tensor<S>& x, double p) {
  const S e = static_cast<S>(p);
  return unary<S>(
      x,
      [e](S v) {
        if (e == S(0)) return S(1);
        return v > 0 ? std::pow(v, e) : S(0);
      },
      [e](S v, S) {
        if (e == S(0)) return S(0);
        if (v > 0) return e * std::pow(v, e - S(1));
        return e == S(1) ? S(1) : S(0);
      });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = 0;
  for (auto v : x.data()) total += v;
  return Tensor<S>::make({1}, {total}, {x}, [](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    const S g = node.grad[0];
    for (auto& v : in.ensure_grad()) v += g;
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  require_matrix(x, "mean_rows");
  const auto r = x.dim(0), c = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(c));
  const auto xm = as_matrix(x.node()->value, r, c);
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += xm(i, j);
  for (auto& v : out) v /= S(r);
  return Tensor<S>::make({1, c}, std::move(out), {x}, [r, c](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    const auto g = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(node.grad.data(), c) / S(r);
    as_matrix(in.ensure_grad(), r, c).rowwise() += g;
  });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, std::int64_t axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) {
    throw DimensionError("softmax: axis out of range for shape " + shape_to_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::int64_t outer = 1, inner = 1;
  const std::int64_t len = shape[static_cast<std::size_t>(axis)];
  for (std::int64_t i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= shape[static_cast<std::size_t>(i)];
  const auto& xv = x.node()->value;
  std::vector<S> out(xv.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const auto at = [&](std::int64_t j) { return static_cast<std::size_t>((o * len + j) * inner + in); };
      S mx = xv[at(0)];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, xv[at(j)]);
      S z = 0;
      for (std::int64_t j = 0; j < len; ++j) z += (out[at(j)] = std::exp(xv[at(j)] - mx));
      for (std::int64_t j = 0; j < len; ++j) out[at(j)] /= z;
    }
  }
  return Tensor<S>::make(shape, std::move(out), {x}, [outer, inner, len](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    const auto& y = node.value;
    const auto& dy = node.grad;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const auto at = [&](std::int64_t j) { return static_cast<std::size_t>((o * len + j) * inner + i); };
        S dot = 0;
        for (std::int64_t j = 0; j < len; ++j) dot += dy[at(j)] * y[at(j)];
        for (std::int64_t j = 0; j < len; ++j) g[at(j)] += y[at(j)] * (dy[at(j)] - dot);
      }
    }
  });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, double eps) {
  require_matrix(x, "layer_norm");
  const auto rows = x.dim(0), d = x.dim(1);
  require_vector(gain, d, "layer_norm", "gain");
  require_vector(bias, d, "layer_norm", "bias");
  if (!(eps > 0)) throw DimensionError("layer_norm: eps must be positive");
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<S> out(xv.size()), xhat(xv.size()), rstd(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* row = xv.data() + r * d;
    S mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= S(d);
    S var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= S(d);
    const S rs = S(1) / std::sqrt(var + S(eps));
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const auto k = static_cast<std::size_t>(r * d + j);
      xhat[k] = (row[j] - mu) * rs;
      out[k] = xhat[k] * gv[static_cast<std::size_t>(j)] + bv[static_cast<std::size_t>(j)];
    }
  }
  return Tensor<S>::make(x.shape(), std::move(out), {x, gain, bias},
                         [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](NodeT<S>& node) {
                           auto& nx = *node.inputs[0];
                           auto& ng = *node.inputs[1];
                           auto& nb = *node.inputs[2];
                           const auto& dy = node.grad;
                           if (ng.requires_grad || nb.requires_grad) {
                             auto* gg = ng.requires_grad ? ng.ensure_grad().data() : nullptr;
                             auto* gb = nb.requires_grad ? nb.ensure_grad().data() : nullptr;
                             for (std::int64_t r = 0; r < rows; ++r) {
                               for (std::int64_t j = 0; j < d; ++j) {
                                 const auto k = static_cast<std::size_t>(r * d + j);
                                 if (gg) gg[j] += dy[k] * xhat[k];
                                 if (gb) gb[j] += dy[k];
                               }
                             }
                           }
                           if (!nx.requires_grad) return;
                           auto& gx = nx.ensure_grad();
                           const auto& gv = ng.value;
                           std::vector<S> dxhat(static_cast<std::size_t>(d));
                           for (std::int64_t r = 0; r < rows; ++r) {
                             S m1 = 0, m2 = 0;
                             for (std::int64_t j = 0; j < d; ++j) {
                               const auto k = static_cast<std::size_t>(r * d + j);
                               dxhat[static_cast<std::size_t>(j)] = dy[k] * gv[static_cast<std::size_t>(j)];
                               m1 += dxhat[static_cast<std::size_t>(j)];
                               m2 += dxhat[static_cast<std::size_t>(j)] * xhat[k];
                             }
                             m1 /= S(d);
                             m2 /= S(d);
                             const S rs = rstd[static_cast<std::size_t>(r)];
                             for (std::int64_t j = 0; j < d; ++j) {
                               const auto k = static_cast<std::size_t>(r * d + j);
                               gx[k] += rs * (dxhat[static_cast<std::size_t>(j)] - m1 - xhat[k] * m2);
                             }
                           }
                         });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  return Tensor<S>::make(std::move(shape), x.node()->value, {x}, [](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
  });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const auto cols = parts.front().dim(1);
  std::int64_t rows = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != cols) mismatch("concat_rows", parts.front(), p);
    offsets.push_back(rows * cols);
    rows += p.dim(0);
  }
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(rows * cols));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor<S>::make({rows, cols}, std::move(out), parts, [offsets](NodeT<S>& node) {
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto& in = *node.inputs[i];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      const auto* src = node.grad.data() + offsets[i];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
    }
  });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, std::int64_t start, std::int64_t count) {
  require_matrix(x, "slice_rows");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count <= 0 || start + count > rows) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for shape " + shape_to_string(x.shape()));
  }
  const auto begin = x.data().begin() + start * cols;
  std::vector<S> out(begin, begin + count * cols);
  return Tensor<S>::make({count, cols}, std::move(out), {x}, [start, cols](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    auto* g = in.ensure_grad().data() + start * cols;
    for (std::size_t k = 0; k < node.grad.size(); ++k) g[k] += node.grad[k];
  });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const auto rows = parts.front().dim(0);
  std::int64_t cols = 0;
  std::vector<std::int64_t> offsets, widths;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != rows) mismatch("concat_cols", parts.front(), p);
    offsets.push_back(cols);
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<S> out(static_cast<std::size_t>(rows * cols));
  auto y = as_matrix(out, rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    y.middleCols(offsets[i], widths[i]) = as_matrix(parts[i].node()->value, rows, widths[i]);
  }
  return Tensor<S>::make({rows, cols}, std::move(out), parts, [rows, cols, offsets, widths](NodeT<S>& node) {
    const auto dy = as_matrix(static_cast<const std::vector<S>&>(node.grad), rows, cols);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto& in = *node.inputs[i];
      if (!in.requires_grad) continue;
      as_matrix(in.ensure_grad(), rows, widths[i]) += dy.middleCols(offsets[i], widths[i]);
    }
  });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, std::int64_t start, std::int64_t count) {
  require_matrix(x, "slice_cols");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count <= 0 || start + count > cols) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for shape " + shape_to_string(x.shape()));
  }
  std::vector<S> out(static_cast<std::size_t>(rows * count));
  as_matrix(out, rows, count) = as_matrix(x.node()->value, rows, cols).middleCols(start, count);
  return Tensor<S>::make({rows, count}, std::move(out), {x}, [rows, cols, start, count](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    as_matrix(in.ensure_grad(), rows, cols).middleCols(start, count) +=
        as_matrix(static_cast<const std::vector<S>&>(node.grad), rows, count);
  });
}

template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, std::int64_t h, std::int64_t w) {
  require_matrix(x, "pixel_shuffle");
  if (x.dim(0) != h * w || x.dim(1) % 4 != 0) {
    throw DimensionError("pixel_shuffle: shape " + shape_to_string(x.shape()) + " is not [" +
                         std::to_string(h * w) + " x 4c]");
  }
  const auto c = x.dim(1) / 4;
  const auto ow = 2 * w;
  // index[k] is the source element for output element k.
  std::vector<std::int64_t> index(static_cast<std::size_t>(x.numel()));
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      for (std::int64_t dy = 0; dy < 2; ++dy)
        for (std::int64_t dx = 0; dx < 2; ++dx)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const auto dst = ((2 * i + dy) * ow + (2 * j + dx)) * c + ch;
            const auto src = (i * w + j) * 4 * c + (dy * 2 + dx) * c + ch;
            index[static_cast<std::size_t>(dst)] = src;
          }
  const auto& xv = x.node()->value;
  std::vector<S> out(xv.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = xv[static_cast<std::size_t>(index[k])];
  return Tensor<S>::make({4 * h * w, c}, std::move(out), {x}, [index = std::move(index)](NodeT<S>& node) {
    auto& in = *node.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t k = 0; k < node.grad.size(); ++k) g[static_cast<std::size_t>(index[k])] += node.grad[k];
  });
}

#define SAMDA_INSTANTIATE_OPS(S)                                                                  \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> matmul_nt(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> transpose(const Tensor<S>&);                                                 \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> scale(const Tensor<S>&, double);                                             \
  template Tensor<S> add_scalar(const Tensor<S>&, double);                                        \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                   \
  template Tensor<S> gelu(const Tensor<S>&);                                                      \
  template Tensor<S> relu(const Tensor<S>&);                                                      \
  template Tensor<S> log(const Tensor<S>&);                                                       \
  template Tensor<S> exp(const Tensor<S>&);                                                       \
  template Tensor<S> pow(const Tensor<S>&, double);                                               \
  template Tensor<S> sum(const Tensor<S>&);                                                       \
  template Tensor<S> mean(const Tensor<S>&);                                                      \
  template Tensor<S> mean_rows(const Tensor<S>&);                                                 \
  template Tensor<S> softmax(const Tensor<S>&, std::int64_t);                                     \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);    \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                            \
  template Tensor<S> concat_rows(const std::vector<Tensor<S>>&);                                  \
  template Tensor<S> slice_rows(const Tensor<S>&, std::int64_t, std::int64_t);                    \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);                                  \
  template Tensor<S> slice_cols(const Tensor<S>&, std::int64_t, std::int64_t);                    \
  template Tensor<S> pixel_shuffle(const Tensor<S>&, std::int64_t, std::int64_t);

SAMDA_INSTANTIATE_OPS(float)
SAMDA_INSTANTIATE_OPS(double)

}  // namespace samda::ops
