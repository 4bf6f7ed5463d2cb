#include "affect/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>

#include "affect/errors.hpp"

namespace affect::ops {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const Mat<T>>;

template <typename T>
ConstMapMat<T> as_mat(const std::vector<T>& v, Shape s) {
  return ConstMapMat<T>(v.data(), static_cast<Eigen::Index>(s.rows),
                        static_cast<Eigen::Index>(s.cols));
}
template <typename T>
MapMat<T> as_mat(std::vector<T>& v, Shape s) {
  return MapMat<T>(v.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

// Builds the output node; the closure is attached only when some input needs grad.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, const char* op,
                 std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor<T>* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Tensor<T>* in : inputs) node->inputs.push_back(in->node());
    node->backward = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> record_many(Shape shape, std::vector<T> value, const char* op,
                      std::span<const Tensor<T>> inputs, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Shape out{a.rows(), b.cols()};
  std::vector<T> v(out.numel());
  as_mat(v, out).noalias() = as_mat(a.node()->value, a.shape()) * as_mat(b.node()->value, b.shape());
  return record<T>(out, std::move(v), "matmul", {&a, &b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    auto G = as_mat(std::as_const(self.grad), self.shape);
    if (A.requires_grad) {
      as_mat(A.grad, A.shape).noalias() += G * as_mat(std::as_const(B.value), B.shape).transpose();
    }
    if (B.requires_grad) {
      as_mat(B.grad, B.shape).noalias() += as_mat(std::as_const(A.value), A.shape).transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Shape out{a.cols(), a.rows()};
  std::vector<T> v(out.numel());
  as_mat(v, out) = as_mat(a.node()->value, a.shape()).transpose();
  return record<T>(out, std::move(v), "transpose", {&a}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    as_mat(A.grad, A.shape) += as_mat(std::as_const(self.grad), self.shape).transpose();
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> v(a.numel());
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i];
  return record<T>(a.shape(), std::move(v), "add", {&a, &b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      auto& g = self.inputs[k]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<T> v(a.numel());
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - y[i];
  return record<T>(a.shape(), std::move(v), "sub", {&a, &b}, [](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = self.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> v(a.numel());
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
  return record<T>(a.shape(), std::move(v), "mul", {&a, &b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      for (std::size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      for (std::size_t i = 0; i < B.grad.size(); ++i) B.grad[i] += self.grad[i] * A.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> v(a.node()->value);
  for (auto& e : v) e *= factor;
  return record<T>(a.shape(), std::move(v), "scale", {&a}, [factor](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_row: bias " + to_string(bias.shape()) + " does not broadcast over " +
                     to_string(x.shape()));
  }
  const std::size_t n = x.cols();
  std::vector<T> v(x.node()->value);
  const auto& b = bias.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b[i % n];
  return record<T>(x.shape(), std::move(v), "add_row", {&x, &bias}, [n](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = self.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.inputs[1]->grad;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> tile_rows(const Tensor<T>& x, std::size_t reps) {
  if (reps == 0) throw ShapeError("tile_rows: zero repetitions");
  const auto& src = x.node()->value;
  std::vector<T> v;
  v.reserve(src.size() * reps);
  for (std::size_t r = 0; r < reps; ++r) v.insert(v.end(), src.begin(), src.end());
  return record<T>({x.rows() * reps, x.cols()}, std::move(v), "tile_rows", {&x},
                   [](Node<T>& self) {
                     auto& g = self.inputs[0]->grad;
                     const std::size_t m = g.size();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % m] += self.grad[i];
                   });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  const auto& src = x.node()->value;
  std::vector<T> v(src.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* in = src.data() + r * n;
    T* out = v.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) {
      out[c] = std::exp(in[c] - mx);
      total += out[c];
    }
    for (std::size_t c = 0; c < n; ++c) out[c] /= total;
  }
  return record<T>(x.shape(), std::move(v), "softmax_rows", {&x}, [m, n](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t r = 0; r < m; ++r) {
      const T* y = self.value.data() + r * n;
      const T* gy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (gy[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  const auto& src = x.node()->value;
  std::vector<T> v(src.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* in = src.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) total += std::exp(in[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < n; ++c) v[r * n + c] = in[c] - lse;
  }
  return record<T>(x.shape(), std::move(v), "log_softmax_rows", {&x}, [m, n](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t r = 0; r < m; ++r) {
      const T* y = self.value.data() + r * n;
      const T* gy = self.grad.data() + r * n;
      T total = 0;
      for (std::size_t c = 0; c < n; ++c) total += gy[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += gy[c] - std::exp(y[c]) * total;
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.shape() != Shape{1, d} || bias.shape() != Shape{1, d}) {
    throw ShapeError("layer_norm: gain/bias must be [1x" + std::to_string(d) + "], got " +
                     to_string(gain.shape()) + " and " + to_string(bias.shape()));
  }
  if (!(eps > 0)) throw ShapeError("layer_norm: eps must be positive");
  const auto& src = x.node()->value;
  const auto& gn = gain.node()->value;
  const auto& bs = bias.node()->value;
  std::vector<T> v(src.size());
  // Normalized rows and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(src.size());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* in = src.data() + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (in[c] - mu) * inv;
      (*xhat)[r * d + c] = h;
      v[r * d + c] = gn[c] * h + bs[c];
    }
  }
  return record<T>(x.shape(), std::move(v), "layer_norm", {&x, &gain, &bias},
                   [m, d, xhat, inv_std](Node<T>& self) {
                     auto& X = *self.inputs[0];
                     auto& Gn = *self.inputs[1];
                     auto& Bs = *self.inputs[2];
                     std::vector<T> dxhat(d);
                     for (std::size_t r = 0; r < m; ++r) {
                       const T* gy = self.grad.data() + r * d;
                       const T* h = xhat->data() + r * d;
                       if (Gn.requires_grad) {
                         for (std::size_t c = 0; c < d; ++c) Gn.grad[c] += gy[c] * h[c];
                       }
                       if (Bs.requires_grad) {
                         for (std::size_t c = 0; c < d; ++c) Bs.grad[c] += gy[c];
                       }
                       if (!X.requires_grad) continue;
                       T s1 = 0, s2 = 0;
                       for (std::size_t c = 0; c < d; ++c) {
                         dxhat[c] = gy[c] * Gn.value[c];
                         s1 += dxhat[c];
                         s2 += dxhat[c] * h[c];
                       }
                       const T k = (*inv_std)[r] / static_cast<T>(d);
                       for (std::size_t c = 0; c < d; ++c) {
                         X.grad[r * d + c] +=
                             k * (static_cast<T>(d) * dxhat[c] - s1 - h[c] * s2);
                       }
                     }
                   });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const auto& src = x.node()->value;
  std::vector<T> v(src.size());
  // dGELU/dx is computed alongside the forward value.
  auto slope = std::make_shared<std::vector<T>>(src.size());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Eigen::Map<const Arr> z(src.data(), static_cast<Eigen::Index>(src.size()));
  Eigen::Map<Arr> out(v.data(), z.size());
  Eigen::Map<Arr> dz(slope->data(), z.size());
  // Vectorized erf/exp; the element-wise std:: versions dominate the compression cost.
  const Arr cdf = T(0.5) * (T(1) + (z * inv_sqrt2).erf());
  out = z * cdf;
  dz = cdf + z * inv_sqrt2pi * (T(-0.5) * z.square()).exp();
  return record<T>(x.shape(), std::move(v), "gelu", {&x}, [slope](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*slope)[i];
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> v(x.node()->value);
  for (auto& e : v) e = std::tanh(e);
  return record<T>(x.shape(), std::move(v), "tanh", {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

namespace {
template <typename T>
T stable_sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}
}  // namespace

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> v(x.node()->value);
  for (auto& e : v) e = stable_sigmoid(e);
  return record<T>(x.shape(), std::move(v), "sigmoid", {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  std::vector<T> v(x.node()->value);
  for (auto& e : v) e = std::max(e, T(0)) + std::log1p(std::exp(-std::abs(e)));
  return record<T>(x.shape(), std::move(v), "softplus", {&x}, [](Node<T>& self) {
    auto& X = *self.inputs[0];
    for (std::size_t i = 0; i < X.grad.size(); ++i) {
      X.grad[i] += self.grad[i] * stable_sigmoid(X.value[i]);
    }
  });
}

template <typename T>
Tensor<T> pointwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.cols() != w.rows()) {
    throw ShapeError("pointwise_conv1d: input channels " + std::to_string(x.cols()) +
                     " do not match weight " + to_string(w.shape()));
  }
  if (b.shape() != Shape{1, w.cols()}) {
    throw ShapeError("pointwise_conv1d: bias " + to_string(b.shape()) + " does not match weight " +
                     to_string(w.shape()));
  }
  Shape out{x.rows(), w.cols()};
  std::vector<T> v(out.numel());
  auto Y = as_mat(v, out);
  Y.noalias() = as_mat(x.node()->value, x.shape()) * as_mat(w.node()->value, w.shape());
  Y.rowwise() += as_mat(b.node()->value, b.shape()).row(0);
  return record<T>(out, std::move(v), "pointwise_conv1d", {&x, &w, &b}, [](Node<T>& self) {
    auto& X = *self.inputs[0];
    auto& W = *self.inputs[1];
    auto& B = *self.inputs[2];
    auto G = as_mat(std::as_const(self.grad), self.shape);
    if (X.requires_grad) {
      as_mat(X.grad, X.shape).noalias() += G * as_mat(std::as_const(W.value), W.shape).transpose();
    }
    if (W.requires_grad) {
      as_mat(W.grad, W.shape).noalias() += as_mat(std::as_const(X.value), X.shape).transpose() * G;
    }
    if (B.requires_grad) as_mat(B.grad, B.shape).row(0) += G.colwise().sum();
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                    std::size_t heads, std::vector<T>* weights) {
  const std::size_t d = q.cols();
  if (batch == 0 || heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " does not split into " +
                     std::to_string(heads) + " heads");
  }
  if (k.cols() != d || v.cols() != d || !(k.shape() == v.shape())) {
    throw ShapeError("attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) +
                     ", v " + to_string(v.shape()));
  }
  if (q.rows() % batch != 0 || k.rows() % batch != 0) {
    throw ShapeError("attention: rows are not a multiple of the batch size " + std::to_string(batch));
  }
  const auto nq = static_cast<Eigen::Index>(q.rows() / batch);
  const auto nk = static_cast<Eigen::Index>(k.rows() / batch);
  const auto hd = static_cast<Eigen::Index>(d / heads);
  const auto ld = static_cast<Eigen::Index>(d);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  using Block = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
  using ConstBlock = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> stride(ld);
  // Offset of head h of sample b in a (B·rows)×d buffer.
  auto at = [ld, hd](std::size_t b, std::size_t h, Eigen::Index rows) {
    return static_cast<std::size_t>(static_cast<Eigen::Index>(b) * rows * ld +
                                    static_cast<Eigen::Index>(h) * hd);
  };

  auto probs = std::make_shared<std::vector<T>>(batch * heads * static_cast<std::size_t>(nq * nk));
  std::vector<T> out(q.numel());
  const auto& qv = q.node()->value;
  const auto& kv = k.node()->value;
  const auto& vv = v.node()->value;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlock Q(qv.data() + at(b, h, nq), nq, hd, stride);
      ConstBlock K(kv.data() + at(b, h, nk), nk, hd, stride);
      ConstBlock V(vv.data() + at(b, h, nk), nk, hd, stride);
      MapMat<T> P(probs->data() + (b * heads + h) * static_cast<std::size_t>(nq * nk), nq, nk);
      P.noalias() = (Q * K.transpose()) * scale;
      for (Eigen::Index r = 0; r < nq; ++r) {
        auto row = P.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      Block O(out.data() + at(b, h, nq), nq, hd, stride);
      O.noalias() = P * V;
    }
  }
  if (weights) *weights = *probs;

  return record<T>(q.shape(), std::move(out), "attention", {&q, &k, &v},
                   [=](Node<T>& self) {
    auto& Qn = *self.inputs[0];
    auto& Kn = *self.inputs[1];
    auto& Vn = *self.inputs[2];
    Mat<T> dP(nq, nk);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        ConstBlock dO(self.grad.data() + at(b, h, nq), nq, hd, stride);
        ConstBlock Q(Qn.value.data() + at(b, h, nq), nq, hd, stride);
        ConstBlock K(Kn.value.data() + at(b, h, nk), nk, hd, stride);
        ConstBlock V(Vn.value.data() + at(b, h, nk), nk, hd, stride);
        ConstMapMat<T> P(probs->data() + (b * heads + h) * static_cast<std::size_t>(nq * nk), nq, nk);
        if (Vn.requires_grad) {
          Block dV(Vn.grad.data() + at(b, h, nk), nk, hd, stride);
          dV.noalias() += P.transpose() * dO;
        }
        if (!Qn.requires_grad && !Kn.requires_grad) continue;
        dP.noalias() = dO * V.transpose();
        // Softmax backward, then the 1/sqrt(hd) scale.
        for (Eigen::Index r = 0; r < nq; ++r) {
          const T dot = (dP.row(r).array() * P.row(r).array()).sum();
          dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot) * scale).matrix();
        }
        if (Qn.requires_grad) {
          Block dQ(Qn.grad.data() + at(b, h, nq), nq, hd, stride);
          dQ.noalias() += dP * K;
        }
        if (Kn.requires_grad) {
          Block dK(Kn.grad.data() + at(b, h, nk), nk, hd, stride);
          dK.noalias() += dP.transpose() * Q;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> projected_attention(const Tensor<T>& q, const Tensor<T>& fk, const Tensor<T>& wk,
                              const Tensor<T>& fv, const Tensor<T>& wv, const Tensor<T>& bv,
                              std::size_t batch, std::size_t heads, std::vector<T>* weights) {
  const std::size_t d = q.cols(), c = fk.cols();
  if (batch == 0 || heads == 0 || d % heads != 0) {
    throw ShapeError("projected_attention: width " + std::to_string(d) + " does not split into " +
                     std::to_string(heads) + " heads");
  }
  if (!(fk.shape() == fv.shape()) || wk.shape() != Shape{c, d} || wv.shape() != Shape{c, d} ||
      bv.shape() != Shape{1, d}) {
    throw ShapeError("projected_attention: q " + to_string(q.shape()) + ", fk " +
                     to_string(fk.shape()) + ", wk " + to_string(wk.shape()) + ", fv " +
                     to_string(fv.shape()) + ", wv " + to_string(wv.shape()) + ", bv " +
                     to_string(bv.shape()));
  }
  if (q.rows() % batch != 0 || fk.rows() % batch != 0) {
    throw ShapeError("projected_attention: rows are not a multiple of the batch size " +
                     std::to_string(batch));
  }
  using Idx = Eigen::Index;
  const auto nq = static_cast<Idx>(q.rows() / batch);
  const auto nk = static_cast<Idx>(fk.rows() / batch);
  const auto hd = static_cast<Idx>(d / heads);
  const auto H = static_cast<Idx>(heads);
  const auto ld = static_cast<Idx>(d);
  const auto C = static_cast<Idx>(c);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  using Block = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
  using ConstBlock = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> stride(ld);
  // Head h of sample b in a (B·nq)×d buffer, and head h's columns of a c×d weight.
  auto q_at = [=](std::size_t b, Idx h) { return static_cast<Idx>(b) * nq * ld + h * hd; };
  auto f_at = [=](std::size_t b) { return static_cast<Idx>(b) * nk * C; };

  // Per sample, heads are stacked along rows: A and Z are (H·nq)×c, P is (H·nq)×nk.
  const Idx hq = H * nq;
  auto saved_a = std::make_shared<std::vector<T>>(batch * static_cast<std::size_t>(hq * C));
  auto saved_z = std::make_shared<std::vector<T>>(batch * static_cast<std::size_t>(hq * C));
  auto probs = std::make_shared<std::vector<T>>(batch * static_cast<std::size_t>(hq * nk));
  std::vector<T> out(q.numel());
  const auto& qv = q.node()->value;
  const auto& wkv = wk.node()->value;
  const auto& wvv = wv.node()->value;
  const auto& bvv = bv.node()->value;
  for (std::size_t b = 0; b < batch; ++b) {
    ConstMapMat<T> Fk(fk.node()->value.data() + f_at(b), nk, C);
    ConstMapMat<T> Fv(fv.node()->value.data() + f_at(b), nk, C);
    MapMat<T> A(saved_a->data() + b * static_cast<std::size_t>(hq * C), hq, C);
    MapMat<T> Z(saved_z->data() + b * static_cast<std::size_t>(hq * C), hq, C);
    MapMat<T> P(probs->data() + b * static_cast<std::size_t>(hq * nk), hq, nk);
    for (Idx h = 0; h < H; ++h) {
      ConstBlock Q(qv.data() + q_at(b, h), nq, hd, stride);
      ConstBlock Wk(wkv.data() + h * hd, C, hd, stride);
      A.middleRows(h * nq, nq).noalias() = Q * Wk.transpose();
    }
    P.noalias() = (A * Fk.transpose()) * scale;
    for (Idx r = 0; r < hq; ++r) {
      auto row = P.row(r).array();
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
    }
    Z.noalias() = P * Fv;
    for (Idx h = 0; h < H; ++h) {
      ConstBlock Wv(wvv.data() + h * hd, C, hd, stride);
      Block O(out.data() + q_at(b, h), nq, hd, stride);
      O.noalias() = Z.middleRows(h * nq, nq) * Wv;
      O.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bvv.data() + h * hd, hd);
    }
  }
  if (weights) *weights = *probs;

  return record<T>(q.shape(), std::move(out), "projected_attention", {&q, &fk, &wk, &fv, &wv, &bv},
                   [=](Node<T>& self) {
    auto& Qn = *self.inputs[0];
    auto& Fkn = *self.inputs[1];
    auto& Wkn = *self.inputs[2];
    auto& Fvn = *self.inputs[3];
    auto& Wvn = *self.inputs[4];
    auto& Bvn = *self.inputs[5];
    Mat<T> dZ(hq, C), dP(hq, nk), dA(hq, C);
    for (std::size_t b = 0; b < batch; ++b) {
      ConstMapMat<T> Fk(Fkn.value.data() + f_at(b), nk, C);
      ConstMapMat<T> Fv(Fvn.value.data() + f_at(b), nk, C);
      ConstMapMat<T> A(saved_a->data() + b * static_cast<std::size_t>(hq * C), hq, C);
      ConstMapMat<T> Z(saved_z->data() + b * static_cast<std::size_t>(hq * C), hq, C);
      ConstMapMat<T> P(probs->data() + b * static_cast<std::size_t>(hq * nk), hq, nk);
      for (Idx h = 0; h < H; ++h) {
        ConstBlock dO(self.grad.data() + q_at(b, h), nq, hd, stride);
        ConstBlock Wv(Wvn.value.data() + h * hd, C, hd, stride);
        if (Bvn.requires_grad) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(Bvn.grad.data() + h * hd, hd) +=
              dO.colwise().sum();
        }
        if (Wvn.requires_grad) {
          Block dWv(Wvn.grad.data() + h * hd, C, hd, stride);
          dWv.noalias() += Z.middleRows(h * nq, nq).transpose() * dO;
        }
        dZ.middleRows(h * nq, nq).noalias() = dO * Wv.transpose();
      }
      if (Fvn.requires_grad) {
        MapMat<T>(Fvn.grad.data() + f_at(b), nk, C).noalias() += P.transpose() * dZ;
      }
      if (!Qn.requires_grad && !Fkn.requires_grad && !Wkn.requires_grad) continue;
      dP.noalias() = dZ * Fv.transpose();
      // Softmax backward, then the 1/sqrt(hd) scale.
      for (Idx r = 0; r < hq; ++r) {
        const T dot = (dP.row(r).array() * P.row(r).array()).sum();
        dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot) * scale).matrix();
      }
      if (Fkn.requires_grad) {
        MapMat<T>(Fkn.grad.data() + f_at(b), nk, C).noalias() += dP.transpose() * A;
      }
      if (!Qn.requires_grad && !Wkn.requires_grad) continue;
      dA.noalias() = dP * Fk;
      for (Idx h = 0; h < H; ++h) {
        ConstBlock Wk(Wkn.value.data() + h * hd, C, hd, stride);
        const auto dAh = dA.middleRows(h * nq, nq);
        if (Qn.requires_grad) {
          Block dQ(Qn.grad.data() + q_at(b, h), nq, hd, stride);
          dQ.noalias() += dAh * Wk;
        }
        if (Wkn.requires_grad) {
          ConstBlock Q(Qn.value.data() + q_at(b, h), nq, hd, stride);
          Block dWk(Wkn.grad.data() + h * hd, C, hd, stride);
          dWk.noalias() += dAh.transpose() * Q;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw ShapeError("concat_rows: column mismatch " + to_string(parts.front().shape()) +
                       " vs " + to_string(p.shape()));
    }
    rows += p.rows();
  }
  std::vector<T> v;
  v.reserve(rows * n);
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  return record_many<T>({rows, n}, std::move(v), "concat_rows", parts, [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t m = in->value.size();
      if (in->requires_grad) {
        for (std::size_t i = 0; i < m; ++i) in->grad[i] += self.grad[offset + i];
      }
      offset += m;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row mismatch " + to_string(parts.front().shape()) + " vs " +
                       to_string(p.shape()));
    }
    cols += p.cols();
  }
  std::vector<T> v(m * cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const auto& src = p.node()->value;
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(src.data() + r * w, w, v.data() + r * cols + c0);
    }
    c0 += w;
  }
  return record_many<T>({m, cols}, std::move(v), "concat_cols", parts, [m, cols](Node<T>& self) {
    std::size_t c0 = 0;
    for (auto& in : self.inputs) {
      const std::size_t w = in->shape.cols;
      if (in->requires_grad) {
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < w; ++c) in->grad[r * w + c] += self.grad[r * cols + c0 + c];
        }
      }
      c0 += w;
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t row0, std::size_t nrows, std::size_t col0,
                std::size_t ncols) {
  if (nrows == 0 || ncols == 0 || row0 + nrows > x.rows() || col0 + ncols > x.cols()) {
    throw ShapeError("slice: rows [" + std::to_string(row0) + "," + std::to_string(row0 + nrows) +
                     ") cols [" + std::to_string(col0) + "," + std::to_string(col0 + ncols) +
                     ") out of range for " + to_string(x.shape()));
  }
  const std::size_t n = x.cols();
  const auto& src = x.node()->value;
  std::vector<T> v(nrows * ncols);
  for (std::size_t r = 0; r < nrows; ++r) {
    std::copy_n(src.data() + (row0 + r) * n + col0, ncols, v.data() + r * ncols);
  }
  return record<T>({nrows, ncols}, std::move(v), "slice", {&x},
                   [row0, col0, n](Node<T>& self) {
                     auto& g = self.inputs[0]->grad;
                     const std::size_t nr = self.shape.rows, nc = self.shape.cols;
                     for (std::size_t r = 0; r < nr; ++r) {
                       T* dst = g.data() + (row0 + r) * n + col0;
                       const T* gy = self.grad.data() + r * nc;
                       for (std::size_t c = 0; c < nc; ++c) dst[c] += gy[c];
                     }
                   });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t n = x.cols();
  const auto& src = x.node()->value;
  std::vector<T> v(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                       to_string(x.shape()));
    }
    std::copy_n(src.data() + rows[i] * n, n, v.data() + i * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record<T>({rows.size(), n}, std::move(v), "gather_rows", {&x},
                   [idx = std::move(idx), n](Node<T>& self) {
                     auto& g = self.inputs[0]->grad;
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                       for (std::size_t c = 0; c < n; ++c) g[idx[i] * n + c] += self.grad[i * n + c];
                     }
                   });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return record<T>(shape, x.node()->value, "reshape", {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T e : x.values()) total += e;
  return record<T>({1, 1}, {total}, "sum", {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (auto& e : g) e += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  const auto& src = x.node()->value;
  std::vector<T> v(m, T(0));
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) v[r] += src[r * n + c];
  }
  return record<T>({m, 1}, std::move(v), "row_sum", {&x}, [n](Node<T>& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / n];
  });
}

template <typename T>
Tensor<T> grouped_matmul(const Tensor<T>& a, const Tensor<T>& h) {
  const std::size_t n = a.rows();
  if (a.cols() != n || h.rows() % n != 0) {
    throw ShapeError("grouped_matmul: " + to_string(a.shape()) + " cannot act on row groups of " +
                     to_string(h.shape()));
  }
  const std::size_t groups = h.rows() / n, d = h.cols();
  std::vector<T> v(h.numel());
  auto A = as_mat(a.node()->value, a.shape());
  for (std::size_t g = 0; g < groups; ++g) {
    MapMat<T> out(v.data() + g * n * d, n, d);
    ConstMapMat<T> in(h.node()->value.data() + g * n * d, n, d);
    out.noalias() = A * in;
  }
  return record<T>(h.shape(), std::move(v), "grouped_matmul", {&a, &h},
                   [groups, n, d](Node<T>& self) {
                     auto& Anode = *self.inputs[0];
                     auto& H = *self.inputs[1];
                     auto A = as_mat(std::as_const(Anode.value), Anode.shape);
                     for (std::size_t g = 0; g < groups; ++g) {
                       ConstMapMat<T> G(self.grad.data() + g * n * d, n, d);
                       if (Anode.requires_grad) {
                         ConstMapMat<T> Hg(H.value.data() + g * n * d, n, d);
                         as_mat(Anode.grad, Anode.shape).noalias() += G * Hg.transpose();
                       }
                       if (H.requires_grad) {
                         MapMat<T> dH(H.grad.data() + g * n * d, n, d);
                         dH.noalias() += A.transpose() * G;
                       }
                     }
                   });
}

template <typename T>
Tensor<T> ccc(const Tensor<T>& x, const Tensor<T>& y, T eps) {
  if (x.numel() != y.numel()) {
    throw ShapeError("ccc: size mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  const std::size_t n = x.numel();
  const auto& xv = x.node()->value;
  const auto& yv = y.node()->value;
  T mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xv[i];
    my += yv[i];
  }
  mx /= static_cast<T>(n);
  my /= static_cast<T>(n);
  T sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xv[i] - mx) * (xv[i] - mx);
    syy += (yv[i] - my) * (yv[i] - my);
    sxy += (xv[i] - mx) * (yv[i] - my);
  }
  sxx /= static_cast<T>(n);
  syy /= static_cast<T>(n);
  sxy /= static_cast<T>(n);
  const T num = T(2) * sxy;
  const T den = sxx + syy + (mx - my) * (mx - my) + eps;
  return record<T>({1, 1}, {num / den}, "ccc", {&x, &y}, [n, mx, my, num, den](Node<T>& self) {
    auto& X = *self.inputs[0];
    auto& Y = *self.inputs[1];
    const T g = self.grad[0];
    const T inv_n = T(1) / static_cast<T>(n);
    const T gap = mx - my;
    const T k = g / (den * den);
    for (std::size_t i = 0; i < n; ++i) {
      const T dx = X.value[i] - mx;
      const T dy = Y.value[i] - my;
      if (X.requires_grad) {
        const T dnum = T(2) * dy * inv_n;
        const T dden = T(2) * (dx + gap) * inv_n;
        X.grad[i] += k * (dnum * den - num * dden);
      }
      if (Y.requires_grad) {
        const T dnum = T(2) * dx * inv_n;
        const T dden = T(2) * (dy - gap) * inv_n;
        Y.grad[i] += k * (dnum * den - num * dden);
      }
    }
  });
}

#define AFFECT_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> transpose(const Tensor<T>&);                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> tile_rows(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                              \
  template Tensor<T> log_softmax_rows(const Tensor<T>&);                                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> tanh(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> softplus(const Tensor<T>&);                                                  \
  template Tensor<T> pointwise_conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                     \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                     \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> row_sum(const Tensor<T>&);                                                   \
  template Tensor<T> grouped_matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                               std::size_t, std::vector<T>*);                                     \
  template Tensor<T> projected_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                         const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                         std::size_t, std::size_t, std::vector<T>*);               \
  template Tensor<T> ccc(const Tensor<T>&, const Tensor<T>&, T);

AFFECT_INSTANTIATE_OPS(float)
AFFECT_INSTANTIATE_OPS(double)

#undef AFFECT_INSTANTIATE_OPS

}  // namespace affect::ops
