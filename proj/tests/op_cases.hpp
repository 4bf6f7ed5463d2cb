#pragma once

#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace affect::testing {

/// One randomized instance of a differentiable op, reduced to a scalar.
struct OpCase {
  std::vector<TensorD> inputs;
  std::function<TensorD(const std::vector<TensorD>&)> f;
};

struct OpSpec {
  std::string name;
  std::function<OpCase(std::mt19937_64&)> make;
};

inline std::size_t dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Every differentiable op exported by affect::ops.
inline std::vector<OpSpec> registered_ops() {
  using V = std::vector<TensorD>;
  std::vector<OpSpec> specs;
  auto unary = [&](std::string name, std::function<TensorD(const TensorD&)> op, double lo = -2.0,
                   double hi = 2.0) {
    specs.push_back({name, [op, lo, hi](std::mt19937_64& rng) {
                       const Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
                       const auto seed = rng();
                       return OpCase{{random_tensor(rng, s, lo, hi)},
                                     [op, seed](const V& in) { return probe(op(in[0]), seed); }};
                     }});
  };

  specs.push_back({"matmul", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, k}), random_tensor(rng, {k, n})},
                                   [seed](const V& in) { return probe(ops::matmul(in[0], in[1]), seed); }};
                   }});
  unary("transpose", [](const TensorD& x) { return ops::transpose(x); });
  for (const char* name : {"add", "sub", "mul"}) {
    specs.push_back({name, [name = std::string(name)](std::mt19937_64& rng) {
                       const Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
                       const auto seed = rng();
                       return OpCase{{random_tensor(rng, s), random_tensor(rng, s)},
                                     [name, seed](const V& in) {
                                       if (name == "add") return probe(ops::add(in[0], in[1]), seed);
                                       if (name == "sub") return probe(ops::sub(in[0], in[1]), seed);
                                       return probe(ops::mul(in[0], in[1]), seed);
                                     }};
                     }});
  }
  unary("scale", [](const TensorD& x) { return ops::scale(x, -1.7); });
  specs.push_back({"add_row", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 1, 4), n = dim(rng, 1, 5);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, n}), random_tensor(rng, {1, n})},
                                   [seed](const V& in) { return probe(ops::add_row(in[0], in[1]), seed); }};
                   }});
  specs.push_back({"tile_rows", [](std::mt19937_64& rng) {
                     const Shape s{dim(rng, 1, 3), dim(rng, 1, 4)};
                     const auto reps = dim(rng, 1, 3);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, s)}, [seed, reps](const V& in) {
                                     return probe(ops::tile_rows(in[0], reps), seed);
                                   }};
                   }});
  unary("softmax_rows", [](const TensorD& x) { return ops::softmax_rows(x); }, -3.0, 3.0);
  unary("log_softmax_rows", [](const TensorD& x) { return ops::log_softmax_rows(x); }, -3.0, 3.0);
  specs.push_back({"layer_norm", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 1, 4), n = dim(rng, 2, 6);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, n}), random_tensor(rng, {1, n}, 0.5, 1.5),
                                    random_tensor(rng, {1, n})},
                                   [seed](const V& in) {
                                     return probe(ops::layer_norm(in[0], in[1], in[2], 1e-5), seed);
                                   }};
                   }});
  unary("gelu", [](const TensorD& x) { return ops::gelu(x); }, -3.0, 3.0);
  unary("tanh", [](const TensorD& x) { return ops::tanh(x); });
  unary("sigmoid", [](const TensorD& x) { return ops::sigmoid(x); }, -4.0, 4.0);
  unary("softplus", [](const TensorD& x) { return ops::softplus(x); }, -4.0, 4.0);
  specs.push_back({"pointwise_conv1d", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 1, 5), cin = dim(rng, 1, 5), cout = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, cin}), random_tensor(rng, {cin, cout}),
                                    random_tensor(rng, {1, cout})},
                                   [seed](const V& in) {
                                     return probe(ops::pointwise_conv1d(in[0], in[1], in[2]), seed);
                                   }};
                   }});
  specs.push_back({"concat_rows", [](std::mt19937_64& rng) {
                     const auto n = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {dim(rng, 1, 3), n}),
                                    random_tensor(rng, {dim(rng, 1, 3), n})},
                                   [seed](const V& in) { return probe(ops::concat_rows<double>(in), seed); }};
                   }});
  specs.push_back({"concat_cols", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, dim(rng, 1, 3)}),
                                    random_tensor(rng, {m, dim(rng, 1, 3)})},
                                   [seed](const V& in) { return probe(ops::concat_cols<double>(in), seed); }};
                   }});
  specs.push_back({"slice", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 2, 5), n = dim(rng, 2, 5);
                     const auto r0 = dim(rng, 0, m - 1), c0 = dim(rng, 0, n - 1);
                     const auto nr = dim(rng, 1, m - r0), nc = dim(rng, 1, n - c0);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, n})}, [=](const V& in) {
                                     return probe(ops::slice(in[0], r0, nr, c0, nc), seed);
                                   }};
                   }});
  specs.push_back({"gather_rows", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 1, 5), n = dim(rng, 1, 4);
                     std::vector<std::size_t> rows(dim(rng, 1, 6));
                     for (auto& r : rows) r = dim(rng, 0, m - 1);  // repeats allowed
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, n})}, [rows, seed](const V& in) {
                                     return probe(ops::gather_rows(in[0], rows), seed);
                                   }};
                   }});
  specs.push_back({"reshape", [](std::mt19937_64& rng) {
                     const auto m = dim(rng, 1, 4), n = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {m, n})}, [=](const V& in) {
                                     return probe(ops::reshape(in[0], {n, m}), seed);
                                   }};
                   }});
  unary("sum", [](const TensorD& x) { return ops::sum(x); });
  unary("mean", [](const TensorD& x) { return ops::mean(x); });
  unary("row_sum", [](const TensorD& x) { return ops::row_sum(x); });
  specs.push_back({"grouped_matmul", [](std::mt19937_64& rng) {
                     const auto n = dim(rng, 1, 4), g = dim(rng, 1, 3), d = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {n, n}), random_tensor(rng, {g * n, d})},
                                   [seed](const V& in) {
                                     return probe(ops::grouped_matmul(in[0], in[1]), seed);
                                   }};
                   }});
  specs.push_back({"ccc", [](std::mt19937_64& rng) {
                     const auto n = dim(rng, 2, 8);
                     return OpCase{{random_tensor(rng, {n, 1}), random_tensor(rng, {n, 1})},
                                   [](const V& in) { return ops::ccc(in[0], in[1], 1e-8); }};
                   }});
  specs.push_back({"attention", [](std::mt19937_64& rng) {
                     const auto batch = dim(rng, 1, 2), heads = dim(rng, 1, 2);
                     const auto d = heads * dim(rng, 1, 3);
                     const auto nq = dim(rng, 1, 3), nk = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {batch * nq, d}), random_tensor(rng, {batch * nk, d}),
                                    random_tensor(rng, {batch * nk, d})},
                                   [=](const V& in) {
                                     return probe(ops::attention(in[0], in[1], in[2], batch, heads), seed);
                                   }};
                   }});
  specs.push_back({"projected_attention", [](std::mt19937_64& rng) {
                     const auto batch = dim(rng, 1, 2), heads = dim(rng, 1, 2);
                     const auto d = heads * dim(rng, 1, 3), c = dim(rng, 1, 4);
                     const auto nq = dim(rng, 1, 3), nk = dim(rng, 1, 4);
                     const auto seed = rng();
                     return OpCase{{random_tensor(rng, {batch * nq, d}), random_tensor(rng, {batch * nk, c}),
                                    random_tensor(rng, {c, d}), random_tensor(rng, {batch * nk, c}),
                                    random_tensor(rng, {c, d}), random_tensor(rng, {1, d})},
                                   [=](const V& in) {
                                     return probe(ops::projected_attention(in[0], in[1], in[2], in[3], in[4],
                                                                           in[5], batch, heads),
                                                  seed);
                                   }};
                   }});
  return specs;
}

}  // namespace affect::testing
