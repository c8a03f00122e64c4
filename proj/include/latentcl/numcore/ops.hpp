#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "latentcl/numcore/tensor.hpp"

// Differentiable operations. Every op records a backward closure when any
// input requires gradients; all arithmetic is in double precision.

namespace latentcl {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline std::vector<double>& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
inline bool pwants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::pwants(self, p)) continue;
      auto& g = detail::pgrad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (detail::pwants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::pwants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (detail::pwants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (detail::pwants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return make_op_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return make_op_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  return make_op_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(a[i] > 0.0)) throw DegenerateInputError("log of non-positive value");
    out[i] = std::log(a[i]);
  }
  return make_op_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / av[i];
  });
}

// Gradient is passed through where lo < x < hi and zeroed outside.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i], lo, hi);
  return make_op_result(a.shape(), std::move(out), {a}, [lo, hi](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > lo && av[i] < hi) g[i] += self.grad[i];
    }
  });
}

// Ties route the gradient to the first operand.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "minimum");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a[i], b[i]);
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const std::size_t p = av[i] <= bv[i] ? 0 : 1;
      if (detail::pwants(self, p)) detail::pgrad(self, p)[i] += self.grad[i];
    }
  });
}

inline Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
  }
  return make_op_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      const double u = c * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
    }
  });
}

// ----------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_op_result({}, {s}, {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (double& x : g) x += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DegenerateInputError("mean of empty tensor");
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_op_result({}, {s / n}, {a}, [n](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (double& x : g) x += self.grad[0] / n;
  });
}

// Column-wise mean of a [P, d] matrix, giving [d].
inline Tensor mean_rows(const Tensor& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (rows == 0 || a.numel() == 0) throw DegenerateInputError("mean over zero rows");
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += a.at(r, c);
  for (double& x : out) x /= static_cast<double>(rows);
  return make_op_result({cols}, std::move(out), {a}, [rows, cols](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c] * inv;
  });
}

// ------------------------------------------------------------------- shaping

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (detail::numel_of(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_op_result(std::move(shape), a.values(), {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// Stacks rank-1 rows and rank-2 blocks with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of empty list");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op_result({rows, cols}, std::move(out), parts, [](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t n = self.parents[p]->data.size();
      if (detail::pwants(self, p)) {
        auto& g = detail::pgrad(self, p);
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

// Row r of a matrix as a rank-1 vector.
inline Tensor row(const Tensor& a, std::size_t r) {
  if (r >= a.rows()) throw DimensionError("row index " + std::to_string(r) + " out of " + shape_str(a.shape()));
  const std::size_t cols = a.cols();
  std::vector<double> out(a.data().begin() + r * cols, a.data().begin() + (r + 1) * cols);
  return make_op_result({cols}, std::move(out), {a}, [r, cols](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c];
  });
}

// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows out of range for " + shape_str(a.shape()));
  const std::size_t cols = a.cols();
  std::vector<double> out(a.data().begin() + begin * cols, a.data().begin() + end * cols);
  return make_op_result({end - begin, cols}, std::move(out), {a}, [begin, cols](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
  });
}

// Embedding lookup: out[i] = table[ids[i]].
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  const std::size_t cols = table.cols(), vocab = table.rows();
  std::vector<double> out;
  out.reserve(ids.size() * cols);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DimensionError("gather index " + std::to_string(id) + " outside table " + shape_str(table.shape()));
    }
    out.insert(out.end(), table.data().begin() + id * cols, table.data().begin() + (id + 1) * cols);
  }
  return make_op_result({ids.size(), cols}, std::move(out), {table}, [ids, cols](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) g[ids[i] * cols + c] += self.grad[i * cols + c];
  });
}

// x [T, n] + b [n] added to every row.
inline Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (b.numel() != cols) {
    throw DimensionError("add_rowwise: " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(x.values());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  return make_op_result(x.shape(), std::move(out), {x, b}, [rows, cols](detail::Node& self) {
    if (detail::pwants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::pwants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
    }
  });
}

// ------------------------------------------------------------------- algebra

/// Matrix product. Supports [m,k]x[k,n] -> [m,n], [m,k]x[k] -> [m] and [k]x[k,n] -> [n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  std::size_t m, k, n;
  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    out_shape = {m, n};
  } else if (a.rank() == 2 && b.rank() == 1) {
    m = a.shape()[0], k = a.shape()[1], n = 1;
    if (b.shape()[0] != k) throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    out_shape = {m};
  } else if (a.rank() == 1 && b.rank() == 2) {
    m = 1, k = a.shape()[0], n = b.shape()[1];
    if (b.shape()[0] != k) throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    out_shape = {n};
  } else {
    throw DimensionError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  // b viewed as [k, n] row-major in every case (a rank-1 b is a column).
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_op_result(std::move(out_shape), std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    const auto& go = self.grad;
    if (detail::pwants(self, 0)) {
      auto& ga = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* brow = bv.data() + p * n;
          const double* grow = go.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + p] += s;
        }
    }
    if (detail::pwants(self, 1)) {
      auto& gb = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = go.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "dot");
  return sum(mul(a, b));
}

// ------------------------------------------------------------------- cosines

/// a.b / (|a||b|) for two vectors of equal length.
inline Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw DimensionError("cosine_sim: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const double na = detail::norm2(a.data()), nb = detail::norm2(b.data());
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_sim: zero-norm input");
  double ab = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) ab += a[i] * b[i];
  const double c = ab / (na * nb);
  return make_op_result({}, {c}, {a, b}, [na, nb, c](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    const double go = self.grad[0];
    if (detail::pwants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * (bv[i] / (na * nb) - c * av[i] / (na * na));
    }
    if (detail::pwants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
    }
  });
}

namespace detail {

inline std::vector<double> row_norms(const Tensor& a) {
  std::vector<double> out(a.rows());
  const std::size_t cols = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    out[r] = norm2(a.data().subspan(r * cols, cols));
    if (out[r] == 0.0) throw DegenerateInputError("cosine: zero-norm row " + std::to_string(r));
  }
  return out;
}

}  // namespace detail

/// All pairwise row cosines: out[i][j] = cos(a_i, b_j), a [m,d], b [n,d].
inline Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw DimensionError("cosine_matrix: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  auto na = detail::row_norms(a), nb = detail::row_norms(b);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += a.at(i, c) * b.at(j, c);
      out[i * n + j] = s / (na[i] * nb[j]);
    }
  return make_op_result({m, n}, std::move(out), {a, b},
                        [m, n, d, na = std::move(na), nb = std::move(nb)](detail::Node& self) {
                          const auto& av = self.parents[0]->data;
                          const auto& bv = self.parents[1]->data;
                          const bool wa = detail::pwants(self, 0), wb = detail::pwants(self, 1);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) {
                              const double go = self.grad[i * n + j];
                              if (go == 0.0) continue;
                              const double c = self.data[i * n + j];
                              const double inv = 1.0 / (na[i] * nb[j]);
                              if (wa) {
                                auto& g = detail::pgrad(self, 0);
                                for (std::size_t k = 0; k < d; ++k)
                                  g[i * d + k] += go * (bv[j * d + k] * inv - c * av[i * d + k] / (na[i] * na[i]));
                              }
                              if (wb) {
                                auto& g = detail::pgrad(self, 1);
                                for (std::size_t k = 0; k < d; ++k)
                                  g[j * d + k] += go * (av[i * d + k] * inv - c * bv[j * d + k] / (nb[j] * nb[j]));
                              }
                            }
                        });
}

/// Row-aligned cosines: out[i] = cos(a_i, b_i) for equally shaped a, b.
inline Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("cosine_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), d = a.cols();
  auto na = detail::row_norms(a), nb = detail::row_norms(b);
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += a.at(i, c) * b.at(i, c);
    out[i] = s / (na[i] * nb[i]);
  }
  return make_op_result({m}, std::move(out), {a, b},
                        [m, d, na = std::move(na), nb = std::move(nb)](detail::Node& self) {
                          const auto& av = self.parents[0]->data;
                          const auto& bv = self.parents[1]->data;
                          for (std::size_t i = 0; i < m; ++i) {
                            const double go = self.grad[i], c = self.data[i];
                            const double inv = 1.0 / (na[i] * nb[i]);
                            if (detail::pwants(self, 0)) {
                              auto& g = detail::pgrad(self, 0);
                              for (std::size_t k = 0; k < d; ++k)
                                g[i * d + k] += go * (bv[i * d + k] * inv - c * av[i * d + k] / (na[i] * na[i]));
                            }
                            if (detail::pwants(self, 1)) {
                              auto& g = detail::pgrad(self, 1);
                              for (std::size_t k = 0; k < d; ++k)
                                g[i * d + k] += go * (av[i * d + k] * inv - c * bv[i * d + k] / (nb[i] * nb[i]));
                            }
                          }
                        });
}

// ----------------------------------------------------------------- softmaxes

namespace detail {

// Max-shifted log-softmax of one row.
inline void log_softmax_row(const double* x, std::size_t n, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < n; ++j) out[j] = x[j] - lse;
}

}  // namespace detail

/// Mean negative log-likelihood over rows with mask[r] set.
/// logits [T, V]; targets and mask have length T.
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<bool>& mask) {
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t || mask.size() != t) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()));
  }
  std::size_t count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("cross_entropy_rows: no supervised positions");
  std::vector<double> logp(t * v);
  double loss = 0.0;
  for (std::size_t r = 0; r < t; ++r) {
    detail::log_softmax_row(logits.values().data() + r * v, v, logp.data() + r * v);
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw DimensionError("cross_entropy_rows: target " + std::to_string(targets[r]) + " outside vocabulary");
    }
    loss -= logp[r * v + targets[r]];
  }
  const double n = static_cast<double>(count);
  return make_op_result({}, {loss / n}, {logits},
                        [t, v, n, targets, mask, logp = std::move(logp)](detail::Node& self) {
                          auto& g = detail::pgrad(self, 0);
                          const double go = self.grad[0] / n;
                          for (std::size_t r = 0; r < t; ++r) {
                            if (!mask[r]) continue;
                            for (std::size_t j = 0; j < v; ++j) g[r * v + j] += go * std::exp(logp[r * v + j]);
                            g[r * v + targets[r]] -= go;
                          }
                        });
}

/// Per-row log-probability of the chosen token: out[r] = log softmax(logits_r)[targets[r]].
inline Tensor log_softmax_pick(const Tensor& logits, const std::vector<int>& targets) {
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t) throw DimensionError("log_softmax_pick: target count mismatch");
  std::vector<double> logp(t * v), out(t);
  for (std::size_t r = 0; r < t; ++r) {
    detail::log_softmax_row(logits.values().data() + r * v, v, logp.data() + r * v);
    out[r] = logp[r * v + targets[r]];
  }
  return make_op_result({t}, std::move(out), {logits},
                        [t, v, targets, logp = std::move(logp)](detail::Node& self) {
                          auto& g = detail::pgrad(self, 0);
                          for (std::size_t r = 0; r < t; ++r) {
                            const double go = self.grad[r];
                            for (std::size_t j = 0; j < v; ++j) g[r * v + j] -= go * std::exp(logp[r * v + j]);
                            g[r * v + targets[r]] += go;
                          }
                        });
}

// --------------------------------------------------------------- model layers

/// Row-wise layer normalization with gain and bias of length d.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) throw DimensionError("layer_norm: parameter size mismatch");
  std::vector<double> out(rows * d), xhat(rows * d), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += x.at(r, c);
    mu /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (x.at(r, c) - mu) * rstd[r];
      out[r * d + c] = xhat[r * d + c] * gain[c] + bias[c];
    }
  }
  return make_op_result(x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
                          const auto& gv = self.parents[1]->data;
                          const auto& go = self.grad;
                          if (detail::pwants(self, 0)) {
                            auto& gx = detail::pgrad(self, 0);
                            for (std::size_t r = 0; r < rows; ++r) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::size_t c = 0; c < d; ++c) {
                                const double dxh = go[r * d + c] * gv[c];
                                m1 += dxh;
                                m2 += dxh * xhat[r * d + c];
                              }
                              m1 /= static_cast<double>(d);
                              m2 /= static_cast<double>(d);
                              for (std::size_t c = 0; c < d; ++c) {
                                const double dxh = go[r * d + c] * gv[c];
                                gx[r * d + c] += rstd[r] * (dxh - m1 - xhat[r * d + c] * m2);
                              }
                            }
                          }
                          if (detail::pwants(self, 1)) {
                            auto& gg = detail::pgrad(self, 1);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < d; ++c) gg[c] += go[r * d + c] * xhat[r * d + c];
                          }
                          if (detail::pwants(self, 2)) {
                            auto& gb = detail::pgrad(self, 2);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < d; ++c) gb[c] += go[r * d + c];
                          }
                        });
}

/// Multi-head causal attention. q [T,d] holds queries for absolute positions
/// offset..offset+T-1; k, v [S,d] hold keys/values for positions 0..S-1.
/// Query i attends to keys j <= offset + i.
inline Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                               std::size_t offset) {
  const std::size_t t = q.rows(), d = q.cols(), s = k.rows();
  if (k.cols() != d || v.cols() != d || v.rows() != s) throw DimensionError("causal_attention: q/k/v shape mismatch");
  if (heads == 0 || d % heads != 0) throw DimensionError("causal_attention: width not divisible by heads");
  if (offset + t > s) throw DimensionError("causal_attention: queries extend past available keys");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& qv = q.values();
  const auto& kv = k.values();
  const auto& vv = v.values();
  std::vector<double> probs(t * heads * s, 0.0), out(t * d, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t span = offset + i + 1;
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + (i * heads + h) * s;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < span; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qv[i * d + h * dh + c] * kv[j * d + h * dh + c];
        p[j] = acc * sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < span; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j < span; ++j) {
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) out[i * d + h * dh + c] += p[j] * vv[j * d + h * dh + c];
      }
    }
  }
  return make_op_result(
      {t, d}, std::move(out), {q, k, v},
      [t, d, s, heads, dh, sc, offset, probs = std::move(probs)](detail::Node& self) {
        const auto& qv = self.parents[0]->data;
        const auto& kv = self.parents[1]->data;
        const auto& vv = self.parents[2]->data;
        const bool wq = detail::pwants(self, 0), wk = detail::pwants(self, 1), wv = detail::pwants(self, 2);
        std::vector<double> dp(s);
        for (std::size_t i = 0; i < t; ++i) {
          const std::size_t span = offset + i + 1;
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs.data() + (i * heads + h) * s;
            const double* go = self.grad.data() + i * d + h * dh;
            double pdp = 0.0;
            for (std::size_t j = 0; j < span; ++j) {
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += go[c] * vv[j * d + h * dh + c];
              dp[j] = acc;
              pdp += p[j] * acc;
            }
            if (wv) {
              auto& gv = detail::pgrad(self, 2);
              for (std::size_t j = 0; j < span; ++j)
                for (std::size_t c = 0; c < dh; ++c) gv[j * d + h * dh + c] += p[j] * go[c];
            }
            for (std::size_t j = 0; j < span; ++j) {
              const double ds = p[j] * (dp[j] - pdp) * sc;
              if (ds == 0.0) continue;
              if (wq) {
                auto& gq = detail::pgrad(self, 0);
                for (std::size_t c = 0; c < dh; ++c) gq[i * d + h * dh + c] += ds * kv[j * d + h * dh + c];
              }
              if (wk) {
                auto& gk = detail::pgrad(self, 1);
                for (std::size_t c = 0; c < dh; ++c) gk[j * d + h * dh + c] += ds * qv[i * d + h * dh + c];
              }
            }
          }
        }
      });
}

}  // namespace latentcl
