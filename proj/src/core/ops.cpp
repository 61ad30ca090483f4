#include "scpr/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "scpr/simd/kernels.hpp"

namespace scpr {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace scpr

namespace scpr::ops {
namespace {

using simd::MatrixView;

template <typename T>
MatrixView<T> view(const T* p, std::size_t rs, std::size_t cs) {
  return MatrixView<T>{p, rs, cs};
}

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

// Elementwise op whose derivative is expressed through input and output.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D dfdx) {
  Graph<T>& g = x.graph();
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const auto yid = g.next_id();
  return g.record(std::move(out), {x}, [x, yid, dfdx](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    const Tensor<T>& xv2 = gr.value(x);
    const Tensor<T>& yv = gr.value(yid);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < xv2.size(); ++i) gx[i] += gy[i] * dfdx(xv2[i], yv[i]);
  });
}

template <typename T>
void check_entries(const char* op, const EntryList& e, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < e.size(); ++i)
    if (e.rows[i] >= rows || e.cols[i] >= cols)
      throw IndexError(std::string(op) + ": entry (" + std::to_string(e.rows[i]) + "," +
                       std::to_string(e.cols[i]) + ") outside " + std::to_string(rows) + "x" +
                       std::to_string(cols));
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Graph<T>& g = a.graph();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  simd::gemm<T>(m, n, k, view(a.value().data(), k, 1), view(b.value().data(), n, 1), out.data(),
                n, false);
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, b}, [a, b, m, n, k, yid](Graph<T>& gr) {
    const T* gy = gr.grad(yid).data();
    if (gr.requires_grad(a))
      simd::gemm<T>(m, k, n, view(gy, n, 1), view(gr.value(b).data(), 1, n), gr.grad(a).data(),
                    k, true);
    if (gr.requires_grad(b))
      simd::gemm<T>(k, n, m, view(gr.value(a).data(), 1, k), view(gy, n, 1), gr.grad(b).data(),
                    n, true);
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner extents differ: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  Graph<T>& g = a.graph();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  simd::gemm<T>(m, n, k, view(a.value().data(), k, 1), view(b.value().data(), 1, k), out.data(),
                n, false);
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, b}, [a, b, m, n, k, yid](Graph<T>& gr) {
    const T* gy = gr.grad(yid).data();
    if (gr.requires_grad(a))
      simd::gemm<T>(m, k, n, view(gy, n, 1), view(gr.value(b).data(), k, 1), gr.grad(a).data(),
                    k, true);
    if (gr.requires_grad(b))
      simd::gemm<T>(n, k, m, view(gy, 1, n), view(gr.value(a).data(), k, 1), gr.grad(b).data(),
                    k, true);
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w) {
  return matmul_nt(x, w);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  if (bias.value().size() != w.rows())
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  return add_bias(matmul_nt(x, w), bias);
}

template <typename T>
Var<T> block_matmul_nt(Var<T> a, Var<T> b, BlockLayout layout) {
  const std::size_t d = a.cols();
  if (b.cols() != d || a.rows() != layout.batch * layout.query_len ||
      b.rows() != layout.batch * layout.key_len)
    throw DimensionError("block_matmul_nt: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()) + " for " + std::to_string(layout.batch) +
                         " blocks");
  Graph<T>& g = a.graph();
  const std::size_t tq = layout.query_len, tk = layout.key_len;
  Tensor<T> out = Tensor<T>::matrix(layout.batch * tq, tk);
  for (std::size_t blk = 0; blk < layout.batch; ++blk)
    simd::gemm<T>(tq, tk, d, view(a.value().data() + blk * tq * d, d, 1),
                  view(b.value().data() + blk * tk * d, 1, d), out.data() + blk * tq * tk, tk,
                  false);
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, b}, [a, b, layout, d, yid](Graph<T>& gr) {
    const std::size_t tq2 = layout.query_len, tk2 = layout.key_len;
    const T* gy = gr.grad(yid).data();
    for (std::size_t blk = 0; blk < layout.batch; ++blk) {
      const T* gb = gy + blk * tq2 * tk2;
      if (gr.requires_grad(a))
        simd::gemm<T>(tq2, d, tk2, view(gb, tk2, 1), view(gr.value(b).data() + blk * tk2 * d, d, 1),
                      gr.grad(a).data() + blk * tq2 * d, d, true);
      if (gr.requires_grad(b))
        simd::gemm<T>(tk2, d, tq2, view(gb, 1, tk2), view(gr.value(a).data() + blk * tq2 * d, d, 1),
                      gr.grad(b).data() + blk * tk2 * d, d, true);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, b}, [a, b, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    if (gr.requires_grad(a)) simd::axpy<T>(T{1}, gy.data(), gr.grad(a).data(), gy.size());
    if (gr.requires_grad(b)) simd::axpy<T>(T{1}, gy.data(), gr.grad(b).data(), gy.size());
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, b}, [a, b, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    if (gr.requires_grad(a)) simd::axpy<T>(T{1}, gy.data(), gr.grad(a).data(), gy.size());
    if (gr.requires_grad(b)) simd::axpy<T>(T{-1}, gy.data(), gr.grad(b).data(), gy.size());
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, b}, [a, b, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    if (gr.requires_grad(a)) {
      Tensor<T>& ga = gr.grad(a);
      const Tensor<T>& bv2 = gr.value(b);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv2[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      const Tensor<T>& av = gr.value(a);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> affine(Var<T> a, T alpha, T beta) {
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  for (auto& v : out.values()) v = alpha * v + beta;
  const auto yid = g.next_id();
  return g.record(std::move(out), {a}, [a, alpha, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    simd::axpy<T>(alpha, gy.data(), gr.grad(a).data(), gy.size());
  });
}

template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  const std::size_t n = a.cols();
  if (bias.value().size() != n)
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs " +
                         shape_string(a.shape()));
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  const T* bv = bias.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    T* row = out.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) row[c] += bv[c];
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, bias}, [a, bias, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    if (gr.requires_grad(a)) simd::axpy<T>(T{1}, gy.data(), gr.grad(a).data(), gy.size());
    if (gr.requires_grad(bias)) {
      T* gb = gr.grad(bias).data();
      for (std::size_t r = 0; r < gy.rows(); ++r) simd::axpy<T>(T{1}, gy.data() + r * n, gb, n);
    }
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, Var<T> s) {
  if (s.value().size() != 1)
    throw DimensionError("add_scalar: expected one element, got " + shape_string(s.shape()));
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  const T sv = s.value()[0];
  for (auto& v : out.values()) v += sv;
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, s}, [a, s, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    if (gr.requires_grad(a)) simd::axpy<T>(T{1}, gy.data(), gr.grad(a).data(), gy.size());
    if (gr.requires_grad(s)) {
      T total{0};
      for (T v : gy.values()) total += v;
      gr.grad(s)[0] += total;
    }
  });
}

template <typename T>
Var<T> mul_col(Var<T> a, Var<T> c) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (c.value().size() != rows)
    throw DimensionError("mul_col: column " + shape_string(c.shape()) + " vs " +
                         shape_string(a.shape()));
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  const T* cv = c.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] *= cv[r];
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, c}, [a, c, rows, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    if (gr.requires_grad(a)) {
      Tensor<T>& ga = gr.grad(a);
      const T* cv2 = gr.value(c).data();
      for (std::size_t r = 0; r < rows; ++r)
        simd::axpy<T>(cv2[r], gy.data() + r * n, ga.data() + r * n, n);
    }
    if (gr.requires_grad(c)) {
      Tensor<T>& gc = gr.grad(c);
      const T* av = gr.value(a).data();
      for (std::size_t r = 0; r < rows; ++r)
        gc[r] += simd::dot<T>(gy.data() + r * n, av + r * n, n);
    }
  });
}

template <typename T>
Var<T> sub_row_values(Var<T> a, std::span<const T> values) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (values.size() != rows) throw DimensionError("sub_row_values: one value per row required");
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] -= values[r];
  const auto yid = g.next_id();
  return g.record(std::move(out), {a}, [a, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    simd::axpy<T>(T{1}, gy.data(), gr.grad(a).data(), gy.size());
  });
}

template <typename T>
Var<T> fill_rows(Var<T> a, std::span<const std::uint8_t> keep, T fill) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (keep.size() != rows) throw DimensionError("fill_rows: one flag per row required");
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  for (std::size_t r = 0; r < rows; ++r)
    if (!keep[r]) std::fill(out.data() + r * n, out.data() + (r + 1) * n, fill);
  std::vector<std::uint8_t> flags(keep.begin(), keep.end());
  const auto yid = g.next_id();
  return g.record(std::move(out), {a}, [a, flags = std::move(flags), n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    Tensor<T>& ga = gr.grad(a);
    for (std::size_t r = 0; r < flags.size(); ++r)
      if (flags[r]) simd::axpy<T>(T{1}, gy.data() + r * n, ga.data() + r * n, n);
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  return unary<T>(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(kC * (v + kA * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log_floor(Var<T> x, T floor) {
  return unary<T>(
      x, [floor](T v) { return std::log(std::max(v, floor)); },
      [floor](T v, T) { return v > floor ? T(1) / v : T(0); });
}

// ---------------------------------------------------------------------------
// Row-wise normalisers

template <typename T>
Var<T> log_softmax(Var<T> x) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("log_softmax: empty last extent");
  Graph<T>& g = x.graph();
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(in[j])) throw NumericError("log_softmax: non-finite input");
      mx = std::max(mx, in[j]);
    }
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - mx);
    // Shift first: mx + log(s) would round at the scale of mx.
    const T log_s = static_cast<T>(std::log(s));
    for (std::size_t j = 0; j < n; ++j) o[j] = (in[j] - mx) - log_s;
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {x}, [x, rows, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    const Tensor<T>& y = gr.value(yid);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gyr = gy.data() + r * n;
      const T* yr = y.data() + r * n;
      T* gxr = gx.data() + r * n;
      T s{0};
      for (std::size_t j = 0; j < n; ++j) s += gyr[j];
      for (std::size_t j = 0; j < n; ++j) gxr[j] += gyr[j] - std::exp(yr[j]) * s;
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const std::size_t rows = x.rows(), n = x.cols();
  Graph<T>& g = x.graph();
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - mx));
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<T>(o[j] * inv);
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {x}, [x, rows, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    const Tensor<T>& y = gr.value(yid);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gyr = gy.data() + r * n;
      const T* yr = y.data() + r * n;
      const T inner = simd::dot<T>(gyr, yr, n);
      T* gxr = gx.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gyr[j] - inner);
    }
  });
}

template <typename T>
Var<T> masked_softmax(Var<T> x, std::span<const std::uint8_t> mask) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (mask.size() != rows * n) throw DimensionError("masked_softmax: mask size mismatch");
  Graph<T>& g = x.graph();
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    const std::uint8_t* mk = mask.data() + r * n;
    T* o = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mk[j]) mx = std::max(mx, in[j]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;
    double s = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (mk[j]) s += (o[j] = std::exp(in[j] - mx));
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<T>(o[j] * inv);
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {x}, [x, rows, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    const Tensor<T>& y = gr.value(yid);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gyr = gy.data() + r * n;
      const T* yr = y.data() + r * n;
      const T inner = simd::dot<T>(gyr, yr, n);
      T* gxr = gx.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gyr[j] - inner);
    }
  });
}

template <typename T>
Var<T> normalize_rows(Var<T> a) {
  const std::size_t rows = a.rows(), n = a.cols();
  Graph<T>& g = a.graph();
  Tensor<T> out(a.value());
  std::vector<T> sums(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s{0};
    for (std::size_t j = 0; j < n; ++j) s += out[r * n + j];
    if (!(s > T(0)) || !std::isfinite(s)) throw NumericError("normalize_rows: row sum not positive");
    sums[r] = s;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= s;
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {a}, [a, sums = std::move(sums), rows, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    const Tensor<T>& y = gr.value(yid);
    Tensor<T>& ga = gr.grad(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const T inner = simd::dot<T>(gy.data() + r * n, y.data() + r * n, n);
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += (gy[r * n + j] - inner) / sums[r];
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (gamma.value().size() != n || beta.value().size() != n)
    throw DimensionError("layer_norm: affine parameters do not match " + shape_string(x.shape()));
  Graph<T>& g = x.graph();
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> rstd(rows);
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= T(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (in[j] - mean) * rs;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gm[j] + bt[j];
    }
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, n,
                   yid](Graph<T>& gr) {
                    const Tensor<T>& gy = gr.grad(yid);
                    const T* gm2 = gr.value(gamma).data();
                    if (gr.requires_grad(gamma) || gr.requires_grad(beta)) {
                      T* gg = gr.requires_grad(gamma) ? gr.grad(gamma).data() : nullptr;
                      T* gb = gr.requires_grad(beta) ? gr.grad(beta).data() : nullptr;
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < n; ++j) {
                          if (gg) gg[j] += gy[r * n + j] * xhat[r * n + j];
                          if (gb) gb[j] += gy[r * n + j];
                        }
                    }
                    if (gr.requires_grad(x)) {
                      Tensor<T>& gx = gr.grad(x);
                      for (std::size_t r = 0; r < rows; ++r) {
                        T mean_d{0}, mean_dx{0};
                        for (std::size_t j = 0; j < n; ++j) {
                          const T d = gy[r * n + j] * gm2[j];
                          mean_d += d;
                          mean_dx += d * xhat[r * n + j];
                        }
                        mean_d /= T(n);
                        mean_dx /= T(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          const T d = gy[r * n + j] * gm2[j];
                          gx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                        }
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
Var<T> sum(Var<T> a) {
  Graph<T>& g = a.graph();
  T s{0};
  for (T v : a.value().values()) s += v;
  const auto yid = g.next_id();
  return g.record(Tensor<T>(Shape{1}, s), {a}, [a, yid](Graph<T>& gr) {
    const T gy = gr.grad(yid)[0];
    for (auto& v : gr.grad(a).values()) v += gy;
  });
}

template <typename T>
Var<T> row_sum(Var<T> a) {
  const std::size_t rows = a.rows(), n = a.cols();
  Graph<T>& g = a.graph();
  Tensor<T> out = Tensor<T>::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += a.value()[r * n + j];
  const auto yid = g.next_id();
  return g.record(std::move(out), {a}, [a, rows, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    Tensor<T>& ga = gr.grad(a);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += gy[r];
  });
}

template <typename T>
Var<T> nll(Var<T> logp, std::span<const int> targets) {
  const std::size_t rows = logp.rows(), n = logp.cols();
  if (targets.size() != rows)
    throw DimensionError("nll: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  Graph<T>& g = logp.graph();
  std::size_t count = 0;
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= n)
      throw IndexError("nll: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                       std::to_string(n));
    total -= logp.value()[r * n + static_cast<std::size_t>(targets[r])];
    ++count;
  }
  if (count == 0) throw DataError("nll: every target is padding");
  std::vector<int> tg(targets.begin(), targets.end());
  const auto yid = g.next_id();
  return g.record(Tensor<T>(Shape{1}, total / T(count)), {logp},
                  [logp, tg = std::move(tg), n, count, yid](Graph<T>& gr) {
                    const T scale = gr.grad(yid)[0] / T(count);
                    Tensor<T>& gl = gr.grad(logp);
                    for (std::size_t r = 0; r < tg.size(); ++r)
                      if (tg[r] >= 0) gl[r * n + static_cast<std::size_t>(tg[r])] -= scale;
                  });
}

template <typename T>
Var<T> soft_cross_entropy(Var<T> logp, const Tensor<T>& target) {
  if (target.shape() != logp.shape())
    throw DimensionError("soft_cross_entropy: target " + shape_string(target.shape()) + " vs " +
                         shape_string(logp.shape()));
  Graph<T>& g = logp.graph();
  const std::size_t rows = logp.rows();
  T total{0};
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target[i] != T(0)) total -= target[i] * logp.value()[i];
  const auto yid = g.next_id();
  return g.record(Tensor<T>(Shape{1}, total / T(rows)), {logp},
                  [logp, target, rows, yid](Graph<T>& gr) {
                    const T scale = gr.grad(yid)[0] / T(rows);
                    Tensor<T>& gl = gr.grad(logp);
                    for (std::size_t i = 0; i < target.size(); ++i) gl[i] -= scale * target[i];
                  });
}

// ---------------------------------------------------------------------------
// Indexing

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const std::size_t vocab = table.rows(), d = table.cols();
  Graph<T>& g = table.graph();
  Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(vocab) + ")");
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const auto yid = g.next_id();
  return g.record(std::move(out), {table}, [table, idv = std::move(idv), d, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    Tensor<T>& gt = gr.grad(table);
    for (std::size_t i = 0; i < idv.size(); ++i)
      simd::axpy<T>(T{1}, gy.data() + i * d, gt.data() + static_cast<std::size_t>(idv[i]) * d, d);
  });
}

template <typename T>
ScatterMean<T> scatter_mean(Var<T> values, std::span<const int> ids, std::size_t vocab) {
  const std::size_t n = values.rows(), d = values.cols();
  if (ids.size() != n) throw DimensionError("scatter_mean: one id per row required");
  std::vector<std::size_t> counts(vocab, 0);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw IndexError("scatter_mean: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
    ++counts[static_cast<std::size_t>(id)];
  }
  Graph<T>& g = values.graph();
  Tensor<T> out = Tensor<T>::matrix(vocab, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<std::size_t>(ids[i]);
    simd::axpy<T>(T(1) / T(counts[id]), values.value().data() + i * d, out.data() + id * d, d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const auto yid = g.next_id();
  Var<T> mean = g.record(std::move(out), {values},
                         [values, idv = std::move(idv), counts, d, yid](Graph<T>& gr) {
                           const Tensor<T>& gy = gr.grad(yid);
                           Tensor<T>& gv = gr.grad(values);
                           for (std::size_t i = 0; i < idv.size(); ++i) {
                             const auto id = static_cast<std::size_t>(idv[i]);
                             simd::axpy<T>(T(1) / T(counts[id]), gy.data() + id * d,
                                           gv.data() + i * d, d);
                           }
                         });
  return ScatterMean<T>{mean, std::move(counts)};
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw DimensionError("concat_cols: row mismatch " + shape_string(p.shape()));
    offsets.push_back(total);
    total += p.cols();
  }
  Graph<T>& g = parts.front().graph();
  Tensor<T> out = Tensor<T>::matrix(rows, total);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t w = parts[i].cols();
    const T* src = parts[i].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src + r * w, w, out.data() + r * total + offsets[i]);
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), parts, [parts, offsets, rows, total, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!gr.requires_grad(parts[i])) continue;
      const std::size_t w = gr.value(parts[i]).cols();
      Tensor<T>& gp = gr.grad(parts[i]);
      for (std::size_t r = 0; r < rows; ++r)
        simd::axpy<T>(T{1}, gy.data() + r * total + offsets[i], gp.data() + r * w, w);
    }
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (begin > end || end > n)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_string(a.shape()));
  const std::size_t w = end - begin;
  Graph<T>& g = a.graph();
  Tensor<T> out = Tensor<T>::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.value().data() + r * n + begin, w, out.data() + r * w);
  const auto yid = g.next_id();
  return g.record(std::move(out), {a}, [a, rows, n, begin, w, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    Tensor<T>& ga = gr.grad(a);
    for (std::size_t r = 0; r < rows; ++r)
      simd::axpy<T>(T{1}, gy.data() + r * w, ga.data() + r * n + begin, w);
  });
}

template <typename T>
Var<T> shift_rows(Var<T> a, std::size_t shift, std::size_t seq_len) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (seq_len == 0 || rows % seq_len != 0)
    throw DimensionError("shift_rows: " + std::to_string(rows) + " rows not divisible by " +
                         std::to_string(seq_len));
  Graph<T>& g = a.graph();
  Tensor<T> out = Tensor<T>::matrix(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = r % seq_len;
    if (t >= shift) std::copy_n(a.value().data() + (r - shift) * n, n, out.data() + r * n);
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {a}, [a, rows, n, shift, seq_len, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    Tensor<T>& ga = gr.grad(a);
    for (std::size_t r = 0; r < rows; ++r)
      if (r % seq_len >= shift)
        simd::axpy<T>(T{1}, gy.data() + r * n, ga.data() + (r - shift) * n, n);
  });
}

template <typename T>
Var<T> row_dots(Var<T> a, Var<T> b, const EntryList& entries) {
  const std::size_t d = a.cols();
  if (b.cols() != d)
    throw DimensionError("row_dots: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  check_entries<T>("row_dots", entries, a.rows(), b.rows());
  Graph<T>& g = a.graph();
  Tensor<T> out(Shape{entries.size()});
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for (std::size_t e = 0; e < entries.size(); ++e)
    out[e] = simd::dot<T>(av + entries.rows[e] * d, bv + entries.cols[e] * d, d);
  const auto yid = g.next_id();
  return g.record(std::move(out), {a, b}, [a, b, entries, d, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    const bool ga_on = gr.requires_grad(a), gb_on = gr.requires_grad(b);
    T* ga = ga_on ? gr.grad(a).data() : nullptr;
    T* gb = gb_on ? gr.grad(b).data() : nullptr;
    const T* av2 = gr.value(a).data();
    const T* bv2 = gr.value(b).data();
    for (std::size_t e = 0; e < entries.size(); ++e) {
      if (ga) simd::axpy<T>(gy[e], bv2 + entries.cols[e] * d, ga + entries.rows[e] * d, d);
      if (gb) simd::axpy<T>(gy[e], av2 + entries.rows[e] * d, gb + entries.cols[e] * d, d);
    }
  });
}

template <typename T>
Var<T> gather_entries(Var<T> m, const EntryList& entries) {
  const std::size_t n = m.cols();
  check_entries<T>("gather_entries", entries, m.rows(), n);
  Graph<T>& g = m.graph();
  Tensor<T> out(Shape{entries.size()});
  for (std::size_t e = 0; e < entries.size(); ++e)
    out[e] = m.value()[entries.rows[e] * n + entries.cols[e]];
  const auto yid = g.next_id();
  return g.record(std::move(out), {m}, [m, entries, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    Tensor<T>& gm = gr.grad(m);
    for (std::size_t e = 0; e < entries.size(); ++e)
      gm[entries.rows[e] * n + entries.cols[e]] += gy[e];
  });
}

template <typename T>
Var<T> overwrite_entries(Var<T> base, const EntryList& entries, Var<T> values) {
  const std::size_t n = base.cols();
  if (values.value().size() != entries.size())
    throw DimensionError("overwrite_entries: " + std::to_string(values.value().size()) +
                         " values for " + std::to_string(entries.size()) + " entries");
  check_entries<T>("overwrite_entries", entries, base.rows(), n);
  Graph<T>& g = base.graph();
  Tensor<T> out(base.value());
  for (std::size_t e = 0; e < entries.size(); ++e)
    out[entries.rows[e] * n + entries.cols[e]] = values.value()[e];
  const auto yid = g.next_id();
  return g.record(std::move(out), {base, values}, [base, values, entries, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    if (gr.requires_grad(values)) {
      Tensor<T>& gv = gr.grad(values);
      for (std::size_t e = 0; e < entries.size(); ++e)
        gv[e] += gy[entries.rows[e] * n + entries.cols[e]];
    }
    if (gr.requires_grad(base)) {
      Tensor<T>& gb = gr.grad(base);
      // Overwritten coordinates receive no gradient; accumulate everything and
      // subtract the masked part back out.
      simd::axpy<T>(T{1}, gy.data(), gb.data(), gy.size());
      for (std::size_t e = 0; e < entries.size(); ++e)
        gb[entries.rows[e] * n + entries.cols[e]] -= gy[entries.rows[e] * n + entries.cols[e]];
    }
  });
}

template <typename T>
Var<T> segment_mean(Var<T> s, const SegmentList& segments) {
  const std::size_t n = s.cols(), rows = s.rows();
  for (std::size_t e = 0; e < segments.size(); ++e) {
    if (segments.rows[e] >= rows || segments.offsets[e + 1] <= segments.offsets[e])
      throw IndexError("segment_mean: empty or out-of-range segment");
    for (std::size_t i = segments.offsets[e]; i < segments.offsets[e + 1]; ++i)
      if (segments.cols[i] >= n) throw IndexError("segment_mean: column out of range");
  }
  Graph<T>& g = s.graph();
  Tensor<T> out(Shape{segments.size()});
  const T* sv = s.value().data();
  for (std::size_t e = 0; e < segments.size(); ++e) {
    const std::size_t lo = segments.offsets[e], hi = segments.offsets[e + 1];
    T acc{0};
    for (std::size_t i = lo; i < hi; ++i) acc += sv[segments.rows[e] * n + segments.cols[i]];
    out[e] = acc / T(hi - lo);
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {s}, [s, segments, n, yid](Graph<T>& gr) {
    const Tensor<T>& gy = gr.grad(yid);
    Tensor<T>& gs = gr.grad(s);
    for (std::size_t e = 0; e < segments.size(); ++e) {
      const std::size_t lo = segments.offsets[e], hi = segments.offsets[e + 1];
      const T share = gy[e] / T(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) gs[segments.rows[e] * n + segments.cols[i]] += share;
    }
  });
}

template <typename T>
Var<T> scatter_add_cols(Var<T> base, Var<T> src, std::span<const int> col_ids) {
  const std::size_t rows = base.rows(), n = base.cols(), s = src.cols();
  if (src.rows() != rows || col_ids.size() != rows * s)
    throw DimensionError("scatter_add_cols: " + shape_string(base.shape()) + " vs " +
                         shape_string(src.shape()));
  for (int c : col_ids)
    if (c >= static_cast<int>(n)) throw IndexError("scatter_add_cols: column out of range");
  Graph<T>& g = base.graph();
  Tensor<T> out(base.value());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < s; ++j) {
      const int c = col_ids[r * s + j];
      if (c >= 0) out[r * n + static_cast<std::size_t>(c)] += src.value()[r * s + j];
    }
  std::vector<int> ids(col_ids.begin(), col_ids.end());
  const auto yid = g.next_id();
  return g.record(std::move(out), {base, src},
                  [base, src, ids = std::move(ids), rows, n, s, yid](Graph<T>& gr) {
                    const Tensor<T>& gy = gr.grad(yid);
                    if (gr.requires_grad(base))
                      simd::axpy<T>(T{1}, gy.data(), gr.grad(base).data(), gy.size());
                    if (gr.requires_grad(src)) {
                      Tensor<T>& gs = gr.grad(src);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < s; ++j) {
                          const int c = ids[r * s + j];
                          if (c >= 0) gs[r * s + j] += gy[r * n + static_cast<std::size_t>(c)];
                        }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout) {
  const std::size_t d = q.cols();
  const std::size_t batch = layout.blocks.batch, tq = layout.blocks.query_len,
                    tk = layout.blocks.key_len, heads = layout.heads;
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
  if (q.rows() != batch * tq || k.rows() != batch * tk || v.rows() != batch * tk ||
      k.cols() != d || v.cols() != d)
    throw DimensionError("attention: q " + shape_string(q.shape()) + " k " +
                         shape_string(k.shape()) + " v " + shape_string(v.shape()));
  if (!layout.key_valid.empty() && layout.key_valid.size() != batch)
    throw DimensionError("attention: key_valid needs one entry per block");
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  Graph<T>& g = q.graph();
  const T* qv = q.value().data();
  const T* kv = k.value().data();
  const T* vv = v.value().data();

  Tensor<T> probs(Shape{batch * heads * tq * tk});
  Tensor<T> out = Tensor<T>::matrix(batch * tq, d);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t valid = layout.key_valid.empty() ? tk : std::min(tk, layout.key_valid[b]);
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (b * heads + h) * tq * tk;
      simd::gemm<T>(tq, tk, dh, view(qv + b * tq * d + h * dh, d, 1),
                    view(kv + b * tk * d + h * dh, 1, d), p, tk, false);
      for (std::size_t i = 0; i < tq; ++i) {
        T* row = p + i * tk;
        const std::size_t limit = layout.causal ? std::min(valid, i + 1) : valid;
        if (limit == 0) {
          std::fill(row, row + tk, T{0});
          continue;
        }
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, row[j] * scale);
        T s{0};
        for (std::size_t j = 0; j < limit; ++j) s += (row[j] = std::exp(row[j] * scale - mx));
        const T inv = T(1) / s;
        for (std::size_t j = 0; j < limit; ++j) row[j] *= inv;
        std::fill(row + limit, row + tk, T{0});
      }
      simd::gemm<T>(tq, dh, tk, view<T>(p, tk, 1), view(vv + b * tk * d + h * dh, d, 1),
                    out.data() + b * tq * d + h * dh, d, false);
    }
  }
  const auto yid = g.next_id();
  return g.record(
      std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), batch, tq, tk, heads, d, dh, scale, yid](Graph<T>& gr) {
        const T* gy = gr.grad(yid).data();
        const T* qv2 = gr.value(q).data();
        const T* kv2 = gr.value(k).data();
        const T* vv2 = gr.value(v).data();
        T* gq = gr.requires_grad(q) ? gr.grad(q).data() : nullptr;
        T* gk = gr.requires_grad(k) ? gr.grad(k).data() : nullptr;
        T* gv = gr.requires_grad(v) ? gr.grad(v).data() : nullptr;
        std::vector<T> dp(tq * tk);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + (b * heads + h) * tq * tk;
            const T* gyb = gy + b * tq * d + h * dh;
            if (gv)
              simd::gemm<T>(tk, dh, tq, view<T>(p, 1, tk), view(gyb, d, 1),
                            gv + b * tk * d + h * dh, d, true);
            if (!gq && !gk) continue;
            simd::gemm<T>(tq, tk, dh, view(gyb, d, 1), view(vv2 + b * tk * d + h * dh, 1, d),
                          dp.data(), tk, false);
            for (std::size_t i = 0; i < tq; ++i) {
              T* dr = dp.data() + i * tk;
              const T* pr = p + i * tk;
              const T inner = simd::dot<T>(dr, pr, tk);
              for (std::size_t j = 0; j < tk; ++j) dr[j] = pr[j] * (dr[j] - inner) * scale;
            }
            if (gq)
              simd::gemm<T>(tq, dh, tk, view<T>(dp.data(), tk, 1),
                            view(kv2 + b * tk * d + h * dh, d, 1), gq + b * tq * d + h * dh, d,
                            true);
            if (gk)
              simd::gemm<T>(tk, dh, tq, view<T>(dp.data(), 1, tk),
                            view(qv2 + b * tq * d + h * dh, d, 1), gk + b * tk * d + h * dh, d,
                            true);
          }
        }
      });
}

template <typename T>
Var<T> additive_scores(Var<T> f, Var<T> h, Var<T> bias, Var<T> v, BlockLayout layout) {
  const std::size_t d = f.cols(), tq = layout.query_len, tk = layout.key_len;
  if (h.cols() != d || bias.value().size() != d || v.value().size() != d ||
      f.rows() != layout.batch * tq || h.rows() != layout.batch * tk)
    throw DimensionError("additive_scores: f " + shape_string(f.shape()) + " h " +
                         shape_string(h.shape()));
  Graph<T>& g = f.graph();
  Tensor<T> out = Tensor<T>::matrix(layout.batch * tq, tk);
  const T* fv = f.value().data();
  const T* hv = h.value().data();
  const T* bv = bias.value().data();
  const T* vv = v.value().data();
  for (std::size_t r = 0; r < layout.batch * tq; ++r) {
    const std::size_t blk = r / tq;
    for (std::size_t j = 0; j < tk; ++j) {
      const T* hj = hv + (blk * tk + j) * d;
      T acc{0};
      for (std::size_t c = 0; c < d; ++c) acc += vv[c] * std::tanh(fv[r * d + c] + hj[c] + bv[c]);
      out[r * tk + j] = acc;
    }
  }
  const auto yid = g.next_id();
  return g.record(std::move(out), {f, h, bias, v}, [f, h, bias, v, layout, d, yid](Graph<T>& gr) {
    const std::size_t tq2 = layout.query_len, tk2 = layout.key_len;
    const Tensor<T>& gy = gr.grad(yid);
    const T* fv2 = gr.value(f).data();
    const T* hv2 = gr.value(h).data();
    const T* bv2 = gr.value(bias).data();
    const T* vv2 = gr.value(v).data();
    T* gf = gr.requires_grad(f) ? gr.grad(f).data() : nullptr;
    T* gh = gr.requires_grad(h) ? gr.grad(h).data() : nullptr;
    T* gb = gr.requires_grad(bias) ? gr.grad(bias).data() : nullptr;
    T* gvv = gr.requires_grad(v) ? gr.grad(v).data() : nullptr;
    for (std::size_t r = 0; r < layout.batch * tq2; ++r) {
      const std::size_t blk = r / tq2;
      for (std::size_t j = 0; j < tk2; ++j) {
        const T up = gy[r * tk2 + j];
        if (up == T(0)) continue;
        const std::size_t hr = blk * tk2 + j;
        for (std::size_t c = 0; c < d; ++c) {
          const T u = std::tanh(fv2[r * d + c] + hv2[hr * d + c] + bv2[c]);
          const T du = up * vv2[c] * (T(1) - u * u);
          if (gf) gf[r * d + c] += du;
          if (gh) gh[hr * d + c] += du;
          if (gb) gb[c] += du;
          if (gvv) gvv[c] += up * u;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define SCPR_INSTANTIATE_OPS(T)                                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                                    \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                 \
  template Var<T> linear(Var<T>, Var<T>);                                                    \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> block_matmul_nt(Var<T>, Var<T>, BlockLayout);                              \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> sub(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> affine(Var<T>, T, T);                                                      \
  template Var<T> add_bias(Var<T>, Var<T>);                                                  \
  template Var<T> add_scalar(Var<T>, Var<T>);                                                \
  template Var<T> mul_col(Var<T>, Var<T>);                                                   \
  template Var<T> sub_row_values(Var<T>, std::span<const T>);                                \
  template Var<T> fill_rows(Var<T>, std::span<const std::uint8_t>, T);                       \
  template Var<T> gelu(Var<T>);                                                              \
  template Var<T> tanh(Var<T>);                                                              \
  template Var<T> sigmoid(Var<T>);                                                           \
  template Var<T> exp(Var<T>);                                                               \
  template Var<T> log_floor(Var<T>, T);                                                      \
  template Var<T> log_softmax(Var<T>);                                                       \
  template Var<T> softmax(Var<T>);                                                           \
  template Var<T> masked_softmax(Var<T>, std::span<const std::uint8_t>);                     \
  template Var<T> normalize_rows(Var<T>);                                                    \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                     \
  template Var<T> sum(Var<T>);                                                               \
  template Var<T> row_sum(Var<T>);                                                           \
  template Var<T> nll(Var<T>, std::span<const int>);                                         \
  template Var<T> soft_cross_entropy(Var<T>, const Tensor<T>&);                              \
  template Var<T> gather_rows(Var<T>, std::span<const int>);                                 \
  template ScatterMean<T> scatter_mean(Var<T>, std::span<const int>, std::size_t);           \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                   \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                              \
  template Var<T> shift_rows(Var<T>, std::size_t, std::size_t);                              \
  template Var<T> row_dots(Var<T>, Var<T>, const EntryList&);                                \
  template Var<T> gather_entries(Var<T>, const EntryList&);                                  \
  template Var<T> overwrite_entries(Var<T>, const EntryList&, Var<T>);                       \
  template Var<T> segment_mean(Var<T>, const SegmentList&);                                  \
  template Var<T> scatter_add_cols(Var<T>, Var<T>, std::span<const int>);                    \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, const AttentionLayout&);                 \
  template Var<T> additive_scores(Var<T>, Var<T>, Var<T>, Var<T>, BlockLayout);

SCPR_INSTANTIATE_OPS(float)
SCPR_INSTANTIATE_OPS(double)

#undef SCPR_INSTANTIATE_OPS

}  // namespace scpr::ops
