#include "tsmini/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace tsmini::ad {

// --- Shape / Mask ------------------------------------------------------------

Shape::Shape(std::initializer_list<std::size_t> d) {
  if (d.size() == 0 || d.size() > 4) throw ShapeError("tensor rank must be 1..4");
  rank = d.size();
  std::copy(d.begin(), d.end(), dims.begin());
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) n *= dims[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < rank; ++i) os << (i ? ", " : "") << dims[i];
  os << ')';
  return os.str();
}

Mask Mask::from_lengths(std::vector<std::size_t> lengths) {
  Mask m;
  m.max_len = lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
  m.lengths = std::move(lengths);
  return m;
}

Mask Mask::full(std::size_t batch, std::size_t len) {
  Mask m;
  m.lengths.assign(batch, len);
  m.max_len = len;
  return m;
}

std::size_t Mask::total_valid() const { return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}); }

Mask Mask::after_valid_conv(std::size_t kernel) const {
  if (max_len < kernel) throw ShapeError("sequence shorter than convolution kernel");
  Mask m;
  m.max_len = max_len - kernel + 1;
  m.lengths.reserve(lengths.size());
  for (std::size_t len : lengths) m.lengths.push_back(len >= kernel ? len - kernel + 1 : 0);
  return m;
}

// --- grad mode -----------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- Tensor ----------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  if (values.size() != shape.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape.str());
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = shape;
  n->value = std::move(values);
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::leaf(Shape shape, std::vector<T> values) {
  Tensor t = constant(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return node_->value[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  node_->grad_buffer();
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.assign(node_->value.size(), T(0));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = shape;
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
      n->backward = std::move(backward_fn);
    }
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  return make_result<T>(shape, std::move(value), std::vector<Tensor<T>>(inputs), std::move(backward_fn));
}

namespace {

template <typename T>
using RMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RMat<T>>;

template <typename T>
bool wants_grad(const Node<T>& out, std::size_t k) {
  return out.parents[k]->requires_grad;
}

template <typename T>
T* parent_grad(Node<T>& out, std::size_t k) {
  return out.parents[k]->grad_buffer();
}

template <typename T>
const T* parent_value(const Node<T>& out, std::size_t k) {
  return out.parents[k]->value.data();
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape r = s;
  r.dims[r.rank - 1] = last;
  return r;
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F f, D df) {
  std::vector<T> out(a.numel());
  const T* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result<T>(a.shape(), std::move(out), {a}, [df](Node<T>& o) {
    const T* x = parent_value(o, 0);
    T* g = parent_grad(o, 0);
    for (std::size_t i = 0; i < o.value.size(); ++i) g[i] += o.grad[i] * df(x[i], o.value[i]);
  });
}

}  // namespace

// --- linear algebra ----------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.rank == 2) {
    const std::size_t K = sb[0], N = sb[1];
    require(sa.back() == K, "matmul: " + sa.str() + " x " + sb.str());
    const std::size_t R = a.numel() / K;
    std::vector<T> out(R * N);
    MapM<T>(out.data(), R, N).noalias() = CMapM<T>(a.data(), R, K) * CMapM<T>(b.data(), K, N);
    return make_result<T>(with_last(sa, N), std::move(out), {a, b}, [R, K, N](Node<T>& o) {
      CMapM<T> dC(o.grad.data(), R, N);
      if (wants_grad(o, 0)) MapM<T>(parent_grad(o, 0), R, K).noalias() += dC * CMapM<T>(parent_value(o, 1), K, N).transpose();
      if (wants_grad(o, 1)) MapM<T>(parent_grad(o, 1), K, N).noalias() += CMapM<T>(parent_value(o, 0), R, K).transpose() * dC;
    });
  }
  require(sa.rank == 3 && sb.rank == 3 && sa[0] == sb[0] && sa[2] == sb[1], "matmul: " + sa.str() + " x " + sb.str());
  const std::size_t B = sa[0], M = sa[1], K = sa[2], N = sb[2];
  std::vector<T> out(B * M * N);
  for (std::size_t i = 0; i < B; ++i) {
    MapM<T>(out.data() + i * M * N, M, N).noalias() =
        CMapM<T>(a.data() + i * M * K, M, K) * CMapM<T>(b.data() + i * K * N, K, N);
  }
  return make_result<T>(Shape{B, M, N}, std::move(out), {a, b}, [B, M, K, N](Node<T>& o) {
    const bool ga = wants_grad(o, 0), gb = wants_grad(o, 1);
    T* da = ga ? parent_grad(o, 0) : nullptr;
    T* db = gb ? parent_grad(o, 1) : nullptr;
    for (std::size_t i = 0; i < B; ++i) {
      CMapM<T> dC(o.grad.data() + i * M * N, M, N);
      if (ga) MapM<T>(da + i * M * K, M, K).noalias() += dC * CMapM<T>(parent_value(o, 1) + i * K * N, K, N).transpose();
      if (gb) MapM<T>(db + i * K * N, K, N).noalias() += CMapM<T>(parent_value(o, 0) + i * M * K, M, K).transpose() * dC;
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sb.rank <= sa.rank, "add: " + sa.str() + " + " + sb.str());
  for (std::size_t i = 0; i < sb.rank; ++i) {
    require(sb[sb.rank - 1 - i] == sa[sa.rank - 1 - i], "add: " + sa.str() + " + " + sb.str());
  }
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  std::vector<T> out(a.value().begin(), a.value().end());
  const T* bv = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bv[i];
  return make_result<T>(sa, std::move(out), {a, b}, [outer, inner](Node<T>& o) {
    if (wants_grad(o, 0)) {
      T* g = parent_grad(o, 0);
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (wants_grad(o, 1)) {
      T* g = parent_grad(o, 1);
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t i = 0; i < inner; ++i) g[i] += o.grad[r * inner + i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: " + a.shape().str() + " * " + b.shape().str());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& o) {
    const T* av = parent_value(o, 0);
    const T* bv = parent_value(o, 1);
    if (wants_grad(o, 0)) {
      T* g = parent_grad(o, 0);
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bv[i];
    }
    if (wants_grad(o, 1)) {
      T* g = parent_grad(o, 1);
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  const Shape& s0 = parts[0].shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.rank == s0.rank, "concat_last: rank mismatch");
    for (std::size_t i = 0; i + 1 < s.rank; ++i) require(s[i] == s0[i], "concat_last: leading shape mismatch");
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = parts[0].numel() / widths[0];
  std::vector<T> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(src + r * widths[k], src + (r + 1) * widths[k], out.begin() + r * total + off);
    off += widths[k];
  }
  return make_result<T>(with_last(s0, total), std::move(out), parts, [rows, total, widths](Node<T>& o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (wants_grad(o, k)) {
        T* g = parent_grad(o, k);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += o.grad[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t width = a.shape().back();
  require(begin < end && end <= width, "slice_last: bad range");
  const std::size_t rows = a.numel() / width;
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(a.data() + r * width + begin, a.data() + r * width + end, out.begin() + r * w);
  return make_result<T>(with_last(a.shape(), w), std::move(out), {a}, [rows, width, begin, w](Node<T>& o) {
    T* g = parent_grad(o, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * width + begin + c] += o.grad[r * w + c];
  });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  const Shape& s = a.shape();
  require(s.rank >= 2, "transpose_last2 needs rank >= 2");
  const std::size_t M = s[s.rank - 2], N = s[s.rank - 1];
  const std::size_t B = a.numel() / (M * N);
  std::vector<T> out(a.numel());
  for (std::size_t b = 0; b < B; ++b)
    MapM<T>(out.data() + b * M * N, N, M) = CMapM<T>(a.data() + b * M * N, M, N).transpose();
  Shape os = s;
  std::swap(os.dims[s.rank - 2], os.dims[s.rank - 1]);
  return make_result<T>(os, std::move(out), {a}, [B, M, N](Node<T>& o) {
    T* g = parent_grad(o, 0);
    for (std::size_t b = 0; b < B; ++b)
      MapM<T>(g + b * M * N, M, N) += CMapM<T>(o.grad.data() + b * M * N, N, M).transpose();
  });
}

// --- elementwise ---------------------------------------------------------------------

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log2(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return std::log2(x); },
                  [](T x, T) { return T(1) / (x * T(0.69314718055994530942)); });
}

namespace {
template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary<T>(a, [slope](T x) { return x >= T(0) ? x : slope * x; },
                  [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return x * sigmoid_scalar(x); },
                  [](T x, T) {
                    const T s = sigmoid_scalar(x);
                    return s * (T(1) + x * (T(1) - s));
                  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.value()) total += v;
  return make_result<T>(Shape{1}, {total}, {a}, [](Node<T>& o) {
    T* g = parent_grad(o, 0);
    const std::size_t n = o.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// --- masked reductions -------------------------------------------------------------

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a, const Mask* key_mask) {
  const Shape& s = a.shape();
  const std::size_t L = s.back();
  const std::size_t rows = a.numel() / L;
  std::size_t rows_per_batch = rows;
  if (key_mask) {
    require(key_mask->batch() == s[0] && key_mask->max_len == L,
            "softmax_last: mask " + std::to_string(key_mask->batch()) + "x" + std::to_string(key_mask->max_len) +
                " does not match " + s.str());
    rows_per_batch = rows / s[0];
  }
  std::vector<T> out(a.numel(), T(0));
  const T* x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t valid = key_mask ? key_mask->lengths[r / rows_per_batch] : L;
    if (valid == 0) throw ShapeError("softmax_last: row without valid keys");
    const T* xr = x + r * L;
    T* yr = out.data() + r * L;
    const T mx = *std::max_element(xr, xr + valid);
    T z = T(0);
    for (std::size_t j = 0; j < valid; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < valid; ++j) yr[j] /= z;
  }
  return make_result<T>(s, std::move(out), {a}, [rows, L](Node<T>& o) {
    T* g = parent_grad(o, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.value.data() + r * L;
      const T* dy = o.grad.data() + r * L;
      T dot = T(0);
      for (std::size_t j = 0; j < L; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < L; ++j) g[r * L + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> masked_mean(const Tensor<T>& a, const Mask& mask) {
  const Shape& s = a.shape();
  require(s.rank == 3 && s[0] == mask.batch() && s[1] == mask.max_len,
          "masked_mean: input " + s.str() + " does not match mask");
  const std::size_t B = s[0], L = s[1], C = s[2];
  std::vector<T> out(B * C, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t len = mask.lengths[b];
    if (len == 0) throw ShapeError("masked_mean: sequence without valid positions");
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += a.data()[(b * L + t) * C + c];
    for (std::size_t c = 0; c < C; ++c) out[b * C + c] /= static_cast<T>(len);
  }
  return make_result<T>(Shape{B, C}, std::move(out), {a}, [mask, B, L, C](Node<T>& o) {
    T* g = parent_grad(o, 0);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t len = mask.lengths[b];
      const T inv = T(1) / static_cast<T>(len);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t c = 0; c < C; ++c) g[(b * L + t) * C + c] += o.grad[b * C + c] * inv;
    }
  });
}

// --- convolution -----------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d_valid(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  require(sx.rank == 3 && sw.rank == 3 && sw[1] == sx[2], "conv1d_valid: input " + sx.str() + " weight " + sw.str());
  require(bias.shape().rank == 1 && bias.shape()[0] == sw[2], "conv1d_valid: bias shape " + bias.shape().str());
  const std::size_t B = sx[0], L = sx[1], Cin = sx[2], K = sw[0], Cout = sw[2];
  require(L >= K, "conv1d_valid: sequence length " + std::to_string(L) + " shorter than kernel");
  const std::size_t Lo = L - K + 1;

  // W_cat (Cin, K*Cout): block k holds weight[k].
  RMat<T> wcat(Cin, K * Cout);
  for (std::size_t k = 0; k < K; ++k) wcat.middleCols(k * Cout, Cout) = CMapM<T>(weight.data() + k * Cin * Cout, Cin, Cout);
  RMat<T> y = CMapM<T>(x.data(), B * L, Cin) * wcat;  // (B*L, K*Cout)

  std::vector<T> out(B * Lo * Cout);
  const T* bv = bias.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < Lo; ++t) {
      T* dst = out.data() + (b * Lo + t) * Cout;
      for (std::size_t c = 0; c < Cout; ++c) dst[c] = bv[c];
      for (std::size_t k = 0; k < K; ++k) {
        const T* src = y.data() + (b * L + t + k) * (K * Cout) + k * Cout;
        for (std::size_t c = 0; c < Cout; ++c) dst[c] += src[c];
      }
    }

  return make_result<T>(Shape{B, Lo, Cout}, std::move(out), {x, weight, bias}, [B, L, Cin, K, Cout, Lo](Node<T>& o) {
    // dY_cat[b*L + t + k, k*Cout + c] = dOut[b, t, c]
    RMat<T> dy = RMat<T>::Zero(B * L, K * Cout);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < Lo; ++t) {
        const T* src = o.grad.data() + (b * Lo + t) * Cout;
        for (std::size_t k = 0; k < K; ++k) {
          T* dst = dy.data() + (b * L + t + k) * (K * Cout) + k * Cout;
          for (std::size_t c = 0; c < Cout; ++c) dst[c] = src[c];
        }
      }
    if (wants_grad(o, 0)) {
      RMat<T> wcat(Cin, K * Cout);
      const T* w = parent_value(o, 1);
      for (std::size_t k = 0; k < K; ++k) wcat.middleCols(k * Cout, Cout) = CMapM<T>(w + k * Cin * Cout, Cin, Cout);
      MapM<T>(parent_grad(o, 0), B * L, Cin).noalias() += dy * wcat.transpose();
    }
    if (wants_grad(o, 1)) {
      RMat<T> dwcat = CMapM<T>(parent_value(o, 0), B * L, Cin).transpose() * dy;  // (Cin, K*Cout)
      T* gw = parent_grad(o, 1);
      for (std::size_t k = 0; k < K; ++k) MapM<T>(gw + k * Cin * Cout, Cin, Cout) += dwcat.middleCols(k * Cout, Cout);
    }
    if (wants_grad(o, 2)) {
      T* gb = parent_grad(o, 2);
      for (std::size_t r = 0; r < B * Lo; ++r)
        for (std::size_t c = 0; c < Cout; ++c) gb[c] += o.grad[r * Cout + c];
    }
  });
}

// --- normalization -------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm_masked(const Tensor<T>& x, const Mask& mask, const Tensor<T>& gamma, const Tensor<T>& beta,
                            BatchNormState<T>& state, bool training, T momentum, T eps) {
  const Shape& s = x.shape();
  require(s.rank == 3 && s[0] == mask.batch() && s[1] == mask.max_len,
          "batch_norm_masked: input " + s.str() + " does not match mask");
  const std::size_t B = s[0], L = s[1], C = s[2];
  require(gamma.numel() == C && beta.numel() == C && state.running_mean.size() == C && state.running_var.size() == C,
          "batch_norm_masked: channel count mismatch");
  const std::size_t count = mask.total_valid();
  const T* xv = x.data();

  std::vector<T> mu(C, T(0)), var(C, T(0));
  if (training) {
    if (count < 2) throw std::invalid_argument("batch_norm_masked: training needs at least 2 valid positions");
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < mask.lengths[b]; ++t)
        for (std::size_t c = 0; c < C; ++c) mu[c] += xv[(b * L + t) * C + c];
    for (std::size_t c = 0; c < C; ++c) mu[c] /= static_cast<T>(count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < mask.lengths[b]; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          const T d = xv[(b * L + t) * C + c] - mu[c];
          var[c] += d * d;
        }
    for (std::size_t c = 0; c < C; ++c) {
      const T biased = var[c] / static_cast<T>(count);
      const T unbiased = var[c] / static_cast<T>(count - 1);
      state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * mu[c];
      state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * unbiased;
      var[c] = biased;
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }
  std::vector<T> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);

  std::vector<T> xhat(B * L * C, T(0));
  std::vector<T> out(B * L * C, T(0));
  const T* g = gamma.data();
  const T* be = beta.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < mask.lengths[b]; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (b * L + t) * C + c;
        xhat[i] = (xv[i] - mu[c]) * inv_std[c];
        out[i] = g[c] * xhat[i] + be[c];
      }

  return make_result<T>(s, std::move(out), {x, gamma, beta},
                        [mask, B, L, C, count, training, inv_std, xhat = std::move(xhat)](Node<T>& o) {
                          const T* dy = o.grad.data();
                          const T* gm = parent_value(o, 1);
                          std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t t = 0; t < mask.lengths[b]; ++t)
                              for (std::size_t c = 0; c < C; ++c) {
                                const std::size_t i = (b * L + t) * C + c;
                                sum_dy[c] += dy[i];
                                sum_dy_xhat[c] += dy[i] * xhat[i];
                              }
                          if (wants_grad(o, 1)) {
                            T* gg = parent_grad(o, 1);
                            for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[c];
                          }
                          if (wants_grad(o, 2)) {
                            T* gb = parent_grad(o, 2);
                            for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
                          }
                          if (wants_grad(o, 0)) {
                            T* gx = parent_grad(o, 0);
                            const T inv_n = T(1) / static_cast<T>(count);
                            for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t t = 0; t < mask.lengths[b]; ++t)
                                for (std::size_t c = 0; c < C; ++c) {
                                  const std::size_t i = (b * L + t) * C + c;
                                  if (training) {
                                    gx[i] += gm[c] * inv_std[c] *
                                             (dy[i] - inv_n * sum_dy[c] - xhat[i] * inv_n * sum_dy_xhat[c]);
                                  } else {
                                    gx[i] += gm[c] * inv_std[c] * dy[i];
                                  }
                                }
                          }
                        });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  const std::size_t D = x.shape().back();
  require(D >= 1 && gain.numel() == D, "rms_norm: gain size " + std::to_string(gain.numel()) + " vs width " + std::to_string(D));
  const std::size_t rows = x.numel() / D;
  std::vector<T> inv_rms(rows);
  std::vector<T> out(x.numel());
  const T* xv = x.data();
  const T* g = gain.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ms = T(0);
    for (std::size_t i = 0; i < D; ++i) ms += xv[r * D + i] * xv[r * D + i];
    inv_rms[r] = T(1) / std::sqrt(ms / static_cast<T>(D) + eps);
    for (std::size_t i = 0; i < D; ++i) out[r * D + i] = xv[r * D + i] * inv_rms[r] * g[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain}, [rows, D, inv_rms = std::move(inv_rms)](Node<T>& o) {
    const T* xv = parent_value(o, 0);
    const T* g = parent_value(o, 1);
    const T* dy = o.grad.data();
    const bool gx = wants_grad(o, 0), gg = wants_grad(o, 1);
    T* dx = gx ? parent_grad(o, 0) : nullptr;
    T* dg = gg ? parent_grad(o, 1) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const T ir = inv_rms[r];
      const T* xr = xv + r * D;
      const T* dyr = dy + r * D;
      if (gg)
        for (std::size_t i = 0; i < D; ++i) dg[i] += dyr[i] * xr[i] * ir;
      if (gx) {
        T dot = T(0);
        for (std::size_t i = 0; i < D; ++i) dot += g[i] * dyr[i] * xr[i];
        const T coef = dot * ir * ir * ir / static_cast<T>(D);
        for (std::size_t i = 0; i < D; ++i) dx[r * D + i] += ir * g[i] * dyr[i] - xr[i] * coef;
      }
    }
  });
}

template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, std::span<const std::size_t> positions, double base) {
  const Shape& s = x.shape();
  require(s.rank >= 2, "rope_rotate needs rank >= 2");
  const std::size_t D = s.back();
  const std::size_t L = s[s.rank - 2];
  if (D % 2 != 0) throw ShapeError("rope_rotate: head dimension " + std::to_string(D) + " is odd");
  require(positions.size() == L, "rope_rotate: one position per row required");
  const std::size_t half = D / 2;
  std::vector<T> cs(L * half), sn(L * half);
  for (std::size_t p = 0; p < L; ++p)
    for (std::size_t t = 0; t < half; ++t) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(D));
      const double ang = static_cast<double>(positions[p]) * theta;
      cs[p * half + t] = static_cast<T>(std::cos(ang));
      sn[p * half + t] = static_cast<T>(std::sin(ang));
    }
  const std::size_t groups = x.numel() / (L * D);
  std::vector<T> out(x.numel());
  const T* xv = x.data();
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t p = 0; p < L; ++p)
      for (std::size_t t = 0; t < half; ++t) {
        const std::size_t i = (gi * L + p) * D + 2 * t;
        const T c = cs[p * half + t], sv = sn[p * half + t];
        out[i] = xv[i] * c - xv[i + 1] * sv;
        out[i + 1] = xv[i] * sv + xv[i + 1] * c;
      }
  return make_result<T>(s, std::move(out), {x}, [groups, L, D, half, cs = std::move(cs), sn = std::move(sn)](Node<T>& o) {
    T* g = parent_grad(o, 0);
    const T* dy = o.grad.data();
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t p = 0; p < L; ++p)
        for (std::size_t t = 0; t < half; ++t) {
          const std::size_t i = (gi * L + p) * D + 2 * t;
          const T c = cs[p * half + t], sv = sn[p * half + t];
          g[i] += dy[i] * c + dy[i + 1] * sv;
          g[i + 1] += -dy[i] * sv + dy[i + 1] * c;
        }
  });
}

template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, double base) {
  const Shape& s = x.shape();
  require(s.rank >= 2, "rope_rotate needs rank >= 2");
  std::vector<std::size_t> pos(s[s.rank - 2]);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  return rope_rotate(x, std::span<const std::size_t>(pos), base);
}

// --- backward ------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) throw ShapeError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order)
    if (!n->parents.empty()) n->grad.assign(n->value.size(), T(0));
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// --- gradient check -------------------------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor<double>()>& program, std::vector<Tensor<double>> params,
                           double h, std::size_t max_coords, std::uint64_t seed, double floor) {
  for (auto& p : params) p.zero_grad();
  {
    Tensor<double> out = program();
    backward(out);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult res;
  std::mt19937_64 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_value();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t idx : coords) {
      const double orig = values[idx];
      values[idx] = orig + h;
      const double fp = program().item();
      values[idx] = orig - h;
      const double fm = program().item();
      values[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][idx];
      const double rel = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      ++res.coords_checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = pi;
        res.worst_index = idx;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

// --- explicit instantiations ------------------------------------------------------------------

#define TSMINI_AD_INSTANTIATE(T)                                                                              \
  template class Tensor<T>;                                                                                   \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, const std::vector<Tensor<T>>&,                     \
                                    std::function<void(Node<T>&)>);                                           \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, std::initializer_list<Tensor<T>>,                  \
                                    std::function<void(Node<T>&)>);                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                              \
  template Tensor<T> concat_last(const std::vector<Tensor<T>>&);                                              \
  template Tensor<T> slice_last(const Tensor<T>&, std::size_t, std::size_t);                                  \
  template Tensor<T> transpose_last2(const Tensor<T>&);                                                       \
  template Tensor<T> exp(const Tensor<T>&);                                                                   \
  template Tensor<T> log2(const Tensor<T>&);                                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                               \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                         \
  template Tensor<T> silu(const Tensor<T>&);                                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                                  \
  template Tensor<T> softmax_last(const Tensor<T>&, const Mask*);                                             \
  template Tensor<T> masked_mean(const Tensor<T>&, const Mask&);                                              \
  template Tensor<T> conv1d_valid(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> batch_norm_masked(const Tensor<T>&, const Mask&, const Tensor<T>&, const Tensor<T>&,     \
                                       BatchNormState<T>&, bool, T, T);                                       \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, T);                                         \
  template Tensor<T> rope_rotate(const Tensor<T>&, std::span<const std::size_t>, double);                     \
  template Tensor<T> rope_rotate(const Tensor<T>&, double);                                                   \
  template void backward(const Tensor<T>&);

TSMINI_AD_INSTANTIATE(float)
TSMINI_AD_INSTANTIATE(double)

#undef TSMINI_AD_INSTANTIATE

}  // namespace tsmini::ad
