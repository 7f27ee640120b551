#include "pfedcr/layers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <type_traits>
#include <vector>

#include <fmt/format.h>

#include "pfedcr/errors.hpp"
#include "pfedcr/gemm.hpp"

namespace pfedcr {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw config_error(msg);
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Branch-free expf (argument split against log 2, degree-5 polynomial, exponent
// bit assembly). Every element runs the same operation chain, so scalar and
// autovectorized code agree bitwise; exp(0) == 1 exactly.
inline float fast_exp(float x) {
  x = __builtin_fminf(88.72283f, __builtin_fmaxf(-87.33654f, x));
  // Round to nearest via the 2^23 shift; |x * log2 e| stays far below 2^22.
  const float z = (1.44269504f * x + 12582912.0f) - 12582912.0f;
  x -= z * 0.693359375f;
  x -= z * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * x + 1.3981999507e-3f;
  p = p * x + 8.3334519073e-3f;
  p = p * x + 4.1665795894e-2f;
  p = p * x + 1.6666665459e-1f;
  p = p * x + 5.0000001201e-1f;
  p = p * x * x + x + 1.0f;
  const std::int32_t bits =
      std::bit_cast<std::int32_t>(p) + (static_cast<std::int32_t>(z) << 23);
  return std::bit_cast<float>(bits);
}

inline float fast_sigmoid(float x) { return 1.0f / (1.0f + fast_exp(-x)); }

inline float fast_tanh(float x) { return 1.0f - 2.0f / (fast_exp(2.0f * x) + 1.0f); }

// Recurrent gate activations: float runs the vectorizable approximation, double
// stays on libm so finite-difference checks see full precision.
template <typename T>
T gate_sigmoid(T x) {
  if constexpr (std::is_same_v<T, float>)
    return fast_sigmoid(x);
  else
    return sigmoid(x);
}

template <typename T>
T gate_tanh(T x) {
  if constexpr (std::is_same_v<T, float>)
    return fast_tanh(x);
  else
    return std::tanh(x);
}

// Strided eight-lane accumulation; the fixed lane grouping keeps sums
// reproducible while letting the compiler vectorize the reduction.
template <typename T>
T lane_sum(const T* p, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += p[i + l];
  for (std::size_t l = 0; i + l < n; ++l) acc[l] += p[i + l];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
T lane_dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  for (std::size_t l = 0; i + l < n; ++l) acc[l] += a[i + l] * b[i + l];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// Row kernels take restrict-qualified parameters; the vectorizer ignores
// restrict on locals, so the hot loops live in standalone functions.
template <typename T>
void pool22_backward_row(const T* __restrict r0, const T* __restrict r1,
                         const T* __restrict grow, int out_w, T* __restrict g0,
                         std::size_t row_stride) {
  // Windows are disjoint and the gradient is pre-zeroed, so each window needs
  // one store to the first maximal cell in row-major order. Eager & keeps the
  // selection branch-free.
  for (int ox = 0; ox < out_w; ++ox) {
    const T a = r0[2 * ox], b = r0[2 * ox + 1];
    const T c = r1[2 * ox], d = r1[2 * ox + 1];
    const bool s0 = (a >= b) & (a >= c) & (a >= d);
    const bool s1 = (b >= c) & (b >= d);
    const bool s2 = c >= d;
    const int id = s0 ? 0 : (s1 ? 1 : (s2 ? 2 : 3));
    g0[std::size_t(id >> 1) * row_stride + 2 * ox + (id & 1)] = grow[ox];
  }
}

template <typename T>
void pool21_backward_row(const T* __restrict r0, const T* __restrict r1,
                         const T* __restrict grow, int out_w, T* __restrict g0,
                         T* __restrict g1) {
  for (int ox = 0; ox < out_w; ++ox) {
    const bool top = r0[ox] >= r1[ox];
    g0[ox] = top ? grow[ox] : T(0);
    g1[ox] = top ? T(0) : grow[ox];
  }
}

template <typename T>
void pool22_forward_row(const T* __restrict r0, const T* __restrict r1, int out_w,
                        T* __restrict orow) {
  for (int ox = 0; ox < out_w; ++ox) {
    const T top = std::max(r0[2 * ox], r0[2 * ox + 1]);
    const T bot = std::max(r1[2 * ox], r1[2 * ox + 1]);
    orow[ox] = std::max(top, bot);
  }
}

template <typename T>
void gru_gate_forward_row(const T* __restrict gx, const T* __restrict gh,
                          const T* __restrict hp, int hidden, T* __restrict g,
                          T* __restrict pre, T* __restrict hn) {
  for (int d = 0; d < hidden; ++d) {
    const T r = gate_sigmoid(gx[d] + gh[d]);
    const T zg = gate_sigmoid(gx[hidden + d] + gh[hidden + d]);
    const T ghn = gh[2 * hidden + d];
    const T n = gate_tanh(gx[2 * hidden + d] + r * ghn);
    g[d] = r;
    g[hidden + d] = zg;
    g[2 * hidden + d] = n;
    pre[d] = ghn;
    hn[d] = (T(1) - zg) * n + zg * hp[d];
  }
}

template <typename T>
void gru_gate_backward_row(const T* __restrict gout, const T* __restrict g,
                           const T* __restrict pre, const T* __restrict hp, int hidden,
                           T* __restrict dgx, T* __restrict dgh_b, T* __restrict dhb) {
  for (int d = 0; d < hidden; ++d) {
    const T total = dhb[d] + gout[d];
    const T r = g[d], zg = g[hidden + d], n = g[2 * hidden + d];
    const T dz = total * (hp[d] - n);
    const T dn = total * (T(1) - zg);
    const T dgxn = dn * (T(1) - n * n);
    const T dr = dgxn * pre[d];
    const T dgxr = dr * r * (T(1) - r);
    const T dgxz = dz * zg * (T(1) - zg);
    dgx[d] = dgxr;
    dgx[hidden + d] = dgxz;
    dgx[2 * hidden + d] = dgxn;
    dgh_b[d] = dgxr;
    dgh_b[hidden + d] = dgxz;
    dgh_b[2 * hidden + d] = dgxn * r;
    dhb[d] = total * zg;  // first half of dh_prev; matmul term added by caller
  }
}

/// cols[(cin*kh+ky)*kw+kx][oh*out_w+ow] = padded input patch value.
template <typename T>
void im2col(const T* input, int channels, int height, int width, int kernel_h,
            int kernel_w, int stride, int padding, int out_h, int out_w, T* cols) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel_h; ++ky) {
      for (int kx = 0; kx < kernel_w; ++kx) {
        T* row = cols + (static_cast<std::size_t>((c * kernel_h + ky) * kernel_w + kx)) *
                            (static_cast<std::size_t>(out_h) * out_w);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= height) {
            for (int ox = 0; ox < out_w; ++ox) row[oy * out_w + ox] = T(0);
            continue;
          }
          const T* src = input + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - padding + kx;
            row[oy * out_w + ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Scatter-add transpose of im2col.
template <typename T>
void col2im(const T* cols, int channels, int height, int width, int kernel_h,
            int kernel_w, int stride, int padding, int out_h, int out_w, T* grad) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel_h; ++ky) {
      for (int kx = 0; kx < kernel_w; ++kx) {
        const T* row = cols + (static_cast<std::size_t>((c * kernel_h + ky) * kernel_w + kx)) *
                                  (static_cast<std::size_t>(out_h) * out_w);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= height) continue;
          T* dst = grad + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < width) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void add_row_bias(T* rows, int n_rows, const T* bias, int n_cols) {
  for (int i = 0; i < n_rows; ++i)
    for (int j = 0; j < n_cols; ++j) rows[static_cast<std::size_t>(i) * n_cols + j] += bias[j];
}

template <typename T>
void accumulate_col_sums(const T* rows, int n_rows, int n_cols, T* out) {
  for (int i = 0; i < n_rows; ++i)
    for (int j = 0; j < n_cols; ++j) out[j] += rows[static_cast<std::size_t>(i) * n_cols + j];
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int batch, in_c, in_h, in_w;
  int out_c, kernel_h, kernel_w;
  int out_h, out_w;
  std::size_t patch;   // in_c * kernel_h * kernel_w
  std::size_t pixels;  // out_h * out_w
};

template <typename T>
ConvDims conv_dims(const TensorT<T>& input, const TensorT<T>& weight,
                   const TensorT<T>* bias, int stride, int padding) {
  require(input.rank() == 4, "conv2d: input must be rank 4");
  require(weight.rank() == 4, "conv2d: weight must be rank 4");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(padding >= 0, "conv2d: padding must be >= 0");
  ConvDims d;
  d.batch = input.shape[0];
  d.in_c = input.shape[1];
  d.in_h = input.shape[2];
  d.in_w = input.shape[3];
  d.out_c = weight.shape[0];
  d.kernel_h = weight.shape[2];
  d.kernel_w = weight.shape[3];
  require(weight.shape[1] == d.in_c,
          fmt::format("conv2d: weight expects {} input channels, got {}", weight.shape[1],
                      d.in_c));
  if (bias != nullptr)
    require(bias->rank() == 1 && bias->shape[0] == d.out_c, "conv2d: bias shape mismatch");
  const int span_h = d.in_h + 2 * padding - d.kernel_h;
  const int span_w = d.in_w + 2 * padding - d.kernel_w;
  require(span_h >= 0 && span_w >= 0,
          fmt::format("conv2d: kernel {}x{} exceeds padded input {}x{}", d.kernel_h,
                      d.kernel_w, d.in_h + 2 * padding, d.in_w + 2 * padding));
  d.out_h = span_h / stride + 1;
  d.out_w = span_w / stride + 1;
  d.patch = static_cast<std::size_t>(d.in_c) * d.kernel_h * d.kernel_w;
  d.pixels = static_cast<std::size_t>(d.out_h) * d.out_w;
  return d;
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>& bias, int stride, int padding) {
  const ConvDims d = conv_dims(input, weight, &bias, stride, padding);
  TensorT<T> out = TensorT<T>::zeros({d.batch, d.out_c, d.out_h, d.out_w});
  std::vector<T> cols(d.patch * d.pixels);
  const std::size_t in_stride = static_cast<std::size_t>(d.in_c) * d.in_h * d.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(d.out_c) * d.pixels;
  for (int b = 0; b < d.batch; ++b) {
    im2col(input.data.data() + b * in_stride, d.in_c, d.in_h, d.in_w, d.kernel_h,
           d.kernel_w, stride, padding, d.out_h, d.out_w, cols.data());
    T* dst = out.data.data() + b * out_stride;
    detail::gemm_nn(d.out_c, static_cast<int>(d.pixels), static_cast<int>(d.patch),
                    weight.data.data(), cols.data(), dst, false);
    for (int c = 0; c < d.out_c; ++c) {
      const T bv = bias.data[c];
      T* row = dst + c * d.pixels;
      for (std::size_t p = 0; p < d.pixels; ++p) row[p] += bv;
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& input, const TensorT<T>& weight, int stride,
                     int padding, const TensorT<T>& grad_out, TensorT<T>* grad_input,
                     TensorT<T>* grad_weight, TensorT<T>* grad_bias) {
  const ConvDims d =
      conv_dims(input, weight, static_cast<const TensorT<T>*>(nullptr), stride, padding);
  require(grad_out.rank() == 4 && grad_out.shape[0] == d.batch &&
              grad_out.shape[1] == d.out_c && grad_out.shape[2] == d.out_h &&
              grad_out.shape[3] == d.out_w,
          "conv2d: grad_out shape mismatch");
  if (grad_input != nullptr) {
    require(grad_input->same_shape(input), "conv2d: grad_input shape mismatch");
    std::fill(grad_input->data.begin(), grad_input->data.end(), T(0));
  }
  if (grad_weight != nullptr)
    require(grad_weight->same_shape(weight), "conv2d: grad_weight shape mismatch");
  if (grad_bias != nullptr)
    require(grad_bias->rank() == 1 && grad_bias->shape[0] == d.out_c,
            "conv2d: grad_bias shape mismatch");

  const std::size_t in_stride = static_cast<std::size_t>(d.in_c) * d.in_h * d.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(d.out_c) * d.pixels;
  std::vector<T> cols(d.patch * d.pixels);
  std::vector<T> dcols;
  if (grad_input != nullptr) dcols.resize(d.patch * d.pixels);

  for (int b = 0; b < d.batch; ++b) {
    const T* gout = grad_out.data.data() + b * out_stride;
    if (grad_bias != nullptr)
      for (int c = 0; c < d.out_c; ++c)
        grad_bias->data[c] += lane_sum(gout + c * d.pixels, d.pixels);
    if (grad_weight != nullptr) {
      im2col(input.data.data() + b * in_stride, d.in_c, d.in_h, d.in_w, d.kernel_h,
             d.kernel_w, stride, padding, d.out_h, d.out_w, cols.data());
      detail::gemm_nt(d.out_c, static_cast<int>(d.patch), static_cast<int>(d.pixels), gout,
                      cols.data(), grad_weight->data.data(), true);
    }
    if (grad_input != nullptr) {
      detail::gemm_tn(static_cast<int>(d.patch), static_cast<int>(d.pixels), d.out_c,
                      weight.data.data(), gout, dcols.data(), false);
      col2im(dcols.data(), d.in_c, d.in_h, d.in_w, d.kernel_h, d.kernel_w, stride, padding,
             d.out_h, d.out_w, grad_input->data.data() + b * in_stride);
    }
  }
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> maxpool2d_forward(const TensorT<T>& input, int pool_h, int pool_w) {
  require(input.rank() == 4, "maxpool2d: input must be rank 4");
  require(pool_h >= 1 && pool_w >= 1, "maxpool2d: pool dims must be >= 1");
  const int batch = input.shape[0], channels = input.shape[1];
  const int height = input.shape[2], width = input.shape[3];
  require(height % pool_h == 0 && width % pool_w == 0,
          fmt::format("maxpool2d: input {}x{} not divisible by pool {}x{}", height, width,
                      pool_h, pool_w));
  const int out_h = height / pool_h, out_w = width / pool_w;
  TensorT<T> out = TensorT<T>::zeros({batch, channels, out_h, out_w});
  const std::size_t planes = std::size_t(batch) * channels;
  const std::size_t in_plane = std::size_t(height) * width;
  const std::size_t out_plane = std::size_t(out_h) * out_w;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = input.data.data() + p * in_plane;
    T* dst = out.data.data() + p * out_plane;
    for (int oy = 0; oy < out_h; ++oy) {
      const T* r0 = in + std::size_t(oy) * pool_h * width;
      T* orow = dst + std::size_t(oy) * out_w;
      if (pool_h == 2 && pool_w == 2) {
        pool22_forward_row(r0, r0 + width, out_w, orow);
      } else if (pool_h == 2 && pool_w == 1) {
        const T* r1 = r0 + width;
        for (int ox = 0; ox < out_w; ++ox) orow[ox] = std::max(r0[ox], r1[ox]);
      } else {
        for (int ox = 0; ox < out_w; ++ox) {
          T best = r0[ox * pool_w];
          for (int py = 0; py < pool_h; ++py)
            for (int px = 0; px < pool_w; ++px)
              best = std::max(best, r0[std::size_t(py) * width + ox * pool_w + px]);
          orow[ox] = best;
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> maxpool2d_backward(const TensorT<T>& input, int pool_h, int pool_w,
                              const TensorT<T>& grad_out) {
  const int batch = input.shape[0], channels = input.shape[1];
  const int height = input.shape[2], width = input.shape[3];
  const int out_h = height / pool_h, out_w = width / pool_w;
  require(grad_out.rank() == 4 && grad_out.shape[0] == batch &&
              grad_out.shape[1] == channels && grad_out.shape[2] == out_h &&
              grad_out.shape[3] == out_w,
          "maxpool2d: grad_out shape mismatch");
  TensorT<T> grad = TensorT<T>::zeros(input.shape);
  const std::size_t planes = std::size_t(batch) * channels;
  const std::size_t in_plane = std::size_t(height) * width;
  const std::size_t out_plane = std::size_t(out_h) * out_w;
  // Ties route to the first maximal cell in row-major window order.
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = input.data.data() + p * in_plane;
    T* gin = grad.data.data() + p * in_plane;
    const T* gout = grad_out.data.data() + p * out_plane;
    for (int oy = 0; oy < out_h; ++oy) {
      const T* r0 = in + std::size_t(oy) * pool_h * width;
      T* g0 = gin + std::size_t(oy) * pool_h * width;
      const T* grow = gout + std::size_t(oy) * out_w;
      if (pool_h == 2 && pool_w == 2) {
        pool22_backward_row(r0, r0 + width, grow, out_w, g0, std::size_t(width));
      } else if (pool_h == 2 && pool_w == 1) {
        pool21_backward_row(r0, r0 + width, grow, out_w, g0, g0 + width);
      } else {
        for (int ox = 0; ox < out_w; ++ox) {
          std::size_t best = std::size_t(ox) * pool_w;
          for (int py = 0; py < pool_h; ++py)
            for (int px = 0; px < pool_w; ++px) {
              const std::size_t idx = std::size_t(py) * width + ox * pool_w + px;
              if (r0[idx] > r0[best]) best = idx;
            }
          g0[best] += grow[ox];
        }
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>& bias) {
  require(input.rank() == 2 && weight.rank() == 2 && bias.rank() == 1,
          "linear: expected rank-2 input/weight and rank-1 bias");
  const int n = input.shape[0], d_in = input.shape[1];
  const int d_out = weight.shape[0];
  require(weight.shape[1] == d_in,
          fmt::format("linear: weight expects {} features, got {}", weight.shape[1], d_in));
  require(bias.shape[0] == d_out, "linear: bias shape mismatch");
  TensorT<T> out = TensorT<T>::zeros({n, d_out});
  detail::gemm_nt(n, d_out, d_in, input.data.data(), weight.data.data(), out.data.data(),
                  false);
  add_row_bias(out.data.data(), n, bias.data.data(), d_out);
  return out;
}

template <typename T>
void linear_backward(const TensorT<T>& input, const TensorT<T>& weight,
                     const TensorT<T>& grad_out, TensorT<T>* grad_input,
                     TensorT<T>* grad_weight, TensorT<T>* grad_bias) {
  const int n = input.shape[0], d_in = input.shape[1];
  const int d_out = weight.shape[0];
  require(grad_out.rank() == 2 && grad_out.shape[0] == n && grad_out.shape[1] == d_out,
          "linear: grad_out shape mismatch");
  if (grad_input != nullptr) {
    require(grad_input->same_shape(input), "linear: grad_input shape mismatch");
    detail::gemm_nn(n, d_in, d_out, grad_out.data.data(), weight.data.data(),
                    grad_input->data.data(), false);
  }
  if (grad_weight != nullptr) {
    require(grad_weight->same_shape(weight), "linear: grad_weight shape mismatch");
    detail::gemm_tn(d_out, d_in, n, grad_out.data.data(), input.data.data(),
                    grad_weight->data.data(), true);
  }
  if (grad_bias != nullptr) {
    require(grad_bias->rank() == 1 && grad_bias->shape[0] == d_out,
            "linear: grad_bias shape mismatch");
    accumulate_col_sums(grad_out.data.data(), n, d_out, grad_bias->data.data());
  }
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <typename T>
void relu_inplace(TensorT<T>& x) {
  for (T& v : x.data)
    if (v < T(0)) v = T(0);
}

template <typename T>
void relu_backward_inplace(const TensorT<T>& activated, TensorT<T>& grad) {
  require(grad.same_shape(activated), "relu: grad shape mismatch");
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (activated.data[i] <= T(0)) grad.data[i] = T(0);
}

// ---------------------------------------------------------------------------
// eca
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void eca_check(const TensorT<T>& z, const TensorT<T>& kernel) {
  require(z.rank() == 4, "eca: input must be rank 4");
  require(kernel.rank() == 1, "eca: kernel must be rank 1");
  require(kernel.shape[0] % 2 == 1,
          fmt::format("eca: kernel length {} must be odd", kernel.shape[0]));
}

/// Per-sample channel descriptor: squeeze, channel mix, gate.
template <typename T>
void eca_gate(const T* z, int channels, std::size_t plane, const TensorT<T>& kernel,
              T* squeezed, T* mixed, T* gate) {
  const int half = (kernel.shape[0] - 1) / 2;
  for (int c = 0; c < channels; ++c)
    squeezed[c] = lane_sum(z + static_cast<std::size_t>(c) * plane, plane) /
                  static_cast<T>(plane);
  for (int c = 0; c < channels; ++c) {
    T acc = T(0);
    for (int j = -half; j <= half; ++j) {
      const int cc = c + j;
      if (cc >= 0 && cc < channels) acc += kernel.data[half + j] * squeezed[cc];
    }
    mixed[c] = acc;
    gate[c] = sigmoid(acc);
  }
}

}  // namespace

template <typename T>
TensorT<T> eca_forward(const TensorT<T>& z, const TensorT<T>& kernel) {
  eca_check(z, kernel);
  const int batch = z.shape[0], channels = z.shape[1];
  const std::size_t plane = static_cast<std::size_t>(z.shape[2]) * z.shape[3];
  TensorT<T> out = TensorT<T>::zeros(z.shape);
  std::vector<T> squeezed(channels), mixed(channels), gate(channels);
  const std::size_t sample = static_cast<std::size_t>(channels) * plane;
  for (int b = 0; b < batch; ++b) {
    const T* src = z.data.data() + b * sample;
    T* dst = out.data.data() + b * sample;
    eca_gate(src, channels, plane, kernel, squeezed.data(), mixed.data(), gate.data());
    for (int c = 0; c < channels; ++c) {
      const T a = gate[c];
      for (std::size_t p = 0; p < plane; ++p)
        dst[c * plane + p] = src[c * plane + p] * a;
    }
  }
  return out;
}

template <typename T>
void eca_backward(const TensorT<T>& z, const TensorT<T>& kernel,
                  const TensorT<T>& grad_out, TensorT<T>* grad_z,
                  TensorT<T>* grad_kernel) {
  eca_check(z, kernel);
  require(grad_out.same_shape(z), "eca: grad_out shape mismatch");
  const int batch = z.shape[0], channels = z.shape[1];
  const std::size_t plane = static_cast<std::size_t>(z.shape[2]) * z.shape[3];
  const int half = (kernel.shape[0] - 1) / 2;
  if (grad_z != nullptr) {
    require(grad_z->same_shape(z), "eca: grad_z shape mismatch");
    std::fill(grad_z->data.begin(), grad_z->data.end(), T(0));
  }
  if (grad_kernel != nullptr)
    require(grad_kernel->same_shape(kernel), "eca: grad_kernel shape mismatch");

  std::vector<T> squeezed(channels), mixed(channels), gate(channels);
  std::vector<T> dgate(channels), dmixed(channels), dsqueezed(channels);
  const std::size_t sample = static_cast<std::size_t>(channels) * plane;
  for (int b = 0; b < batch; ++b) {
    const T* src = z.data.data() + b * sample;
    const T* gout = grad_out.data.data() + b * sample;
    eca_gate(src, channels, plane, kernel, squeezed.data(), mixed.data(), gate.data());
    for (int c = 0; c < channels; ++c) {
      const T acc = lane_dot(gout + c * plane, src + c * plane, plane);
      dgate[c] = acc;
      dmixed[c] = acc * gate[c] * (T(1) - gate[c]);
    }
    if (grad_kernel != nullptr)
      for (int j = -half; j <= half; ++j) {
        T acc = T(0);
        for (int c = 0; c < channels; ++c) {
          const int cc = c + j;
          if (cc >= 0 && cc < channels) acc += dmixed[c] * squeezed[cc];
        }
        grad_kernel->data[half + j] += acc;
      }
    if (grad_z != nullptr) {
      for (int c = 0; c < channels; ++c) {
        T acc = T(0);
        for (int j = -half; j <= half; ++j) {
          const int cm = c - j;
          if (cm >= 0 && cm < channels) acc += kernel.data[half + j] * dmixed[cm];
        }
        dsqueezed[c] = acc / static_cast<T>(plane);
      }
      T* gz = grad_z->data.data() + b * sample;
      for (int c = 0; c < channels; ++c) {
        const T a = gate[c], ds = dsqueezed[c];
        for (std::size_t p = 0; p < plane; ++p)
          gz[c * plane + p] = gout[c * plane + p] * a + ds;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// bigru
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void gru_check(const TensorT<T>& input, const GruDirView<T>& p, const char* which) {
  require(input.rank() == 3, "bigru: input must be rank 3");
  const int d_in = input.shape[2];
  require(p.w_x.rank() == 2 && p.w_h.rank() == 2 && p.b_x.rank() == 1 && p.b_h.rank() == 1,
          fmt::format("bigru[{}]: parameter rank mismatch", which));
  const int hidden = p.w_h.shape[1];
  require(p.w_h.shape[0] == 3 * hidden && p.w_x.shape[0] == 3 * hidden &&
              p.w_x.shape[1] == d_in && p.b_x.shape[0] == 3 * hidden &&
              p.b_h.shape[0] == 3 * hidden,
          fmt::format("bigru[{}]: parameter shape mismatch", which));
}

/// One direction; when reverse, step s consumes input frame T-1-s.
template <typename T>
void gru_dir_forward(const TensorT<T>& input, const GruDirView<T>& p, bool reverse,
                     TensorT<T>& h, TensorT<T>& gates, TensorT<T>& hpre) {
  const int steps = input.shape[0], batch = input.shape[1], d_in = input.shape[2];
  const int hidden = p.w_h.shape[1];
  const int rows = steps * batch;
  h = TensorT<T>::zeros({steps + 1, batch, hidden});
  gates = TensorT<T>::zeros({steps, batch, 3 * hidden});
  hpre = TensorT<T>::zeros({steps, batch, hidden});

  std::vector<T> xproj(static_cast<std::size_t>(rows) * 3 * hidden);
  detail::gemm_nt(rows, 3 * hidden, d_in, input.data.data(), p.w_x.data.data(),
                  xproj.data(), false);
  add_row_bias(xproj.data(), rows, p.b_x.data.data(), 3 * hidden);

  std::vector<T> hproj(static_cast<std::size_t>(batch) * 3 * hidden);
  for (int s = 0; s < steps; ++s) {
    const int frame = reverse ? steps - 1 - s : s;
    const T* h_prev = h.data.data() + static_cast<std::size_t>(s) * batch * hidden;
    T* h_next = h.data.data() + static_cast<std::size_t>(s + 1) * batch * hidden;
    detail::gemm_nt(batch, 3 * hidden, hidden, h_prev, p.w_h.data.data(), hproj.data(),
                    false);
    add_row_bias(hproj.data(), batch, p.b_h.data.data(), 3 * hidden);
    for (int b = 0; b < batch; ++b)
      gru_gate_forward_row(
          xproj.data() + (static_cast<std::size_t>(frame) * batch + b) * 3 * hidden,
          hproj.data() + static_cast<std::size_t>(b) * 3 * hidden,
          h_prev + static_cast<std::size_t>(b) * hidden, hidden,
          gates.data.data() + (static_cast<std::size_t>(s) * batch + b) * 3 * hidden,
          hpre.data.data() + (static_cast<std::size_t>(s) * batch + b) * hidden,
          h_next + static_cast<std::size_t>(b) * hidden);
  }
}

/// grad_out slice for this direction: columns [offset, offset+hidden) of the
/// [steps,batch,2*hidden] output gradient, time-mapped per direction.
template <typename T>
void gru_dir_backward(const TensorT<T>& input, const GruDirView<T>& p, bool reverse,
                      const TensorT<T>& h, const TensorT<T>& gates, const TensorT<T>& hpre,
                      const TensorT<T>& grad_out, int offset, TensorT<T>* grad_input,
                      const GruDirGrads<T>& grads) {
  const int steps = input.shape[0], batch = input.shape[1], d_in = input.shape[2];
  const int hidden = p.w_h.shape[1];
  const int rows = steps * batch;

  std::vector<T> dh(static_cast<std::size_t>(batch) * hidden, T(0));
  std::vector<T> dgx_all(static_cast<std::size_t>(rows) * 3 * hidden);
  std::vector<T> dgh(static_cast<std::size_t>(batch) * 3 * hidden);
  std::vector<T> dh_prev(static_cast<std::size_t>(batch) * hidden);

  for (int s = steps - 1; s >= 0; --s) {
    const int frame = reverse ? steps - 1 - s : s;
    const T* h_prev = h.data.data() + static_cast<std::size_t>(s) * batch * hidden;
    for (int b = 0; b < batch; ++b)
      gru_gate_backward_row(
          grad_out.data.data() +
              (static_cast<std::size_t>(frame) * batch + b) * 2 * hidden + offset,
          gates.data.data() + (static_cast<std::size_t>(s) * batch + b) * 3 * hidden,
          hpre.data.data() + (static_cast<std::size_t>(s) * batch + b) * hidden,
          h_prev + static_cast<std::size_t>(b) * hidden, hidden,
          dgx_all.data() + (static_cast<std::size_t>(frame) * batch + b) * 3 * hidden,
          dgh.data() + static_cast<std::size_t>(b) * 3 * hidden,
          dh.data() + static_cast<std::size_t>(b) * hidden);
    if (grads.w_h != nullptr)
      detail::gemm_tn(3 * hidden, hidden, batch, dgh.data(), h_prev,
                      grads.w_h->data.data(), true);
    if (grads.b_h != nullptr)
      accumulate_col_sums(dgh.data(), batch, 3 * hidden, grads.b_h->data.data());
    detail::gemm_nn(batch, hidden, 3 * hidden, dgh.data(), p.w_h.data.data(),
                    dh_prev.data(), false);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_prev[i];
  }

  if (grads.w_x != nullptr)
    detail::gemm_tn(3 * hidden, d_in, rows, dgx_all.data(), input.data.data(),
                    grads.w_x->data.data(), true);
  if (grads.b_x != nullptr)
    accumulate_col_sums(dgx_all.data(), rows, 3 * hidden, grads.b_x->data.data());
  if (grad_input != nullptr)
    detail::gemm_nn(rows, d_in, 3 * hidden, dgx_all.data(), p.w_x.data.data(),
                    grad_input->data.data(), true);
}

}  // namespace

template <typename T>
TensorT<T> bigru_forward(const TensorT<T>& input, const GruDirView<T>& fw,
                         const GruDirView<T>& bw, BiGruCache<T>* cache) {
  gru_check(input, fw, "fw");
  gru_check(input, bw, "bw");
  require(fw.w_h.shape[1] == bw.w_h.shape[1], "bigru: direction widths differ");
  const int steps = input.shape[0], batch = input.shape[1];
  if (steps == 0) throw range_error("bigru: empty input sequence");
  const int hidden = fw.w_h.shape[1];

  BiGruCache<T> local;
  BiGruCache<T>* c = cache != nullptr ? cache : &local;
  gru_dir_forward(input, fw, false, c->h_fw, c->gates_fw, c->hpre_fw);
  gru_dir_forward(input, bw, true, c->h_bw, c->gates_bw, c->hpre_bw);

  TensorT<T> out = TensorT<T>::zeros({steps, batch, 2 * hidden});
  for (int t = 0; t < steps; ++t)
    for (int b = 0; b < batch; ++b) {
      T* dst = out.data.data() + (static_cast<std::size_t>(t) * batch + b) * 2 * hidden;
      const T* hf =
          c->h_fw.data.data() + (static_cast<std::size_t>(t + 1) * batch + b) * hidden;
      const T* hb = c->h_bw.data.data() +
                    (static_cast<std::size_t>(steps - t) * batch + b) * hidden;
      for (int d = 0; d < hidden; ++d) dst[d] = hf[d];
      for (int d = 0; d < hidden; ++d) dst[hidden + d] = hb[d];
    }
  return out;
}

template <typename T>
void bigru_backward(const TensorT<T>& input, const GruDirView<T>& fw,
                    const GruDirView<T>& bw, const BiGruCache<T>& cache,
                    const TensorT<T>& grad_out, TensorT<T>* grad_input,
                    const GruDirGrads<T>& fw_grads, const GruDirGrads<T>& bw_grads) {
  const int steps = input.shape[0], batch = input.shape[1];
  const int hidden = fw.w_h.shape[1];
  require(grad_out.rank() == 3 && grad_out.shape[0] == steps &&
              grad_out.shape[1] == batch && grad_out.shape[2] == 2 * hidden,
          "bigru: grad_out shape mismatch");
  if (grad_input != nullptr) {
    require(grad_input->same_shape(input), "bigru: grad_input shape mismatch");
    std::fill(grad_input->data.begin(), grad_input->data.end(), T(0));
  }
  gru_dir_backward(input, fw, false, cache.h_fw, cache.gates_fw, cache.hpre_fw, grad_out,
                   0, grad_input, fw_grads);
  gru_dir_backward(input, bw, true, cache.h_bw, cache.gates_bw, cache.hpre_bw, grad_out,
                   hidden, grad_input, bw_grads);
}

// ---------------------------------------------------------------------------

#define PFEDCR_INSTANTIATE_LAYERS(T)                                                      \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,             \
                                        const TensorT<T>&, int, int);                     \
  template void conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, int, int,        \
                                   const TensorT<T>&, TensorT<T>*, TensorT<T>*,           \
                                   TensorT<T>*);                                          \
  template TensorT<T> maxpool2d_forward<T>(const TensorT<T>&, int, int);                  \
  template TensorT<T> maxpool2d_backward<T>(const TensorT<T>&, int, int,                  \
                                            const TensorT<T>&);                           \
  template TensorT<T> linear_forward<T>(const TensorT<T>&, const TensorT<T>&,             \
                                        const TensorT<T>&);                               \
  template void linear_backward<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                   const TensorT<T>&, TensorT<T>*, TensorT<T>*,           \
                                   TensorT<T>*);                                          \
  template void relu_inplace<T>(TensorT<T>&);                                             \
  template void relu_backward_inplace<T>(const TensorT<T>&, TensorT<T>&);                 \
  template TensorT<T> eca_forward<T>(const TensorT<T>&, const TensorT<T>&);               \
  template void eca_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                TensorT<T>*, TensorT<T>*);                                \
  template TensorT<T> bigru_forward<T>(const TensorT<T>&, const GruDirView<T>&,           \
                                       const GruDirView<T>&, BiGruCache<T>*);             \
  template void bigru_backward<T>(const TensorT<T>&, const GruDirView<T>&,                \
                                  const GruDirView<T>&, const BiGruCache<T>&,             \
                                  const TensorT<T>&, TensorT<T>*, const GruDirGrads<T>&,  \
                                  const GruDirGrads<T>&);

PFEDCR_INSTANTIATE_LAYERS(float)
PFEDCR_INSTANTIATE_LAYERS(double)

#undef PFEDCR_INSTANTIATE_LAYERS

}  // namespace pfedcr
