#pragma once

#include "pfedcr/tensor.hpp"

namespace pfedcr {

// ---------------------------------------------------------------------------
// Convolution (cross-correlation),
//   input  [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout]
//   output [B,Cout,H',W'] with H' = (H + 2p - kh)/s + 1.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>& bias, int stride, int padding);

/// Gradients accumulate (+=) into the provided tensors; pass nullptr to skip.
/// grad_input is overwritten, not accumulated.
template <typename T>
void conv2d_backward(const TensorT<T>& input, const TensorT<T>& weight, int stride,
                     int padding, const TensorT<T>& grad_out, TensorT<T>* grad_input,
                     TensorT<T>* grad_weight, TensorT<T>* grad_bias);

// ---------------------------------------------------------------------------
// Max pooling over non-overlapping windows; H, W must divide evenly.
// Backward routes each window's gradient to the first maximal cell in
// row-major scan order.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> maxpool2d_forward(const TensorT<T>& input, int pool_h, int pool_w);

template <typename T>
TensorT<T> maxpool2d_backward(const TensorT<T>& input, int pool_h, int pool_w,
                              const TensorT<T>& grad_out);

// ---------------------------------------------------------------------------
// Affine map, input [N,Din] -> [N,Dout] with weight [Dout,Din], bias [Dout].
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>& bias);

template <typename T>
void linear_backward(const TensorT<T>& input, const TensorT<T>& weight,
                     const TensorT<T>& grad_out, TensorT<T>* grad_input,
                     TensorT<T>* grad_weight, TensorT<T>* grad_bias);

// ---------------------------------------------------------------------------
// ReLU; backward masks on the activation output (zero where output is zero).
// ---------------------------------------------------------------------------

template <typename T>
void relu_inplace(TensorT<T>& x);

template <typename T>
void relu_backward_inplace(const TensorT<T>& activated, TensorT<T>& grad);

// ---------------------------------------------------------------------------
// Efficient channel attention: squeeze by global average pooling, mix
// neighboring channels with a 1-D kernel, gate through a sigmoid, and scale
// each channel of the input. Kernel length must be odd.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> eca_forward(const TensorT<T>& z, const TensorT<T>& kernel);

template <typename T>
void eca_backward(const TensorT<T>& z, const TensorT<T>& kernel,
                  const TensorT<T>& grad_out, TensorT<T>* grad_z,
                  TensorT<T>* grad_kernel);

// ---------------------------------------------------------------------------
// Single-layer bidirectional GRU, zero initial state, forward and reverse
// hidden states concatenated on the feature axis.
//
// Per direction, with gate blocks ordered [reset | update | candidate]:
//   r = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)
//   z = sigmoid(Wx_z x + bx_z + Wh_z h + bh_z)
//   n = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
//   h' = (1 - z) * n + z * h
// ---------------------------------------------------------------------------

template <typename T>
struct GruDirView {
  const TensorT<T>& w_x;  // [3*Dh, Din]
  const TensorT<T>& w_h;  // [3*Dh, Dh]
  const TensorT<T>& b_x;  // [3*Dh]
  const TensorT<T>& b_h;  // [3*Dh]
};

template <typename T>
struct GruDirGrads {
  TensorT<T>* w_x = nullptr;
  TensorT<T>* w_h = nullptr;
  TensorT<T>* b_x = nullptr;
  TensorT<T>* b_h = nullptr;
};

template <typename T>
struct BiGruCache {
  TensorT<T> h_fw, h_bw;          // [T+1,B,Dh] including the zero initial state
  TensorT<T> gates_fw, gates_bw;  // [T,B,3*Dh] activated r,z,n
  TensorT<T> hpre_fw, hpre_bw;    // [T,B,Dh] candidate hidden-side preactivation
};

/// input [T,B,Din] -> output [T,B,2*Dh]. cache may be null for inference.
template <typename T>
TensorT<T> bigru_forward(const TensorT<T>& input, const GruDirView<T>& fw,
                         const GruDirView<T>& bw, BiGruCache<T>* cache);

template <typename T>
void bigru_backward(const TensorT<T>& input, const GruDirView<T>& fw,
                    const GruDirView<T>& bw, const BiGruCache<T>& cache,
                    const TensorT<T>& grad_out, TensorT<T>* grad_input,
                    const GruDirGrads<T>& fw_grads, const GruDirGrads<T>& bw_grads);

}  // namespace pfedcr
