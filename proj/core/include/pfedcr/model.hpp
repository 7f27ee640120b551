#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "pfedcr/layers.hpp"
#include "pfedcr/param.hpp"
#include "pfedcr/tensor.hpp"

namespace pfedcr {

struct ModelConfig {
  int input_height = 32;
  std::vector<int> conv_channels = {16, 32, 64};
  std::vector<std::pair<int, int>> pools = {{2, 2}, {2, 2}, {2, 1}};
  int recurrent_hidden = 64;
  int alphabet_size = 0;
  int eca_gamma = 2;
  int eca_b = 1;
  bool use_eca = true;
};

/// Throws config_error when invariants fail (pool heights must divide the
/// input height, at least one class, positive widths).
void validate_model_config(const ModelConfig& cfg);

/// Odd kernel length for the channel-mixing conv: nearest odd integer to
/// |log2(C)/gamma + b/gamma|, smaller odd on exact ties, at least 1.
int eca_kernel_size(int channels, int gamma, int b);

/// Sequence length produced for an image of width w; throws config_error when
/// w is not divisible by the product of pool widths.
int model_frames(const ModelConfig& cfg, int width);

/// Deterministic seeded build: weights uniform in +-1/sqrt(fan_in) from a
/// per-tensor stream, biases zero. Parameter order is fixed.
ParamSet build_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct ForwardCacheT {
  TensorT<T> input;
  std::vector<TensorT<T>> conv_out;  // post-ReLU, one per block
  std::vector<TensorT<T>> eca_out;   // post-attention (unused when ECA is off)
  std::vector<TensorT<T>> pool_out;
  TensorT<T> seq;      // [T',B,C_last] height-collapsed features
  TensorT<T> seq_flat; // [T'*B, 2*hidden] recurrent output, head input
  BiGruCache<T> gru;
};

using ForwardCache = ForwardCacheT<float>;

/// images [B,1,H,W] -> logits [T',B,A+1]. Pass a cache to enable backward.
template <typename T>
TensorT<T> model_forward(const ParamSetT<T>& params, const ModelConfig& cfg,
                         const TensorT<T>& images, ForwardCacheT<T>* cache);

/// Accumulates gradients (+=) into params.grad for parameters whose group is
/// listed in `needed`; activation gradients flow through every layer either
/// way so earlier ECA kernels still receive exact gradients.
template <typename T>
void model_backward(ParamSetT<T>& params, const ModelConfig& cfg,
                    const ForwardCacheT<T>& cache, const TensorT<T>& grad_logits,
                    const std::vector<ParamGroup>& needed);

}  // namespace pfedcr
