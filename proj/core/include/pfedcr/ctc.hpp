#pragma once

#include <vector>

#include "pfedcr/tensor.hpp"

namespace pfedcr {

/// Ground-truth label sequence; symbols live in [1, A], 0 is the blank.
struct LabelSeq {
  std::vector<int> symbols;

  bool operator==(const LabelSeq&) const = default;
};

/// Minimum number of frames that can emit the sequence: one per symbol plus a
/// separating blank between equal neighbors.
int ctc_min_frames(const LabelSeq& target);

template <typename T>
struct CtcResult {
  double loss = 0.0;       // mean over the batch of -log p(y|x)
  TensorT<T> grad_logits;  // [T',B,A+1] w.r.t. pre-softmax logits; empty unless requested
};

/// Log-space forward/backward over the blank-extended target. logits are
/// pre-softmax [T',B,A+1]; every sample in the batch shares T'. The dynamic
/// program runs in 64-bit regardless of T.
template <typename T>
CtcResult<T> ctc_loss(const TensorT<T>& logits, const std::vector<LabelSeq>& targets,
                      bool need_grad = true);

/// Test oracle: enumerate all (A+1)^T' paths, collapse repeats, strip blanks,
/// and sum the probabilities of paths matching the target. logits [T',A+1].
double brute_force_ctc(const TensorT<double>& logits, const LabelSeq& target);

/// Best-path decode of one sample [T',A+1]: per-frame argmax (ties to the
/// lowest index), collapse consecutive repeats, drop blanks.
template <typename T>
LabelSeq greedy_decode(const TensorT<T>& logits);

}  // namespace pfedcr
