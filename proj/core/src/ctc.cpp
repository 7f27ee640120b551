#include "pfedcr/ctc.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "pfedcr/errors.hpp"

namespace pfedcr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void validate_target(const LabelSeq& target, int alphabet, int sample) {
  for (const int s : target.symbols)
    if (s < 1 || s > alphabet)
      throw config_error(
          fmt::format("ctc: sample {} symbol {} outside [1, {}]", sample, s, alphabet));
}

/// Blank-extended target: blank, y0, blank, y1, ..., blank.
std::vector<int> extend(const LabelSeq& target) {
  std::vector<int> ext(2 * target.symbols.size() + 1, 0);
  for (std::size_t i = 0; i < target.symbols.size(); ++i) ext[2 * i + 1] = target.symbols[i];
  return ext;
}

}  // namespace

int ctc_min_frames(const LabelSeq& target) {
  int frames = static_cast<int>(target.symbols.size());
  for (std::size_t i = 1; i < target.symbols.size(); ++i)
    if (target.symbols[i] == target.symbols[i - 1]) ++frames;
  return frames;
}

template <typename T>
CtcResult<T> ctc_loss(const TensorT<T>& logits, const std::vector<LabelSeq>& targets,
                      bool need_grad) {
  if (logits.rank() != 3) throw config_error("ctc: logits must be rank 3 [T',B,A+1]");
  const int frames = logits.shape[0], batch = logits.shape[1], classes = logits.shape[2];
  const int alphabet = classes - 1;
  if (alphabet < 1) throw config_error("ctc: need at least one non-blank class");
  if (static_cast<int>(targets.size()) != batch)
    throw config_error(fmt::format("ctc: {} targets for batch of {}", targets.size(), batch));
  if (!all_finite(logits)) throw numeric_error("ctc: non-finite logits");

  CtcResult<T> result;
  if (need_grad) result.grad_logits = TensorT<T>::zeros(logits.shape);

  std::vector<double> logp(static_cast<std::size_t>(frames) * classes);
  std::vector<double> softmax(static_cast<std::size_t>(frames) * classes);
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    validate_target(targets[b], alphabet, b);
    const int need = ctc_min_frames(targets[b]);
    if (frames < need)
      throw infeasible_error(fmt::format(
          "ctc: sample {} target length {} needs {} frames, got {}", b,
          targets[b].symbols.size(), need, frames));

    for (int t = 0; t < frames; ++t) {
      double mx = kNegInf;
      for (int a = 0; a < classes; ++a)
        mx = std::max(mx, static_cast<double>(logits.at3(t, b, a)));
      double sum = 0.0;
      for (int a = 0; a < classes; ++a)
        sum += std::exp(static_cast<double>(logits.at3(t, b, a)) - mx);
      const double lse = mx + std::log(sum);
      for (int a = 0; a < classes; ++a) {
        const double lp = static_cast<double>(logits.at3(t, b, a)) - lse;
        logp[static_cast<std::size_t>(t) * classes + a] = lp;
        softmax[static_cast<std::size_t>(t) * classes + a] = std::exp(lp);
      }
    }
    const auto lp_at = [&](int t, int a) {
      return logp[static_cast<std::size_t>(t) * classes + a];
    };

    const std::vector<int> ext = extend(targets[b]);
    const int states = static_cast<int>(ext.size());
    std::vector<double> alpha(static_cast<std::size_t>(frames) * states, kNegInf);
    alpha[0] = lp_at(0, ext[0]);
    if (states > 1) alpha[1] = lp_at(0, ext[1]);
    for (int t = 1; t < frames; ++t) {
      const std::size_t row = static_cast<std::size_t>(t) * states;
      const std::size_t prev = row - states;
      for (int j = 0; j < states; ++j) {
        double acc = alpha[prev + j];
        if (j > 0) acc = lse2(acc, alpha[prev + j - 1]);
        if (j > 1 && ext[j] != 0 && ext[j] != ext[j - 2]) acc = lse2(acc, alpha[prev + j - 2]);
        alpha[row + j] = acc == kNegInf ? kNegInf : acc + lp_at(t, ext[j]);
      }
    }
    const std::size_t last = static_cast<std::size_t>(frames - 1) * states;
    double loglik = alpha[last + states - 1];
    if (states > 1) loglik = lse2(loglik, alpha[last + states - 2]);
    if (!std::isfinite(loglik))
      throw numeric_error(fmt::format("ctc: sample {} produced non-finite likelihood", b));
    total += -loglik;

    if (!need_grad) continue;

    // beta[t][j]: completing the suffix after j using frames t+1..T'-1.
    std::vector<double> beta(static_cast<std::size_t>(frames) * states, kNegInf);
    beta[last + states - 1] = 0.0;
    if (states > 1) beta[last + states - 2] = 0.0;
    for (int t = frames - 2; t >= 0; --t) {
      const std::size_t row = static_cast<std::size_t>(t) * states;
      const std::size_t next = row + states;
      for (int j = 0; j < states; ++j) {
        double acc = beta[next + j] == kNegInf ? kNegInf
                                               : beta[next + j] + lp_at(t + 1, ext[j]);
        if (j + 1 < states && beta[next + j + 1] != kNegInf)
          acc = lse2(acc, beta[next + j + 1] + lp_at(t + 1, ext[j + 1]));
        if (j + 2 < states && ext[j + 2] != 0 && ext[j + 2] != ext[j] &&
            beta[next + j + 2] != kNegInf)
          acc = lse2(acc, beta[next + j + 2] + lp_at(t + 1, ext[j + 2]));
        beta[row + j] = acc;
      }
    }

    const double inv_batch = 1.0 / static_cast<double>(batch);
    std::vector<double> occupancy(classes);
    for (int t = 0; t < frames; ++t) {
      std::fill(occupancy.begin(), occupancy.end(), 0.0);
      const std::size_t row = static_cast<std::size_t>(t) * states;
      for (int j = 0; j < states; ++j) {
        const double a = alpha[row + j], bt = beta[row + j];
        if (a == kNegInf || bt == kNegInf) continue;
        occupancy[ext[j]] += std::exp(a + bt - loglik);
      }
      for (int a = 0; a < classes; ++a)
        result.grad_logits.at3(t, b, a) = static_cast<T>(
            (softmax[static_cast<std::size_t>(t) * classes + a] - occupancy[a]) * inv_batch);
    }
  }
  result.loss = total / static_cast<double>(batch);
  return result;
}

template CtcResult<float> ctc_loss<float>(const TensorT<float>&,
                                          const std::vector<LabelSeq>&, bool);
template CtcResult<double> ctc_loss<double>(const TensorT<double>&,
                                            const std::vector<LabelSeq>&, bool);

double brute_force_ctc(const TensorT<double>& logits, const LabelSeq& target) {
  if (logits.rank() != 2) throw config_error("brute_force_ctc: logits must be [T',A+1]");
  const int frames = logits.shape[0], classes = logits.shape[1];
  double paths = 1.0;
  for (int t = 0; t < frames; ++t) {
    paths *= classes;
    if (paths > 1e6)
      throw range_error(fmt::format("brute_force_ctc: {}^{} paths exceed 1e6", classes, frames));
  }
  validate_target(target, classes - 1, 0);

  std::vector<double> prob(static_cast<std::size_t>(frames) * classes);
  for (int t = 0; t < frames; ++t) {
    double mx = kNegInf;
    for (int a = 0; a < classes; ++a) mx = std::max(mx, logits.at2(t, a));
    double sum = 0.0;
    for (int a = 0; a < classes; ++a) sum += std::exp(logits.at2(t, a) - mx);
    for (int a = 0; a < classes; ++a)
      prob[static_cast<std::size_t>(t) * classes + a] =
          std::exp(logits.at2(t, a) - mx) / sum;
  }

  std::vector<int> path(frames, 0);
  std::vector<int> collapsed;
  double total = 0.0;
  while (true) {
    // collapse runs, with blanks resetting the run before being dropped
    collapsed.clear();
    int prev = 0;
    for (int t = 0; t < frames; ++t) {
      const int s = path[t];
      if (s != 0 && s != prev) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == target.symbols) {
      double p = 1.0;
      for (int t = 0; t < frames; ++t)
        p *= prob[static_cast<std::size_t>(t) * classes + path[t]];
      total += p;
    }
    int pos = frames - 1;
    while (pos >= 0 && path[pos] == classes - 1) path[pos--] = 0;
    if (pos < 0) break;
    ++path[pos];
  }
  if (total <= 0.0)
    throw infeasible_error(
        fmt::format("brute_force_ctc: no path collapses to target of length {}",
                    target.symbols.size()));
  return -std::log(total);
}

template <typename T>
LabelSeq greedy_decode(const TensorT<T>& logits) {
  if (logits.rank() != 2) throw config_error("greedy_decode: logits must be [T',A+1]");
  const int frames = logits.shape[0], classes = logits.shape[1];
  LabelSeq out;
  int prev = 0;
  for (int t = 0; t < frames; ++t) {
    int best = 0;
    for (int a = 1; a < classes; ++a)
      if (logits.at2(t, a) > logits.at2(t, best)) best = a;
    if (best != 0 && best != prev) out.symbols.push_back(best);
    prev = best;
  }
  return out;
}

template LabelSeq greedy_decode<float>(const TensorT<float>&);
template LabelSeq greedy_decode<double>(const TensorT<double>&);

}  // namespace pfedcr
