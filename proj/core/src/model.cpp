#include "pfedcr/model.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "pfedcr/errors.hpp"
#include "pfedcr/rng.hpp"

namespace pfedcr {
namespace {

int pool_height_product(const ModelConfig& cfg) {
  int p = 1;
  for (const auto& [ph, pw] : cfg.pools) p *= ph;
  return p;
}

int pool_width_product(const ModelConfig& cfg) {
  int p = 1;
  for (const auto& [ph, pw] : cfg.pools) p *= pw;
  return p;
}

template <typename T>
const TensorT<T>& tensor_of(const ParamSetT<T>& ps, std::string_view name) {
  const ParamT<T>* p = ps.find(name);
  if (p == nullptr)
    throw protocol_error(fmt::format("model: parameter '{}' missing", name));
  return p->value;
}

template <typename T>
ParamT<T>& param_of(ParamSetT<T>& ps, std::string_view name) {
  ParamT<T>* p = ps.find(name);
  if (p == nullptr)
    throw protocol_error(fmt::format("model: parameter '{}' missing", name));
  return *p;
}

bool group_needed(const std::vector<ParamGroup>& needed, ParamGroup g) {
  for (const ParamGroup n : needed)
    if (n == g) return true;
  return false;
}

}  // namespace

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.alphabet_size < 1)
    throw config_error(fmt::format("model: alphabet_size {} < 1", cfg.alphabet_size));
  if (cfg.conv_channels.empty() || cfg.conv_channels.size() != cfg.pools.size())
    throw config_error("model: conv_channels and pools must be non-empty and equal length");
  for (const int c : cfg.conv_channels)
    if (c < 1) throw config_error("model: conv channel count < 1");
  for (const auto& [ph, pw] : cfg.pools)
    if (ph < 1 || pw < 1) throw config_error("model: pool dims must be >= 1");
  if (cfg.recurrent_hidden < 1) throw config_error("model: recurrent_hidden < 1");
  if (cfg.input_height < 1) throw config_error("model: input_height < 1");
  const int hp = pool_height_product(cfg);
  if (cfg.input_height % hp != 0)
    throw config_error(fmt::format("model: pool heights (product {}) do not divide input height {}",
                                   hp, cfg.input_height));
  if (cfg.eca_gamma < 1) throw config_error("model: eca_gamma < 1");
}

int eca_kernel_size(int channels, int gamma, int b) {
  if (channels < 1 || gamma < 1)
    throw config_error(fmt::format("eca_kernel_size: C={}, gamma={}", channels, gamma));
  const double v = std::log2(static_cast<double>(channels)) / gamma +
                   static_cast<double>(b) / gamma;
  const double av = std::abs(v);
  int below = static_cast<int>(std::floor(av));
  if (below % 2 == 0) below -= 1;
  if (below < 1) return 1;
  const int above = below + 2;
  const double d_below = av - below, d_above = above - av;
  if (d_above < d_below) return above;
  return below;  // closer, or an exact tie resolved downward
}

int model_frames(const ModelConfig& cfg, int width) {
  const int wp = pool_width_product(cfg);
  if (width < wp || width % wp != 0)
    throw config_error(
        fmt::format("model: width {} not divisible by pool width product {}", width, wp));
  return width / wp;
}

ParamSet build_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_model_config(cfg);
  ParamSet ps;
  const auto add = [&](std::string name, ParamGroup group, std::vector<int> shape,
                       int fan_in) {
    Tensor value(std::move(shape));
    if (fan_in > 0) {
      RngStream rng(rng_seed(seed, {rng_token("init"), rng_token(name)}));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (float& v : value.data)
        v = static_cast<float>((2.0 * rng.next_unit() - 1.0) * bound);
    }
    ps.params.emplace_back(std::move(name), group, std::move(value));
  };

  int in_c = 1;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const int out_c = cfg.conv_channels[i];
    add(fmt::format("conv{}.weight", i + 1), ParamGroup::body, {out_c, in_c, 3, 3},
        in_c * 9);
    add(fmt::format("conv{}.bias", i + 1), ParamGroup::body, {out_c}, 0);
    if (cfg.use_eca) {
      const int r = eca_kernel_size(out_c, cfg.eca_gamma, cfg.eca_b);
      add(fmt::format("eca{}.kernel", i + 1), ParamGroup::eca, {r}, r);
    }
    in_c = out_c;
  }
  const int feat = cfg.conv_channels.back();
  const int hidden = cfg.recurrent_hidden;
  for (const char* dir : {"fw", "bw"}) {
    add(fmt::format("gru.{}.w_input", dir), ParamGroup::body, {3 * hidden, feat}, feat);
    add(fmt::format("gru.{}.w_hidden", dir), ParamGroup::body, {3 * hidden, hidden}, hidden);
    add(fmt::format("gru.{}.b_input", dir), ParamGroup::body, {3 * hidden}, 0);
    add(fmt::format("gru.{}.b_hidden", dir), ParamGroup::body, {3 * hidden}, 0);
  }
  add("head.weight", ParamGroup::head, {cfg.alphabet_size + 1, 2 * hidden}, 2 * hidden);
  add("head.bias", ParamGroup::head, {cfg.alphabet_size + 1}, 0);

  std::set<std::string> names;
  for (const Param& p : ps.params)
    if (!names.insert(p.name).second)
      throw protocol_error(fmt::format("model: duplicate parameter '{}'", p.name));
  return ps;
}

template <typename T>
TensorT<T> model_forward(const ParamSetT<T>& params, const ModelConfig& cfg,
                         const TensorT<T>& images, ForwardCacheT<T>* cache) {
  validate_model_config(cfg);
  if (images.rank() != 4 || images.shape[1] != 1)
    throw config_error("model: images must be [B,1,H,W]");
  if (images.shape[2] != cfg.input_height)
    throw config_error(fmt::format("model: image height {} != configured {}",
                                   images.shape[2], cfg.input_height));
  const int batch = images.shape[0];
  const int frames = model_frames(cfg, images.shape[3]);
  const int n_blocks = static_cast<int>(cfg.conv_channels.size());

  ForwardCacheT<T> local;
  ForwardCacheT<T>* c = cache != nullptr ? cache : &local;
  c->conv_out.assign(n_blocks, {});
  c->eca_out.assign(n_blocks, {});
  c->pool_out.assign(n_blocks, {});
  c->input = images;

  const TensorT<T>* x = &c->input;
  for (int i = 0; i < n_blocks; ++i) {
    const auto& w = tensor_of(params, fmt::format("conv{}.weight", i + 1));
    const auto& b = tensor_of(params, fmt::format("conv{}.bias", i + 1));
    TensorT<T> conv = conv2d_forward(*x, w, b, 1, 1);
    relu_inplace(conv);
    c->conv_out[i] = std::move(conv);
    const TensorT<T>* pre_pool = &c->conv_out[i];
    if (cfg.use_eca) {
      const auto& k = tensor_of(params, fmt::format("eca{}.kernel", i + 1));
      c->eca_out[i] = eca_forward(c->conv_out[i], k);
      pre_pool = &c->eca_out[i];
    }
    c->pool_out[i] = maxpool2d_forward(*pre_pool, cfg.pools[i].first, cfg.pools[i].second);
    x = &c->pool_out[i];
  }

  // Collapse the residual height axis by mean: [B,C,H3,T'] -> [T',B,C].
  const TensorT<T>& top = *x;
  const int feat = top.shape[1], rows_h = top.shape[2];
  if (top.shape[3] != frames) throw protocol_error("model: frame count mismatch");
  c->seq = TensorT<T>::zeros({frames, batch, feat});
  const T inv_h = T(1) / static_cast<T>(rows_h);
  for (int t = 0; t < frames; ++t)
    for (int bi = 0; bi < batch; ++bi)
      for (int f = 0; f < feat; ++f) {
        T acc = T(0);
        for (int h = 0; h < rows_h; ++h) acc += top.at4(bi, f, h, t);
        c->seq.at3(t, bi, f) = acc * inv_h;
      }

  const GruDirView<T> fw{tensor_of(params, "gru.fw.w_input"),
                         tensor_of(params, "gru.fw.w_hidden"),
                         tensor_of(params, "gru.fw.b_input"),
                         tensor_of(params, "gru.fw.b_hidden")};
  const GruDirView<T> bw{tensor_of(params, "gru.bw.w_input"),
                         tensor_of(params, "gru.bw.w_hidden"),
                         tensor_of(params, "gru.bw.b_input"),
                         tensor_of(params, "gru.bw.b_hidden")};
  TensorT<T> rnn = bigru_forward(c->seq, fw, bw, &c->gru);
  rnn.shape = {frames * batch, 2 * cfg.recurrent_hidden};
  c->seq_flat = std::move(rnn);

  TensorT<T> logits = linear_forward(c->seq_flat, tensor_of(params, "head.weight"),
                                     tensor_of(params, "head.bias"));
  logits.shape = {frames, batch, cfg.alphabet_size + 1};
  return logits;
}

template <typename T>
void model_backward(ParamSetT<T>& params, const ModelConfig& cfg,
                    const ForwardCacheT<T>& cache, const TensorT<T>& grad_logits,
                    const std::vector<ParamGroup>& needed) {
  const int frames = grad_logits.shape[0], batch = grad_logits.shape[1];
  const int n_blocks = static_cast<int>(cfg.conv_channels.size());
  const bool want_body = group_needed(needed, ParamGroup::body);
  const bool want_head = group_needed(needed, ParamGroup::head);
  const bool want_eca = group_needed(needed, ParamGroup::eca);

  TensorT<T> dlogits = grad_logits;
  dlogits.shape = {frames * batch, grad_logits.shape[2]};
  TensorT<T> dflat = TensorT<T>::zeros(cache.seq_flat.shape);
  {
    ParamT<T>& hw = param_of(params, "head.weight");
    ParamT<T>& hb = param_of(params, "head.bias");
    linear_backward(cache.seq_flat, hw.value, dlogits, &dflat,
                    want_head ? &hw.grad : nullptr, want_head ? &hb.grad : nullptr);
  }

  TensorT<T> dseq = TensorT<T>::zeros(cache.seq.shape);
  {
    const GruDirView<T> fw{tensor_of(std::as_const(params), "gru.fw.w_input"),
                           tensor_of(std::as_const(params), "gru.fw.w_hidden"),
                           tensor_of(std::as_const(params), "gru.fw.b_input"),
                           tensor_of(std::as_const(params), "gru.fw.b_hidden")};
    const GruDirView<T> bw{tensor_of(std::as_const(params), "gru.bw.w_input"),
                           tensor_of(std::as_const(params), "gru.bw.w_hidden"),
                           tensor_of(std::as_const(params), "gru.bw.b_input"),
                           tensor_of(std::as_const(params), "gru.bw.b_hidden")};
    GruDirGrads<T> fwg, bwg;
    if (want_body) {
      fwg = {&param_of(params, "gru.fw.w_input").grad,
             &param_of(params, "gru.fw.w_hidden").grad,
             &param_of(params, "gru.fw.b_input").grad,
             &param_of(params, "gru.fw.b_hidden").grad};
      bwg = {&param_of(params, "gru.bw.w_input").grad,
             &param_of(params, "gru.bw.w_hidden").grad,
             &param_of(params, "gru.bw.b_input").grad,
             &param_of(params, "gru.bw.b_hidden").grad};
    }
    TensorT<T> dflat3 = std::move(dflat);
    dflat3.shape = {frames, batch, 2 * cfg.recurrent_hidden};
    bigru_backward(cache.seq, fw, bw, cache.gru, dflat3, &dseq, fwg, bwg);
  }

  // Un-collapse the mean over the residual height axis.
  const TensorT<T>& top = cache.pool_out[n_blocks - 1];
  const int feat = top.shape[1], rows_h = top.shape[2];
  TensorT<T> dpool = TensorT<T>::zeros(top.shape);
  const T inv_h = T(1) / static_cast<T>(rows_h);
  for (int t = 0; t < frames; ++t)
    for (int bi = 0; bi < batch; ++bi)
      for (int f = 0; f < feat; ++f) {
        const T g = dseq.at3(t, bi, f) * inv_h;
        for (int h = 0; h < rows_h; ++h) dpool.at4(bi, f, h, t) = g;
      }

  for (int i = n_blocks - 1; i >= 0; --i) {
    const TensorT<T>& pre_pool = cfg.use_eca ? cache.eca_out[i] : cache.conv_out[i];
    TensorT<T> dpre = maxpool2d_backward(pre_pool, cfg.pools[i].first, cfg.pools[i].second,
                                         dpool);
    TensorT<T> dconv;
    if (cfg.use_eca) {
      ParamT<T>& k = param_of(params, fmt::format("eca{}.kernel", i + 1));
      dconv = TensorT<T>::zeros(cache.conv_out[i].shape);
      eca_backward(cache.conv_out[i], k.value, dpre, &dconv,
                   want_eca ? &k.grad : nullptr);
    } else {
      dconv = std::move(dpre);
    }
    relu_backward_inplace(cache.conv_out[i], dconv);

    ParamT<T>& w = param_of(params, fmt::format("conv{}.weight", i + 1));
    ParamT<T>& b = param_of(params, fmt::format("conv{}.bias", i + 1));
    const TensorT<T>& input = i == 0 ? cache.input : cache.pool_out[i - 1];
    if (i == 0) {
      conv2d_backward(input, w.value, 1, 1, dconv, static_cast<TensorT<T>*>(nullptr),
                      want_body ? &w.grad : nullptr, want_body ? &b.grad : nullptr);
    } else {
      dpool = TensorT<T>::zeros(input.shape);
      conv2d_backward(input, w.value, 1, 1, dconv, &dpool,
                      want_body ? &w.grad : nullptr, want_body ? &b.grad : nullptr);
    }
  }
}

#define PFEDCR_INSTANTIATE_MODEL(T)                                                      \
  template TensorT<T> model_forward<T>(const ParamSetT<T>&, const ModelConfig&,          \
                                       const TensorT<T>&, ForwardCacheT<T>*);            \
  template void model_backward<T>(ParamSetT<T>&, const ModelConfig&,                     \
                                  const ForwardCacheT<T>&, const TensorT<T>&,            \
                                  const std::vector<ParamGroup>&);

PFEDCR_INSTANTIATE_MODEL(float)
PFEDCR_INSTANTIATE_MODEL(double)

#undef PFEDCR_INSTANTIATE_MODEL

}  // namespace pfedcr
