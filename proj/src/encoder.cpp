#include "lwa/encoder.hpp"

namespace lwa {

Tensor flatten_positions(const Tensor& x) {
  std::size_t c = x.dim(0), p = x.dim(1) * x.dim(2);
  Tensor m = Tensor::zeros({p, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = &x.data[ch * p];
    for (std::size_t i = 0; i < p; ++i) m(i, ch) = src[i];
  }
  return m;
}

Tensor unflatten_positions(const Tensor& m, std::size_t c, std::size_t h, std::size_t w) {
  std::size_t p = h * w;
  Tensor x = Tensor::zeros({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double* dst = &x.data[ch * p];
    for (std::size_t i = 0; i < p; ++i) dst[i] = m(i, ch);
  }
  return x;
}

namespace {

Tensor token_mean(const Tensor& z) {
  std::size_t m = z.dim(0), d = z.dim(1);
  Tensor t = Tensor::zeros({d});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) t(j) += z(i, j);
  }
  t *= 1.0 / static_cast<double>(m);
  return t;
}

}  // namespace

std::pair<Tensor, Tensor> mobile_block_forward(const Tensor& x, const Tensor& tokens,
                                               const EncoderStackWeights& w, const StackPlan& plan,
                                               const MultiHeadConfig& attn_cfg, Activation act,
                                               StackCache* cache) {
  if (x.dim(0) != plan.in_c || x.dim(1) != plan.in_h || x.dim(2) != plan.in_w) {
    throw ValidationError("mobile_block_forward: input " + shape_str(x.shape) +
                          " does not match stack plan");
  }
  StackCache local_cache;
  StackCache& c = cache ? *cache : local_cache;
  c.x = x;
  c.z_in = tokens;

  c.dw = depthwise_conv2d(x, w.dw_kernel, plan.stride, plan.padding);

  std::size_t d = tokens.dim(1);
  std::size_t hp = c.dw.dim(1), wp = c.dw.dim(2), p = hp * wp;
  Tensor tmean = token_mean(tokens);
  c.cat = Tensor::zeros({plan.in_c + d, hp, wp});
  std::copy(c.dw.data.begin(), c.dw.data.end(), c.cat.data.begin());
  for (std::size_t j = 0; j < d; ++j) {
    double v = tmean(j);
    double* dst = &c.cat.data[(plan.in_c + j) * p];
    for (std::size_t i = 0; i < p; ++i) dst[i] = v;
  }
  c.fused = pointwise_conv2d(c.cat, w.fuse_proj);
  c.pw_pre = pointwise_conv2d(c.fused, w.pw_kernel);
  c.y = apply_activation(c.pw_pre, act);

  c.local_d = matmul_nt(flatten_positions(c.y), w.token_proj);
  QueryCrossAttentionResult attn =
      query_only_cross_attention(c.local_d, tokens, attn_cfg, w.w_q, w.w_o, &c.attn);
  Tensor z_out = tokens + attn.tokens_out;
  return {c.y, std::move(z_out)};
}

void mobile_block_backward(const EncoderStackWeights& w, const StackPlan& plan,
                           const MultiHeadConfig& attn_cfg, Activation act, const StackCache& cache,
                           const Tensor& d_y, const Tensor& d_tokens_out, Tensor& d_x,
                           Tensor& d_tokens_in, EncoderStackWeights& d_w) {
  std::size_t m = cache.z_in.dim(0), d = cache.z_in.dim(1);
  d_tokens_in += d_tokens_out;  // residual path

  Tensor d_local = Tensor::zeros(cache.local_d.shape);
  Tensor no_attn_grad;
  query_only_cross_attention_backward(cache.local_d, cache.z_in, attn_cfg, w.w_q, w.w_o,
                                      cache.attn, d_tokens_out, no_attn_grad, d_local, d_tokens_in,
                                      d_w.w_q, d_w.w_o);

  Tensor flat_y = flatten_positions(cache.y);
  d_w.token_proj += matmul_tn(d_local, flat_y);
  Tensor d_flat = matmul(d_local, w.token_proj);
  Tensor d_y_total = d_y + unflatten_positions(d_flat, cache.y.dim(0), cache.y.dim(1), cache.y.dim(2));

  Tensor d_pw_pre = activation_backward(cache.pw_pre, d_y_total, act);
  Tensor d_fused, d_pw_kernel;
  pointwise_conv2d_backward(cache.fused, w.pw_kernel, d_pw_pre, d_fused, d_pw_kernel);
  d_w.pw_kernel += d_pw_kernel;

  Tensor d_cat, d_fuse_proj;
  pointwise_conv2d_backward(cache.cat, w.fuse_proj, d_fused, d_cat, d_fuse_proj);
  d_w.fuse_proj += d_fuse_proj;

  std::size_t hp = cache.dw.dim(1), wp = cache.dw.dim(2), p = hp * wp;
  Tensor d_dw = Tensor::zeros(cache.dw.shape);
  std::copy(d_cat.data.begin(), d_cat.data.begin() + static_cast<std::ptrdiff_t>(plan.in_c * p),
            d_dw.data.begin());
  double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t j = 0; j < d; ++j) {
    const double* src = &d_cat.data[(plan.in_c + j) * p];
    double acc = 0.0;
    for (std::size_t i = 0; i < p; ++i) acc += src[i];
    for (std::size_t t = 0; t < m; ++t) d_tokens_in(t, j) += acc * inv_m;
  }

  Tensor d_x_local, d_dw_kernel;
  depthwise_conv2d_backward(cache.x, w.dw_kernel, plan.stride, plan.padding, d_dw, d_x_local,
                            d_dw_kernel);
  d_w.dw_kernel += d_dw_kernel;
  d_x += d_x_local;
}

FeaturePyramid encoder_forward(const Tensor& image, const std::vector<EncoderStackWeights>& stacks,
                               const Tensor& tokens0, const EncoderPlan& plan,
                               const MultiHeadConfig& attn_cfg, Activation act,
                               TokenSet* token_trace, EncoderCache* cache) {
  if (stacks.size() != plan.stacks.size()) {
    throw ValidationError("encoder_forward: weight count does not match plan");
  }
  if (cache) cache->stacks.resize(stacks.size());
  if (token_trace) {
    token_trace->z = tokens0;
    token_trace->snapshots.clear();
  }

  FeaturePyramid pyr;
  Tensor x = image;
  Tensor z = tokens0;
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    StackCache* sc = cache ? &cache->stacks[s] : nullptr;
    auto [y, z_next] = mobile_block_forward(x, z, stacks[s], plan.stacks[s], attn_cfg, act, sc);
    for (std::size_t t = 0; t < 3; ++t) {
      if (plan.taps[t].stack == s) pyr.levels[t] = y;
    }
    x = std::move(y);
    z = std::move(z_next);
    if (token_trace) token_trace->snapshots.push_back(z);
  }
  pyr.final_tokens = z;
  pyr.f_g = token_mean(z);
  if (token_trace) token_trace->z = std::move(z);
  return pyr;
}

void encoder_backward(const std::vector<EncoderStackWeights>& stacks, const EncoderPlan& plan,
                      const MultiHeadConfig& attn_cfg, Activation act, const EncoderCache& cache,
                      const std::array<Tensor, 3>& d_levels, const Tensor& d_final_tokens,
                      Tensor& d_tokens0, std::vector<EncoderStackWeights>& d_stacks) {
  Tensor d_z = d_final_tokens;
  Tensor d_from_next;  // gradient on this stack's y, flowing from stack s+1's input
  for (std::size_t i = stacks.size(); i-- > 0;) {
    const StackCache& sc = cache.stacks[i];
    Tensor d_y = Tensor::zeros(sc.y.shape);
    if (d_from_next.size() > 0) d_y += d_from_next;
    for (std::size_t t = 0; t < 3; ++t) {
      if (plan.taps[t].stack == i && d_levels[t].size() > 0) d_y += d_levels[t];
    }
    Tensor d_x = Tensor::zeros(sc.x.shape);
    Tensor d_z_in = Tensor::zeros(sc.z_in.shape);
    mobile_block_backward(stacks[i], plan.stacks[i], attn_cfg, act, sc, d_y, d_z, d_x, d_z_in,
                          d_stacks[i]);
    d_from_next = std::move(d_x);
    d_z = std::move(d_z_in);
  }
  d_tokens0 += d_z;
}

}  // namespace lwa
