#include "lwa/bridge.hpp"

namespace lwa {

namespace {

Tensor concat_context(const Tensor& v, const Tensor& ctx) {
  std::size_t n = v.dim(0), d = v.dim(1);
  Tensor cat = Tensor::zeros({n, 2 * d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      cat(i, j) = v(i, j);
      cat(i, d + j) = ctx(j);
    }
  }
  return cat;
}

}  // namespace

BridgeOutput bridge_forward(const Tensor& y_t, const Tensor& tokens, const Tensor& left,
                            const Tensor& right, const BridgeWeights& w,
                            const BridgeLevelSettings& settings, BridgeCache* cache) {
  if (!left.same_shape(right)) {
    throw ValidationError("bridge level " + std::to_string(settings.level) +
                          ": hands disagree, " + shape_str(left.shape) + " vs " +
                          shape_str(right.shape));
  }
  std::size_t d = settings.attn.model_dim;
  if (left.dim(1) != d) {
    throw ValidationError("bridge level " + std::to_string(settings.level) +
                          ": vertex features have dim " + std::to_string(left.dim(1)) +
                          ", expected " + std::to_string(d));
  }

  BridgeCache local_cache;
  BridgeCache& c = cache ? *cache : local_cache;

  try {
    c.flat = flatten_positions(y_t);
    c.f_x = matmul(c.flat, w.local_proj);
    QueryCrossAttentionResult qres =
        query_only_cross_attention(c.f_x, tokens, settings.attn, w.w_q, w.w_o, &c.qattn);
    c.attn = qres.attn;  // token output unused: the bridge is one-way
    c.m_ctx = map_global_to_graph(c.attn, c.f_x);

    std::size_t m = c.m_ctx.dim(0);
    c.ctx = Tensor::zeros({d});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < d; ++j) c.ctx(j) += c.m_ctx(i, j);
    }
    c.ctx *= 1.0 / static_cast<double>(m);

    c.cat_l = concat_context(left, c.ctx);
    c.cat_r = concat_context(right, c.ctx);
    c.vo_l = matmul(c.cat_l, w.fuse_proj);
    c.vo_r = matmul(c.cat_r, w.fuse_proj);

    if (w.separable) {
      c.r2l = separable_attention(c.vo_r, c.vo_l, w.sep, &c.sep_rl);
      c.l2r = separable_attention(c.vo_l, c.vo_r, w.sep, &c.sep_lr);
    } else {
      CrossHandFeatures cf =
          cross_hand_attention(c.vo_l, c.vo_r, w.cross, w.cross, settings.norm, &c.cross);
      c.r2l = std::move(cf.right_to_left);
      c.l2r = std::move(cf.left_to_right);
    }

    BridgeOutput out;
    out.left = merge_cross_features(c.vo_l, c.r2l, w.merge, &c.merge_l);
    out.right = merge_cross_features(c.vo_r, c.l2r, w.merge, &c.merge_r);
    out.attn = c.attn;
    out.context_tokens = c.m_ctx;
    return out;
  } catch (const ValidationError& e) {
    throw ValidationError("bridge level " + std::to_string(settings.level) + ": " + e.what());
  }
}

void bridge_backward(const Tensor& y_t, const Tensor& tokens, const Tensor& left,
                     const Tensor& right, const BridgeWeights& w,
                     const BridgeLevelSettings& settings, const BridgeCache& cache,
                     const Tensor& d_out_left, const Tensor& d_out_right, Tensor& d_y_t,
                     Tensor& d_tokens, Tensor& d_left, Tensor& d_right, BridgeWeights& d_w) {
  (void)right;
  std::size_t d = settings.attn.model_dim;
  std::size_t n = left.dim(0);

  Tensor d_vo_l = Tensor::zeros(cache.vo_l.shape);
  Tensor d_vo_r = Tensor::zeros(cache.vo_r.shape);
  Tensor d_r2l = Tensor::zeros(cache.r2l.shape);
  Tensor d_l2r = Tensor::zeros(cache.l2r.shape);

  merge_cross_features_backward(cache.vo_l, cache.r2l, w.merge, cache.merge_l, d_out_left, d_vo_l,
                                d_r2l, d_w.merge);
  merge_cross_features_backward(cache.vo_r, cache.l2r, w.merge, cache.merge_r, d_out_right, d_vo_r,
                                d_l2r, d_w.merge);

  if (w.separable) {
    separable_attention_backward(cache.vo_r, cache.vo_l, w.sep, cache.sep_rl, d_r2l, d_vo_r,
                                 d_vo_l, d_w.sep);
    separable_attention_backward(cache.vo_l, cache.vo_r, w.sep, cache.sep_lr, d_l2r, d_vo_l,
                                 d_vo_r, d_w.sep);
  } else {
    CrossHandFeatures d_cf;
    d_cf.right_to_left = std::move(d_r2l);
    d_cf.left_to_right = std::move(d_l2r);
    cross_hand_attention_backward(cache.vo_l, cache.vo_r, w.cross, w.cross, settings.norm,
                                  cache.cross, d_cf, d_vo_l, d_vo_r, d_w.cross, d_w.cross);
  }

  // fusion backward for both hands; context gradient accumulates from both
  Tensor d_ctx = Tensor::zeros({d});
  auto fusion_backward = [&](const Tensor& cat, const Tensor& d_vo, Tensor& d_hand) {
    d_w.fuse_proj += matmul_tn(cat, d_vo);
    Tensor d_cat = matmul_nt(d_vo, w.fuse_proj);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        d_hand(i, j) += d_cat(i, j);
        d_ctx(j) += d_cat(i, d + j);
      }
    }
  };
  fusion_backward(cache.cat_l, d_vo_l, d_left);
  fusion_backward(cache.cat_r, d_vo_r, d_right);

  std::size_t m = cache.m_ctx.dim(0);
  Tensor d_m_ctx = Tensor::zeros(cache.m_ctx.shape);
  double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) d_m_ctx(i, j) = d_ctx(j) * inv_m;
  }

  Tensor d_attn = Tensor::zeros(cache.attn.weights.shape);
  Tensor d_f_x = Tensor::zeros(cache.f_x.shape);
  map_global_to_graph_backward(cache.attn, cache.f_x, d_m_ctx, d_attn, d_f_x);

  Tensor d_token_out = Tensor::zeros(tokens.shape);  // token output is discarded
  query_only_cross_attention_backward(cache.f_x, tokens, settings.attn, w.w_q, w.w_o, cache.qattn,
                                      d_token_out, d_attn, d_f_x, d_tokens, d_w.w_q, d_w.w_o);

  d_w.local_proj += matmul_tn(cache.flat, d_f_x);
  Tensor d_flat = matmul_nt(d_f_x, w.local_proj);
  d_y_t += unflatten_positions(d_flat, y_t.dim(0), y_t.dim(1), y_t.dim(2));
}

}  // namespace lwa
