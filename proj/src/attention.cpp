#include "lwa/attention.hpp"

#include <cmath>

namespace lwa {

void MultiHeadConfig::validate() const {
  if (heads == 0 || model_dim == 0 || tokens == 0) {
    throw ValidationError("attention config: heads, model_dim and tokens must be positive");
  }
  if (model_dim % heads != 0) {
    throw ValidationError("attention config: model_dim " + std::to_string(model_dim) +
                          " not divisible by heads " + std::to_string(heads));
  }
}

void AttentionMap::validate(double tol) const {
  if (weights.rank() != 2) {
    throw ValidationError("attention map must be a matrix, got " + shape_str(weights.shape));
  }
  for (std::size_t i = 0; i < weights.dim(0); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < weights.dim(1); ++j) {
      double v = weights(i, j);
      if (v < -tol || v > 1.0 + tol) {
        throw NumericError("attention map entry out of [0,1] at row " + std::to_string(i));
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw NumericError("attention map row " + std::to_string(i) + " sums to " +
                         std::to_string(sum));
    }
  }
}

double AttentionMap::max_row_sum_deviation() const {
  double dev = 0.0;
  for (std::size_t i = 0; i < weights.dim(0); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < weights.dim(1); ++j) sum += weights(i, j);
    dev = std::max(dev, std::abs(sum - 1.0));
  }
  return dev;
}

namespace {

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t w) {
  Tensor out = Tensor::zeros({x.dim(0), w});
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t j = 0; j < w; ++j) out(i, j) = x(i, c0 + j);
  }
  return out;
}

void add_cols(Tensor& dst, const Tensor& src, std::size_t c0) {
  for (std::size_t i = 0; i < src.dim(0); ++i) {
    for (std::size_t j = 0; j < src.dim(1); ++j) dst(i, c0 + j) += src(i, j);
  }
}

void set_cols(Tensor& dst, const Tensor& src, std::size_t c0) {
  for (std::size_t i = 0; i < src.dim(0); ++i) {
    for (std::size_t j = 0; j < src.dim(1); ++j) dst(i, c0 + j) = src(i, j);
  }
}

void check_projection(const Tensor& w, std::size_t d, const char* name) {
  if (w.rank() != 2 || w.dim(0) != d || w.dim(1) != d) {
    throw ValidationError(std::string(name) + ": expected [" + std::to_string(d) + "x" +
                          std::to_string(d) + "], got " + shape_str(w.shape));
  }
}

}  // namespace

QueryCrossAttentionResult query_only_cross_attention(const Tensor& local, const Tensor& tokens,
                                                     const MultiHeadConfig& cfg,
                                                     const std::vector<Tensor>& w_q,
                                                     const Tensor& w_o,
                                                     QueryCrossAttentionCache* cache) {
  cfg.validate();
  std::size_t d = cfg.model_dim, h = cfg.heads, dh = cfg.head_dim();
  if (local.rank() != 2 || local.dim(1) != d) {
    throw ValidationError("query_only_cross_attention: local shape " + shape_str(local.shape) +
                          " does not match model_dim " + std::to_string(d));
  }
  if (tokens.rank() != 2 || tokens.dim(0) != cfg.tokens || tokens.dim(1) != d) {
    throw ValidationError("query_only_cross_attention: token shape " + shape_str(tokens.shape) +
                          " does not match config");
  }
  if (w_q.size() != h) {
    throw ValidationError("query_only_cross_attention: expected " + std::to_string(h) +
                          " per-head query projections, got " + std::to_string(w_q.size()));
  }
  check_projection(w_o, d, "query_only_cross_attention w_o");

  std::size_t m = cfg.tokens, p = local.dim(0);
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  QueryCrossAttentionCache local_cache;
  QueryCrossAttentionCache& c = cache ? *cache : local_cache;
  c.queries.clear();
  c.head_map.clear();
  c.context = Tensor::zeros({m, d});

  Tensor avg = Tensor::zeros({m, p});
  for (std::size_t head = 0; head < h; ++head) {
    if (w_q[head].rank() != 2 || w_q[head].dim(0) != dh || w_q[head].dim(1) != dh) {
      throw ValidationError("query_only_cross_attention: per-head w_q must be [" +
                            std::to_string(dh) + "x" + std::to_string(dh) + "], got " +
                            shape_str(w_q[head].shape));
    }
    Tensor zh = slice_cols(tokens, head * dh, dh);
    Tensor xh = slice_cols(local, head * dh, dh);
    Tensor q = matmul(zh, w_q[head]);
    Tensor scores = matmul_nt(q, xh);
    scores *= scale;
    Tensor a = softmax_rows(scores);
    Tensor ctx = matmul(a, xh);
    set_cols(c.context, ctx, head * dh);
    avg += a;
    c.queries.push_back(std::move(q));
    c.head_map.push_back(std::move(a));
  }
  avg *= 1.0 / static_cast<double>(h);

  QueryCrossAttentionResult res;
  res.attn.weights = std::move(avg);
  res.tokens_out = matmul(c.context, w_o);
  return res;
}

void query_only_cross_attention_backward(const Tensor& local, const Tensor& tokens,
                                         const MultiHeadConfig& cfg,
                                         const std::vector<Tensor>& w_q, const Tensor& w_o,
                                         const QueryCrossAttentionCache& cache,
                                         const Tensor& d_tokens_out, const Tensor& d_attn,
                                         Tensor& d_local, Tensor& d_tokens,
                                         std::vector<Tensor>& d_wq, Tensor& d_wo) {
  std::size_t h = cfg.heads, dh = cfg.head_dim();
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  bool has_attn_grad = d_attn.size() > 0;

  d_wo += matmul_tn(cache.context, d_tokens_out);
  Tensor d_ctx_all = matmul_nt(d_tokens_out, w_o);

  for (std::size_t head = 0; head < h; ++head) {
    Tensor zh = slice_cols(tokens, head * dh, dh);
    Tensor xh = slice_cols(local, head * dh, dh);
    const Tensor& a = cache.head_map[head];
    const Tensor& q = cache.queries[head];

    Tensor d_ctx = slice_cols(d_ctx_all, head * dh, dh);
    Tensor d_a = matmul_nt(d_ctx, xh);
    if (has_attn_grad) {
      Tensor part = d_attn;
      part *= 1.0 / static_cast<double>(h);
      d_a += part;
    }
    Tensor d_xh = matmul_tn(a, d_ctx);

    Tensor d_scores = softmax_rows_backward(a, d_a);
    d_scores *= scale;
    Tensor d_q = matmul(d_scores, xh);
    d_xh += matmul_tn(d_scores, q);

    Tensor d_zh = matmul_nt(d_q, w_q[head]);
    d_wq[head] += matmul_tn(zh, d_q);

    add_cols(d_local, d_xh, head * dh);
    add_cols(d_tokens, d_zh, head * dh);
  }
}

Tensor map_global_to_graph(const AttentionMap& attn, const Tensor& local) {
  if (attn.weights.dim(1) != local.dim(0)) {
    throw ValidationError("map_global_to_graph: attention has " +
                          std::to_string(attn.weights.dim(1)) + " positions but local has " +
                          std::to_string(local.dim(0)));
  }
  return matmul(attn.weights, local);
}

void map_global_to_graph_backward(const AttentionMap& attn, const Tensor& local,
                                  const Tensor& d_out, Tensor& d_attn, Tensor& d_local) {
  d_attn += matmul_nt(d_out, local);
  d_local += matmul_tn(attn.weights, d_out);
}

CrossHandFeatures cross_hand_attention(const Tensor& left, const Tensor& right,
                                       const CrossHandWeights& left_w,
                                       const CrossHandWeights& right_w, double norm,
                                       CrossHandCache* cache) {
  if (left.rank() != 2 || right.rank() != 2 || !left.same_shape(right)) {
    throw ValidationError("cross_hand_attention: level mismatch between hands, " +
                          shape_str(left.shape) + " vs " + shape_str(right.shape));
  }
  std::size_t d = left.dim(1);
  check_projection(left_w.w_q, d, "cross_hand w_q");
  check_projection(left_w.w_k, d, "cross_hand w_k");
  check_projection(left_w.w_v, d, "cross_hand w_v");
  if (norm <= 0.0) throw ValidationError("cross_hand_attention: norm must be positive");

  CrossHandCache local_cache;
  CrossHandCache& c = cache ? *cache : local_cache;
  c.ql = matmul(left, left_w.w_q);
  c.kl = matmul(left, left_w.w_k);
  c.vl = matmul(left, left_w.w_v);
  c.qr = matmul(right, right_w.w_q);
  c.kr = matmul(right, right_w.w_k);
  c.vr = matmul(right, right_w.w_v);

  Tensor s_rl = matmul_nt(c.ql, c.kr);
  s_rl *= 1.0 / norm;
  c.attn_rl = softmax_rows(s_rl);
  Tensor s_lr = matmul_nt(c.qr, c.kl);
  s_lr *= 1.0 / norm;
  c.attn_lr = softmax_rows(s_lr);

  CrossHandFeatures out;
  out.right_to_left = matmul(c.attn_rl, c.vr);
  out.left_to_right = matmul(c.attn_lr, c.vl);
  return out;
}

void cross_hand_attention_backward(const Tensor& left, const Tensor& right,
                                   const CrossHandWeights& left_w, const CrossHandWeights& right_w,
                                   double norm, const CrossHandCache& cache,
                                   const CrossHandFeatures& d_out, Tensor& d_left, Tensor& d_right,
                                   CrossHandWeights& d_left_w, CrossHandWeights& d_right_w) {
  double inv = 1.0 / norm;

  Tensor d_ql = Tensor::zeros(cache.ql.shape), d_kl = Tensor::zeros(cache.kl.shape),
         d_vl = Tensor::zeros(cache.vl.shape);
  Tensor d_qr = Tensor::zeros(cache.qr.shape), d_kr = Tensor::zeros(cache.kr.shape),
         d_vr = Tensor::zeros(cache.vr.shape);

  // R->L direction: softmax(ql kr^T / norm) vr
  {
    const Tensor& a = cache.attn_rl;
    d_vr += matmul_tn(a, d_out.right_to_left);
    Tensor d_a = matmul_nt(d_out.right_to_left, cache.vr);
    Tensor d_s = softmax_rows_backward(a, d_a);
    d_s *= inv;
    d_ql += matmul(d_s, cache.kr);
    d_kr += matmul_tn(d_s, cache.ql);
  }
  // L->R direction
  {
    const Tensor& a = cache.attn_lr;
    d_vl += matmul_tn(a, d_out.left_to_right);
    Tensor d_a = matmul_nt(d_out.left_to_right, cache.vl);
    Tensor d_s = softmax_rows_backward(a, d_a);
    d_s *= inv;
    d_qr += matmul(d_s, cache.kl);
    d_kl += matmul_tn(d_s, cache.qr);
  }

  d_left += matmul_nt(d_ql, left_w.w_q);
  d_left += matmul_nt(d_kl, left_w.w_k);
  d_left += matmul_nt(d_vl, left_w.w_v);
  d_left_w.w_q += matmul_tn(left, d_ql);
  d_left_w.w_k += matmul_tn(left, d_kl);
  d_left_w.w_v += matmul_tn(left, d_vl);

  d_right += matmul_nt(d_qr, right_w.w_q);
  d_right += matmul_nt(d_kr, right_w.w_k);
  d_right += matmul_nt(d_vr, right_w.w_v);
  d_right_w.w_q += matmul_tn(right, d_qr);
  d_right_w.w_k += matmul_tn(right, d_kr);
  d_right_w.w_v += matmul_tn(right, d_vr);
}

Tensor merge_cross_features(const Tensor& own, const Tensor& incoming, const MergeMlp& mlp,
                            MergeCache* cache) {
  if (!own.same_shape(incoming)) {
    throw ValidationError("merge_cross_features: shape mismatch " + shape_str(own.shape) +
                          " vs " + shape_str(incoming.shape));
  }
  MergeCache local_cache;
  MergeCache& c = cache ? *cache : local_cache;
  c.sum = own + incoming;
  c.hidden = matmul(c.sum, mlp.w1);
  c.act = apply_activation(c.hidden, mlp.act);
  return matmul(c.act, mlp.w2);
}

void merge_cross_features_backward(const Tensor& own, const Tensor& incoming, const MergeMlp& mlp,
                                   const MergeCache& cache, const Tensor& d_out, Tensor& d_own,
                                   Tensor& d_incoming, MergeMlp& d_mlp) {
  (void)own;
  (void)incoming;
  Tensor d_act = matmul_nt(d_out, mlp.w2);
  d_mlp.w2 += matmul_tn(cache.act, d_out);
  Tensor d_hidden = activation_backward(cache.hidden, d_act, mlp.act);
  Tensor d_sum = matmul_nt(d_hidden, mlp.w1);
  d_mlp.w1 += matmul_tn(cache.sum, d_hidden);
  d_own += d_sum;
  d_incoming += d_sum;
}

SeparableCombine separable_combine_from_string(const std::string& s) {
  if (s == "mul_proj") return SeparableCombine::MulProj;
  if (s == "mul") return SeparableCombine::Mul;
  throw ValidationError("unknown separable combine mode \"" + s +
                        "\" (expected \"mul_proj\" or \"mul\")");
}

Tensor separable_attention(const Tensor& context_src, const Tensor& value_src,
                           const SeparableWeights& w, SeparableCache* cache) {
  if (context_src.rank() != 2 || value_src.rank() != 2 ||
      context_src.dim(1) != value_src.dim(1)) {
    throw ValidationError("separable_attention: incompatible inputs " +
                          shape_str(context_src.shape) + " vs " + shape_str(value_src.shape));
  }
  std::size_t k = context_src.dim(0), d = context_src.dim(1);
  if (w.w_i.rank() != 1 || w.w_i.dim(0) != d) {
    throw ValidationError("separable_attention: w_i must be a length-" + std::to_string(d) +
                          " vector, got " + shape_str(w.w_i.shape));
  }
  check_projection(w.w_k, d, "separable w_k");
  check_projection(w.w_v, d, "separable w_v");
  if (w.combine == SeparableCombine::MulProj) check_projection(w.w_o, d, "separable w_o");

  SeparableCache local_cache;
  SeparableCache& c = cache ? *cache : local_cache;

  c.scores_raw = Tensor::zeros({k});
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += context_src(i, j) * w.w_i(j);
    c.scores_raw(i) = acc;
  }
  c.context_scores = softmax(c.scores_raw, 0);
  c.keys = matmul(context_src, w.w_k);
  c.context_vec = Tensor::zeros({d});
  for (std::size_t i = 0; i < k; ++i) {
    double s = c.context_scores(i);
    for (std::size_t j = 0; j < d; ++j) c.context_vec(j) += s * c.keys(i, j);
  }
  c.value_pre = matmul(value_src, w.w_v);
  c.values = apply_activation(c.value_pre, w.act);
  c.gated = Tensor::zeros({value_src.dim(0), d});
  for (std::size_t i = 0; i < value_src.dim(0); ++i) {
    for (std::size_t j = 0; j < d; ++j) c.gated(i, j) = c.values(i, j) * c.context_vec(j);
  }
  if (w.combine == SeparableCombine::Mul) return c.gated;
  return matmul(c.gated, w.w_o);
}

void separable_attention_backward(const Tensor& context_src, const Tensor& value_src,
                                  const SeparableWeights& w, const SeparableCache& cache,
                                  const Tensor& d_out, Tensor& d_context_src, Tensor& d_value_src,
                                  SeparableWeights& d_w) {
  std::size_t k = context_src.dim(0), d = context_src.dim(1);
  std::size_t kv = value_src.dim(0);

  Tensor d_gated;
  if (w.combine == SeparableCombine::Mul) {
    d_gated = d_out;
  } else {
    d_gated = matmul_nt(d_out, w.w_o);
    d_w.w_o += matmul_tn(cache.gated, d_out);
  }

  Tensor d_values = Tensor::zeros(cache.values.shape);
  Tensor d_cv = Tensor::zeros({d});
  for (std::size_t i = 0; i < kv; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      d_values(i, j) = d_gated(i, j) * cache.context_vec(j);
      d_cv(j) += d_gated(i, j) * cache.values(i, j);
    }
  }
  Tensor d_value_pre = activation_backward(cache.value_pre, d_values, w.act);
  d_value_src += matmul_nt(d_value_pre, w.w_v);
  d_w.w_v += matmul_tn(value_src, d_value_pre);

  Tensor d_keys = Tensor::zeros(cache.keys.shape);
  Tensor d_cs = Tensor::zeros({k});
  for (std::size_t i = 0; i < k; ++i) {
    double s = cache.context_scores(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      d_keys(i, j) = s * d_cv(j);
      acc += cache.keys(i, j) * d_cv(j);
    }
    d_cs(i) = acc;
  }

  // softmax backward on the score vector
  double dot = 0.0;
  for (std::size_t i = 0; i < k; ++i) dot += d_cs(i) * cache.context_scores(i);
  for (std::size_t i = 0; i < k; ++i) {
    double d_s = cache.context_scores(i) * (d_cs(i) - dot);
    for (std::size_t j = 0; j < d; ++j) {
      d_context_src(i, j) += d_s * w.w_i(j);
      d_w.w_i(j) += d_s * context_src(i, j);
    }
  }

  d_context_src += matmul_nt(d_keys, w.w_k);
  d_w.w_k += matmul_tn(context_src, d_keys);
}

Tensor separable_self_attention(const Tensor& x, const SeparableWeights& w,
                                SeparableCache* cache) {
  return separable_attention(x, x, w, cache);
}

}  // namespace lwa
