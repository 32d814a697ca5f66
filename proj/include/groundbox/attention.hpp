#pragma once

// Multi-head self-attention over the object queries of one description.
//
// The configured hidden size is used as the feed-forward width. Per-head
// width is floor(hidden / heads), so the attention sublayers run at
// heads * floor(hidden / heads) (252 for 6 heads and hidden 256). The
// stack projects d into that width on entry and back to d on exit.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "groundbox/encoders.hpp"
#include "groundbox/errors.hpp"
#include "groundbox/tensor.hpp"

namespace groundbox {

struct AttentionConfig {
  std::size_t layers = 2;
  std::size_t heads = 6;
  std::size_t hidden = 256;
  double dropout = 0.2;
  bool positional_encoding = true;
  std::size_t max_length = 64;

  std::size_t head_width() const { return hidden / heads; }
  std::size_t model_width() const { return heads * head_width(); }
};

/// Softmax(Q·Kᵀ/sqrt(w)) for Q[n×w], K[m×w]; every row sums to one.
inline Tensor attention_weights(const Tensor& queries, const Tensor& keys) {
  if (queries.rank() != 2 || keys.rank() != 2 || queries.cols() != keys.cols()) {
    throw DimensionError("attention: query/key widths disagree: " + shape_str(queries.shape()) +
                         " vs " + shape_str(keys.shape()));
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  return softmax_rows(scale(matmul_nt(queries, keys), inv));
}

/// Row-wise attention: each output row is a convex combination of the rows
/// of `values`.
inline Tensor attend(const Tensor& queries, const Tensor& keys, const Tensor& values) {
  if (keys.rank() != 2 || keys.rows() == 0) throw ContractError("attention: empty key set");
  if (values.rank() != 2 || values.rows() != keys.rows()) {
    throw DimensionError("attention: keys " + shape_str(keys.shape()) + " and values " +
                         shape_str(values.shape()) + " hold different counts");
  }
  return matmul(attention_weights(queries, keys), values);
}

/// Column-layout form: q[d], K[d × T_k], V[d × T_k] -> [d].
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& keys, const Tensor& values) {
  if (keys.rank() != 2) throw ContractError("scaled_dot_attention: keys must be [d x T_k]");
  if (q.size() != keys.rows() || values.rank() != 2 || values.rows() != keys.rows() ||
      values.cols() != keys.cols()) {
    throw DimensionError("scaled_dot_attention: q " + shape_str(q.shape()) + ", K " +
                         shape_str(keys.shape()) + ", V " + shape_str(values.shape()));
  }
  auto row = reshape(q, {1, q.size()});
  auto out = attend(row, transpose(keys), transpose(values));
  return reshape(out, {q.size()});
}

struct AttentionLayer {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor norm1_gain, norm1_bias;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  Tensor norm2_gain, norm2_bias;
};

struct MultiHeadAttentionStack {
  AttentionConfig config;
  Tensor in_w, in_b;
  std::vector<AttentionLayer> layers;
  Tensor out_w, out_b;
  PositionalEncoding positional;

  static MultiHeadAttentionStack create(std::size_t embed_dim, const AttentionConfig& cfg,
                                        Rng& rng) {
    if (cfg.heads == 0 || cfg.layers == 0) throw ConfigError("attention needs >= 1 head and layer");
    if (cfg.hidden < cfg.heads) {
      throw ConfigError("attention hidden size " + std::to_string(cfg.hidden) +
                        " is smaller than the head count " + std::to_string(cfg.heads));
    }
    const std::size_t w = cfg.model_width();
    const std::size_t ff = cfg.hidden;
    MultiHeadAttentionStack s;
    s.config = cfg;
    s.in_w = init_uniform({w, embed_dim}, embed_dim, rng);
    s.in_b = init_uniform({w}, embed_dim, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      AttentionLayer layer;
      layer.wq = init_uniform({w, w}, w, rng);
      layer.bq = init_uniform({w}, w, rng);
      layer.wk = init_uniform({w, w}, w, rng);
      layer.bk = init_uniform({w}, w, rng);
      layer.wv = init_uniform({w, w}, w, rng);
      layer.bv = init_uniform({w}, w, rng);
      layer.wo = init_uniform({w, w}, w, rng);
      layer.bo = init_uniform({w}, w, rng);
      layer.norm1_gain = Tensor::full({w}, 1.0, true);
      layer.norm1_bias = Tensor::zeros({w}, true);
      layer.ff1_w = init_uniform({ff, w}, w, rng);
      layer.ff1_b = init_uniform({ff}, w, rng);
      layer.ff2_w = init_uniform({w, ff}, ff, rng);
      layer.ff2_b = init_uniform({w}, ff, rng);
      layer.norm2_gain = Tensor::full({w}, 1.0, true);
      layer.norm2_bias = Tensor::zeros({w}, true);
      s.layers.push_back(std::move(layer));
    }
    s.out_w = init_uniform({embed_dim, w}, w, rng);
    s.out_b = init_uniform({embed_dim}, w, rng);
    s.positional = PositionalEncoding(cfg.max_length, embed_dim);
    return s;
  }

  std::size_t embed_dim() const { return out_w.rows(); }
};

namespace detail {

inline Tensor multi_head(const Tensor& x, const AttentionLayer& layer, std::size_t heads,
                         std::size_t head_width) {
  auto q = linear(x, layer.wq, layer.bq);
  auto k = linear(x, layer.wk, layer.bk);
  auto v = linear(x, layer.wv, layer.bv);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t start = h * head_width;
    outputs.push_back(attend(slice_cols(q, start, head_width), slice_cols(k, start, head_width),
                             slice_cols(v, start, head_width)));
  }
  return linear(concat(outputs, 1), layer.wo, layer.bo);
}

}  // namespace detail

/// J(q_k) for every row of queries [O × d]; no causal mask, so every object
/// attends to every other. Returns [O × d].
inline Tensor self_attend(const Tensor& queries, const MultiHeadAttentionStack& stack,
                          bool training, Rng& rng) {
  if (queries.rank() != 2 || queries.rows() == 0 || queries.cols() != stack.embed_dim()) {
    throw DimensionError("self_attend: expected [O x " + std::to_string(stack.embed_dim()) +
                         "], got " + shape_str(queries.shape()));
  }
  const auto& cfg = stack.config;
  Tensor x = cfg.positional_encoding ? stack.positional.apply(queries) : queries;
  Tensor h = linear(x, stack.in_w, stack.in_b);
  for (const auto& layer : stack.layers) {
    auto att = dropout(detail::multi_head(h, layer, cfg.heads, cfg.head_width()), cfg.dropout,
                       training, rng);
    h = layer_norm_rows(add(h, att), layer.norm1_gain, layer.norm1_bias, 1e-6);
    auto ff = linear(relu(linear(h, layer.ff1_w, layer.ff1_b)), layer.ff2_w, layer.ff2_b);
    ff = dropout(ff, cfg.dropout, training, rng);
    h = layer_norm_rows(add(h, ff), layer.norm2_gain, layer.norm2_bias, 1e-6);
  }
  return linear(h, stack.out_w, stack.out_b);
}

}  // namespace groundbox
