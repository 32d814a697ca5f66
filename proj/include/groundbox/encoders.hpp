#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "groundbox/errors.hpp"
#include "groundbox/tensor.hpp"

namespace groundbox {

/// Scaled-uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

/// Hidden width of the two-layer proposal encoder: round(sqrt(in * out)).
inline std::size_t proposal_hidden_width(std::size_t input_dim, std::size_t embed_dim) {
  auto h = static_cast<std::size_t>(
      std::llround(std::sqrt(static_cast<double>(input_dim) * static_cast<double>(embed_dim))));
  return h == 0 ? 1 : h;
}

/// One-hot label embedding: a bias-free linear map stored as [d × V].
struct QueryEncoder {
  Tensor weight;

  static QueryEncoder create(std::size_t vocab_size, std::size_t embed_dim, Rng& rng) {
    return {init_uniform({embed_dim, vocab_size}, vocab_size, rng)};
  }

  std::size_t vocab_size() const { return weight.cols(); }
  std::size_t embed_dim() const { return weight.rows(); }
};

inline void check_label(std::size_t label, const QueryEncoder& enc) {
  if (label >= enc.vocab_size()) {
    throw VocabularyError("label index " + std::to_string(label) + " outside vocabulary of size " +
                          std::to_string(enc.vocab_size()));
  }
}

/// Embedding of a single label: column `label` of the weight matrix, as [d].
inline Tensor encode_query(std::size_t label, const QueryEncoder& enc) {
  check_label(label, enc);
  return reshape(gather_cols(enc.weight, {label}), {enc.embed_dim()});
}

/// Embeddings for a label sequence, one row per label: [O × d].
inline Tensor encode_queries(const std::vector<std::size_t>& labels, const QueryEncoder& enc) {
  if (labels.empty()) throw ContractError("encode_queries: empty label list");
  for (auto l : labels) check_label(l, enc);
  return transpose(gather_cols(enc.weight, labels));
}

/// Two linear layers taking raw region features to the common embedding
/// space, with dropout and ReLU after the first.
struct ProposalEncoder {
  Tensor w1, b1, w2, b2;
  double dropout = 0.2;

  static ProposalEncoder create(std::size_t input_dim, std::size_t embed_dim, double dropout_p,
                                Rng& rng) {
    const std::size_t h = proposal_hidden_width(input_dim, embed_dim);
    ProposalEncoder enc;
    enc.w1 = init_uniform({h, input_dim}, input_dim, rng);
    enc.b1 = init_uniform({h}, input_dim, rng);
    enc.w2 = init_uniform({embed_dim, h}, h, rng);
    enc.b2 = init_uniform({embed_dim}, h, rng);
    enc.dropout = dropout_p;
    return enc;
  }

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t embed_dim() const { return w2.rows(); }
};

/// Encodes a batch of features [M × D_in] into [M × d].
inline Tensor encode_proposals(const Tensor& features, const ProposalEncoder& enc, bool training,
                               Rng& rng) {
  if (features.rank() != 2 || features.cols() != enc.input_dim()) {
    throw DimensionError("encode_proposals: expected [M x " + std::to_string(enc.input_dim()) +
                         "] features, got " + shape_str(features.shape()));
  }
  auto hidden = relu(dropout(linear(features, enc.w1, enc.b1), enc.dropout, training, rng));
  return linear(hidden, enc.w2, enc.b2);
}

/// Single-feature form: [D_in] -> [d].
inline Tensor encode_proposal(const Tensor& feature, const ProposalEncoder& enc, bool training,
                              Rng& rng) {
  if (feature.size() != enc.input_dim()) {
    throw DimensionError("encode_proposal: feature length " + std::to_string(feature.size()) +
                         " != " + std::to_string(enc.input_dim()));
  }
  auto row = reshape(feature, {1, feature.size()});
  return reshape(encode_proposals(row, enc, training, rng), {enc.embed_dim()});
}

/// Sinusoidal position table: PE(pos, 2i) = sin(pos / 10000^(2i/width)),
/// PE(pos, 2i+1) = cos(same angle).
class PositionalEncoding {
 public:
  PositionalEncoding() = default;
  PositionalEncoding(std::size_t max_length, std::size_t width)
      : max_length_(max_length), width_(width), table_(max_length * width) {
    for (std::size_t pos = 0; pos < max_length; ++pos) {
      for (std::size_t c = 0; c < width; ++c) {
        const double exponent = static_cast<double>(c - c % 2) / static_cast<double>(width);
        const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
        table_[pos * width + c] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    }
  }

  std::size_t max_length() const { return max_length_; }
  std::size_t width() const { return width_; }
  double value(std::size_t pos, std::size_t c) const { return table_[pos * width_ + c]; }

  /// Adds table rows 0..L-1 to sequence [L × width].
  Tensor apply(const Tensor& sequence) const {
    if (sequence.rank() != 2 || sequence.cols() != width_) {
      throw DimensionError("positional_encode: expected [L x " + std::to_string(width_) +
                           "], got " + shape_str(sequence.shape()));
    }
    const std::size_t length = sequence.rows();
    if (length > max_length_) {
      throw LengthError("positional_encode: sequence length " + std::to_string(length) +
                        " exceeds table length " + std::to_string(max_length_));
    }
    std::vector<double> rows(table_.begin(),
                             table_.begin() + static_cast<std::ptrdiff_t>(length * width_));
    return add(sequence, Tensor::matrix(length, width_, std::move(rows)));
  }

 private:
  std::size_t max_length_ = 0;
  std::size_t width_ = 0;
  std::vector<double> table_;
};

inline Tensor positional_encode(const Tensor& sequence, const PositionalEncoding& pe) {
  return pe.apply(sequence);
}

}  // namespace groundbox
