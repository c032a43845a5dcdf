#pragma once

#include "dpq/common.hpp"

namespace dpq {

/// K codewords of a common dimension, one layer of the progressive cascade.
/// Layer ids are 1-based to match code layout order.
struct Codebook {
  int layer_id = 1;
  Matrix codewords;  // K x dim

  Codebook() = default;
  Codebook(int layer, Matrix words) : layer_id(layer), codewords(std::move(words)) {}

  std::size_t size() const { return codewords.rows(); }
  std::size_t dim() const { return codewords.cols(); }
  ConstSpan codeword(std::size_t k) const { return codewords.row(k); }
};

inline void validate_codebook(const Codebook& cb) {
  require(cb.size() >= 1, "codebook must hold at least one codeword");
  for (std::size_t k = 0; k < cb.size(); ++k)
    require(all_finite(cb.codeword(k)), "codebook entries must be finite");
}

}  // namespace dpq
