#pragma once

#include <cstdint>
#include <string>

#include "finetag/errors.hpp"
#include "finetag/tensor.hpp"

namespace finetag {

// Sum over all spatial locations of the outer product of the two feature
// vectors: out[i,j] = sum_{h,w} alpha[i,h,w] * beta[j,h,w]. The 64-bit
// accumulator keeps the C1*C2*H*W-term sums stable for f32 inputs.
template <typename S>
Matrix<S> bilinear_pool_forward(const Tensor3<S>& alpha, const Tensor3<S>& beta) {
  if (alpha.height() != beta.height() || alpha.width() != beta.width())
    throw Error(ErrorCode::SpatialShapeMismatch,
                "alpha is " + std::to_string(alpha.height()) + "x" +
                    std::to_string(alpha.width()) + ", beta is " +
                    std::to_string(beta.height()) + "x" + std::to_string(beta.width()));
  const std::uint32_t c1 = alpha.channels();
  const std::uint32_t c2 = beta.channels();
  const std::uint32_t locations = alpha.locations();
  Matrix<S> out(c1, c2);
  for (std::uint32_t i = 0; i < c1; ++i) {
    for (std::uint32_t j = 0; j < c2; ++j) {
      double acc = 0.0;
      for (std::uint32_t loc = 0; loc < locations; ++loc)
        acc += double(alpha.data()[std::size_t(i) * locations + loc]) *
               double(beta.data()[std::size_t(j) * locations + loc]);
      out(i, j) = S(acc);
    }
  }
  return out;
}

template <typename S>
struct BilinearGrads {
  Tensor3<S> alpha;
  Tensor3<S> beta;
};

// grad_alpha[i,h,w] = sum_j grad_out[i,j] * beta[j,h,w]
// grad_beta[j,h,w]  = sum_i grad_out[i,j] * alpha[i,h,w]
template <typename S>
BilinearGrads<S> bilinear_pool_backward(const Matrix<S>& grad_out, const Tensor3<S>& alpha,
                                        const Tensor3<S>& beta) {
  if (alpha.height() != beta.height() || alpha.width() != beta.width() ||
      grad_out.rows() != alpha.channels() || grad_out.cols() != beta.channels())
    throw Error(ErrorCode::ShapeMismatch, "bilinear backward shape mismatch");

  const std::uint32_t c1 = alpha.channels();
  const std::uint32_t c2 = beta.channels();
  const std::uint32_t locations = alpha.locations();
  BilinearGrads<S> grads{Tensor3<S>(c1, alpha.height(), alpha.width()),
                         Tensor3<S>(c2, beta.height(), beta.width())};
  for (std::uint32_t i = 0; i < c1; ++i) {
    for (std::uint32_t loc = 0; loc < locations; ++loc) {
      double acc = 0.0;
      for (std::uint32_t j = 0; j < c2; ++j)
        acc += double(grad_out(i, j)) * double(beta.data()[std::size_t(j) * locations + loc]);
      grads.alpha.data()[std::size_t(i) * locations + loc] = S(acc);
    }
  }
  for (std::uint32_t j = 0; j < c2; ++j) {
    for (std::uint32_t loc = 0; loc < locations; ++loc) {
      double acc = 0.0;
      for (std::uint32_t i = 0; i < c1; ++i)
        acc += double(grad_out(i, j)) * double(alpha.data()[std::size_t(i) * locations + loc]);
      grads.beta.data()[std::size_t(j) * locations + loc] = S(acc);
    }
  }
  return grads;
}

}  // namespace finetag
