#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "finetag/errors.hpp"
#include "finetag/label_matrix.hpp"

namespace finetag {

enum class LossKind { hinge, hinge_sum, smooth };

inline const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::hinge: return "hinge";
    case LossKind::hinge_sum: return "hinge-sum";
    case LossKind::smooth: return "smooth";
  }
  return "?";
}

// Ground-truth split of the label set for one image: Y (relevant) and its
// complement. Only the positives are stored; anything else is irrelevant.
struct RelevanceSets {
  std::vector<std::uint32_t> positives;  // sorted ascending
  std::uint32_t num_labels = 0;

  static RelevanceSets from_row(const LabelMatrix& labels, std::uint32_t row) {
    RelevanceSets rel;
    rel.positives = labels.positives_in_row(row);
    rel.num_labels = labels.cols();
    return rel;
  }

  // Ranking losses need at least one pair, i.e. 1 <= |Y| <= N-1.
  bool trainable() const {
    return !positives.empty() && positives.size() < num_labels;
  }

  std::vector<std::uint8_t> positive_mask() const {
    std::vector<std::uint8_t> mask(num_labels, 0);
    for (std::uint32_t u : positives) mask[u] = 1;
    return mask;
  }
};

template <typename S>
struct LossResult {
  double loss = 0.0;
  std::vector<S> grad;  // dL/dlogits, same length as logits
};

namespace detail {

template <typename S>
void check_loss_inputs(std::span<const S> logits, const RelevanceSets& rel) {
  if (logits.size() != rel.num_labels)
    throw Error(ErrorCode::LengthMismatch,
                "got " + std::to_string(logits.size()) + " scores for " +
                    std::to_string(rel.num_labels) + " labels");
  if (rel.positives.empty())
    throw Error(ErrorCode::EmptyPositiveSet, "image has no relevant labels");
  if (rel.positives.size() >= rel.num_labels)
    throw Error(ErrorCode::EmptyNegativeSet, "image has no irrelevant labels");
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!std::isfinite(double(logits[i])))
      throw Error(ErrorCode::NonFiniteLogit,
                  "score for label " + std::to_string(i) + " is not finite");
}

}  // namespace detail

// Worst-violator hinge: max over pairs (v not in Y, u in Y) of
// max(0, 1 + f_v - f_u). The subgradient touches only the arg-max pair;
// ties resolve to the lowest (v, u) indices, and a non-violated margin
// yields a zero gradient. With sum_pairs the loss instead sums the hinge
// over every pair and the gradient counts active pairs per label.
template <typename S>
LossResult<S> hinge_rank_loss(std::span<const S> logits, const RelevanceSets& rel,
                              bool sum_pairs = false) {
  detail::check_loss_inputs(logits, rel);
  const auto mask = rel.positive_mask();

  LossResult<S> out;
  out.grad.assign(logits.size(), S{});

  if (sum_pairs) {
    double total = 0.0;
    for (std::uint32_t v = 0; v < rel.num_labels; ++v) {
      if (mask[v]) continue;
      for (std::uint32_t u : rel.positives) {
        double h = 1.0 + double(logits[v]) - double(logits[u]);
        if (h > 0.0) {
          total += h;
          out.grad[v] = S(double(out.grad[v]) + 1.0);
          out.grad[u] = S(double(out.grad[u]) - 1.0);
        }
      }
    }
    out.loss = total;
    return out;
  }

  // The maximizing pair decomposes: highest-scored v, lowest-scored u.
  std::uint32_t worst_v = 0;
  bool have_v = false;
  for (std::uint32_t v = 0; v < rel.num_labels; ++v) {
    if (mask[v]) continue;
    if (!have_v || double(logits[v]) > double(logits[worst_v])) {
      worst_v = v;
      have_v = true;
    }
  }
  std::uint32_t worst_u = rel.positives.front();
  for (std::uint32_t u : rel.positives)
    if (double(logits[u]) < double(logits[worst_u])) worst_u = u;

  double h = 1.0 + double(logits[worst_v]) - double(logits[worst_u]);
  if (h > 0.0) {
    out.loss = h;
    out.grad[worst_v] = S(1);
    out.grad[worst_u] = S(-1);
  }
  return out;
}

// Smooth surrogate: log(1 + sum over pairs of exp(f_v - f_u)). The pair sum
// factorizes over the two sets, so both the loss and the soft pair weights
// come out in O(N) with shifted exponentials for stability.
template <typename S>
LossResult<S> smooth_rank_loss(std::span<const S> logits, const RelevanceSets& rel) {
  detail::check_loss_inputs(logits, rel);
  const auto mask = rel.positive_mask();

  double max_neg = -std::numeric_limits<double>::infinity();
  double min_pos = std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < rel.num_labels; ++i) {
    double f = double(logits[i]);
    if (mask[i]) min_pos = std::min(min_pos, f);
    else max_neg = std::max(max_neg, f);
  }

  double neg_sum = 0.0;  // sum over v of exp(f_v - max_neg), each term <= 1
  double pos_sum = 0.0;  // sum over u of exp(min_pos - f_u)
  for (std::uint32_t i = 0; i < rel.num_labels; ++i) {
    double f = double(logits[i]);
    if (mask[i]) pos_sum += std::exp(min_pos - f);
    else neg_sum += std::exp(f - max_neg);
  }

  // Largest pair difference, clamped at zero so the "+1" term cannot
  // underflow away: L = m + log(exp(-m) + sum exp(d - m)).
  const double d_max = max_neg - min_pos;
  const double m = std::max(0.0, d_max);
  const double pair_scale = std::exp(d_max - m);
  const double total = std::exp(-m) + neg_sum * pos_sum * pair_scale;

  LossResult<S> out;
  out.loss = m + std::log(total);
  out.grad.assign(logits.size(), S{});
  for (std::uint32_t i = 0; i < rel.num_labels; ++i) {
    double f = double(logits[i]);
    if (mask[i])
      out.grad[i] = S(-std::exp(min_pos - f) * neg_sum * pair_scale / total);
    else
      out.grad[i] = S(std::exp(f - max_neg) * pos_sum * pair_scale / total);
  }
  return out;
}

template <typename S>
LossResult<S> rank_loss(LossKind kind, std::span<const S> logits,
                        const RelevanceSets& rel) {
  switch (kind) {
    case LossKind::hinge: return hinge_rank_loss(logits, rel, false);
    case LossKind::hinge_sum: return hinge_rank_loss(logits, rel, true);
    case LossKind::smooth: return smooth_rank_loss(logits, rel);
  }
  throw Error(ErrorCode::BadFormat, "unknown loss kind");
}

template <typename S>
struct BatchLossResult {
  double mean_loss = 0.0;
  // Per-image gradients already divided by the number of counted images;
  // empty vectors mark skipped images.
  std::vector<std::vector<S>> grads;
  std::uint32_t counted = 0;
  std::uint32_t skipped = 0;
};

// Mean loss over the batch. Images whose label set admits no ranking pair
// are skipped and counted rather than treated as errors; a batch with no
// usable image at all is one.
template <typename S>
BatchLossResult<S> batch_loss(LossKind kind, const std::vector<std::vector<S>>& logits,
                              const std::vector<RelevanceSets>& rels) {
  if (logits.size() != rels.size())
    throw Error(ErrorCode::LengthMismatch,
                "batch has " + std::to_string(logits.size()) + " score vectors and " +
                    std::to_string(rels.size()) + " label sets");

  BatchLossResult<S> out;
  out.grads.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!rels[i].trainable()) {
      ++out.skipped;
      continue;
    }
    LossResult<S> one = rank_loss<S>(kind, logits[i], rels[i]);
    total += one.loss;
    out.grads[i] = std::move(one.grad);
    ++out.counted;
  }
  if (out.counted == 0)
    throw Error(ErrorCode::AllImagesSkipped,
                "no image in the batch has a usable label set");

  out.mean_loss = total / out.counted;
  if (!std::isfinite(out.mean_loss))
    throw Error(ErrorCode::NonFiniteLoss, "batch loss is not finite");
  const double inv = 1.0 / out.counted;
  for (auto& g : out.grads)
    for (auto& v : g) v = S(double(v) * inv);
  return out;
}

}  // namespace finetag
