#pragma once

// Brute-force reference implementations, used only by tests. Each one
// rederives its result from the written-out definition with plain scalar
// loops and no shared code with the library paths it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "finetag/errors.hpp"
#include "finetag/model.hpp"
#include "finetag/tensor.hpp"

namespace testsupport::oracle {

using finetag::Error;
using finetag::ErrorCode;
using finetag::Matrix;
using finetag::ModelConfig;
using finetag::ModelParams;
using finetag::Tensor3;

// --------------------------------------------------------------------------
// Forward pass with nothing but index arithmetic: 1x1 projection, bilinear
// outer-product pooling, flatten, affine map. 64-bit throughout.
inline std::vector<double> naive_forward(const ModelConfig& config,
                                         const ModelParams<double>& params,
                                         const Tensor3<double>& alpha) {
  if (alpha.channels() != config.channels)
    throw Error(ErrorCode::ShapeMismatch, "oracle: channel mismatch");
  const std::uint32_t c = config.channels, k = config.components, n = config.num_classes;
  const std::uint32_t hh = alpha.height(), ww = alpha.width();

  // beta[j,h,w] = sum_i weights[i,j]*alpha[i,h,w] + bias[j]
  std::vector<double> beta(std::size_t(k) * hh * ww, 0.0);
  for (std::uint32_t j = 0; j < k; ++j)
    for (std::uint32_t h = 0; h < hh; ++h)
      for (std::uint32_t w = 0; w < ww; ++w) {
        double acc = params.proj_bias[j];
        for (std::uint32_t i = 0; i < c; ++i)
          acc += params.proj_weights(i, j) * alpha.at(i, h, w);
        beta[(std::size_t(j) * hh + h) * ww + w] = acc;
      }

  // pooled[i,j] = sum_{h,w} alpha[i,h,w]*beta[j,h,w]
  std::vector<double> pooled(std::size_t(c) * k, 0.0);
  for (std::uint32_t i = 0; i < c; ++i)
    for (std::uint32_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::uint32_t h = 0; h < hh; ++h)
        for (std::uint32_t w = 0; w < ww; ++w)
          acc += alpha.at(i, h, w) * beta[(std::size_t(j) * hh + h) * ww + w];
      pooled[std::size_t(i) * k + j] = acc;
    }

  if (config.bcnn_normalize) {
    double sq = 0.0;
    for (double& v : pooled) {
      v = (v >= 0 ? 1.0 : -1.0) * std::sqrt(std::abs(v));
      sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm < 1e-12) norm = 1e-12;
    for (double& v : pooled) v /= norm;
  }

  // logits[t] = sum_{i,j} pooled[i*k+j]*fc_weights(i*k+j, t) + fc_bias[t]
  std::vector<double> logits(n, 0.0);
  for (std::uint32_t t = 0; t < n; ++t) {
    double acc = params.fc_bias[t];
    for (std::uint32_t f = 0; f < c * k; ++f) acc += pooled[f] * params.fc_weights(f, t);
    logits[t] = acc;
  }
  return logits;
}

// --------------------------------------------------------------------------
// Central finite differences: mutates point[i] by ±step, calls f, restores.
inline std::vector<double> fd_gradient(const std::function<double()>& f,
                                       std::span<double> point, double step = 1e-5) {
  std::vector<double> grad(point.size(), 0.0);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + step;
    const double up = f();
    point[i] = saved - step;
    const double down = f();
    point[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error(ErrorCode::NonFiniteEvaluation, "oracle: f not finite near point");
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// |a-b| / max(|a|, |b|, 1): absolute near zero, relative when large.
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1.0});
}

inline double max_rel_err(std::span<const double> analytic,
                          std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, rel_err(analytic[i], numeric[i]));
  return worst;
}

// --------------------------------------------------------------------------
// Ranking metrics straight from their definitions. Ranks come from counting
// comparisons, never from sorting, so this path shares nothing with the
// library implementation. Ties rank by ascending index.

// 1-based rank of item `a` under descending score.
inline std::uint32_t rank_by_counting(std::span<const double> scores, std::uint32_t a) {
  std::uint32_t ahead = 0;
  for (std::uint32_t b = 0; b < scores.size(); ++b) {
    if (scores[b] > scores[a]) ++ahead;
    else if (scores[b] == scores[a] && b < a) ++ahead;
  }
  return ahead + 1;
}

struct ExhaustiveMetric {
  double avgprec = 0.0;
  std::optional<double> ap;          // undefined when nothing is relevant
  std::optional<double> ap_interp;   // interpolated variant, for the bound
};

inline ExhaustiveMetric exhaustive_metric(std::span<const double> scores,
                                          std::span<const std::uint8_t> relevant) {
  ExhaustiveMetric out;
  std::uint32_t num_relevant = 0;
  for (auto r : relevant) num_relevant += r ? 1 : 0;
  if (num_relevant == 0) return out;

  // Per-image AVGPREC: for each relevant a, the share of relevant items at
  // rank <= rank(a), averaged over relevant items.
  double sum = 0.0;
  for (std::uint32_t a = 0; a < scores.size(); ++a) {
    if (!relevant[a]) continue;
    const std::uint32_t tau_a = rank_by_counting(scores, a);
    std::uint32_t at_or_above = 0;
    for (std::uint32_t b = 0; b < scores.size(); ++b)
      if (relevant[b] && rank_by_counting(scores, b) <= tau_a) ++at_or_above;
    sum += double(at_or_above) / double(tau_a);
  }
  out.avgprec = sum / double(num_relevant);

  // Non-interpolated AP: mean over relevant hits of precision@rank(hit).
  double ap_sum = 0.0;
  for (std::uint32_t a = 0; a < scores.size(); ++a) {
    if (!relevant[a]) continue;
    const std::uint32_t k = rank_by_counting(scores, a);
    std::uint32_t hits = 0;
    for (std::uint32_t b = 0; b < scores.size(); ++b)
      if (relevant[b] && rank_by_counting(scores, b) <= k) ++hits;
    ap_sum += double(hits) / double(k);
  }
  out.ap = ap_sum / double(num_relevant);

  // Interpolated AP: precision@k replaced by max precision at any rank >= k.
  double interp_sum = 0.0;
  for (std::uint32_t a = 0; a < scores.size(); ++a) {
    if (!relevant[a]) continue;
    const std::uint32_t k = rank_by_counting(scores, a);
    double best = 0.0;
    for (std::uint32_t k2 = k; k2 <= scores.size(); ++k2) {
      std::uint32_t hits = 0;
      for (std::uint32_t b = 0; b < scores.size(); ++b)
        if (relevant[b] && rank_by_counting(scores, b) <= k2) ++hits;
      best = std::max(best, double(hits) / double(k2));
    }
    interp_sum += best;
  }
  out.ap_interp = interp_sum / double(num_relevant);
  return out;
}

// --------------------------------------------------------------------------
// Pairwise losses via literal all-pairs loops.

struct BruteHinge {
  double loss = 0.0;
  std::uint32_t worst_neg = 0;
  std::uint32_t worst_pos = 0;
  bool violated = false;
  std::vector<double> grad;
};

inline BruteHinge brute_hinge(std::span<const double> logits,
                              std::span<const std::uint8_t> positive) {
  BruteHinge out;
  out.grad.assign(logits.size(), 0.0);
  double best = -std::numeric_limits<double>::infinity();
  for (std::uint32_t v = 0; v < logits.size(); ++v) {
    if (positive[v]) continue;
    for (std::uint32_t u = 0; u < logits.size(); ++u) {
      if (!positive[u]) continue;
      const double h = 1.0 + logits[v] - logits[u];
      // strict > keeps the lexicographically smallest (v, u) on ties
      if (h > best) {
        best = h;
        out.worst_neg = v;
        out.worst_pos = u;
      }
    }
  }
  if (best > 0.0) {
    out.loss = best;
    out.violated = true;
    out.grad[out.worst_neg] = 1.0;
    out.grad[out.worst_pos] = -1.0;
  }
  return out;
}

inline double brute_hinge_sum(std::span<const double> logits,
                              std::span<const std::uint8_t> positive,
                              std::vector<double>* grad = nullptr) {
  if (grad) grad->assign(logits.size(), 0.0);
  double total = 0.0;
  for (std::uint32_t v = 0; v < logits.size(); ++v) {
    if (positive[v]) continue;
    for (std::uint32_t u = 0; u < logits.size(); ++u) {
      if (!positive[u]) continue;
      const double h = 1.0 + logits[v] - logits[u];
      if (h > 0.0) {
        total += h;
        if (grad) {
          (*grad)[v] += 1.0;
          (*grad)[u] -= 1.0;
        }
      }
    }
  }
  return total;
}

inline double brute_smooth(std::span<const double> logits,
                           std::span<const std::uint8_t> positive,
                           std::vector<double>* grad = nullptr) {
  double pair_sum = 0.0;
  for (std::uint32_t v = 0; v < logits.size(); ++v) {
    if (positive[v]) continue;
    for (std::uint32_t u = 0; u < logits.size(); ++u)
      if (positive[u]) pair_sum += std::exp(logits[v] - logits[u]);
  }
  if (grad) {
    grad->assign(logits.size(), 0.0);
    for (std::uint32_t v = 0; v < logits.size(); ++v) {
      if (positive[v]) continue;
      for (std::uint32_t u = 0; u < logits.size(); ++u) {
        if (!positive[u]) continue;
        const double p = std::exp(logits[v] - logits[u]) / (1.0 + pair_sum);
        (*grad)[v] += p;
        (*grad)[u] -= p;
      }
    }
  }
  return std::log(1.0 + pair_sum);
}

}  // namespace testsupport::oracle
