#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "finetag/errors.hpp"
#include "finetag/feature_store.hpp"
#include "finetag/label_matrix.hpp"
#include "finetag/losses.hpp"
#include "finetag/metrics.hpp"
#include "finetag/model.hpp"
#include "finetag/optimizer.hpp"
#include "finetag/random.hpp"
#include "finetag/split.hpp"

namespace finetag {

struct TrainConfig {
  std::uint32_t batch_size = 16;
  // Unset learning rate resolves to the optimizer default: 1e-5 for Adam,
  // 1e-4 for SGD-momentum. An explicit 0 is legal and makes every step a
  // no-op, which the tests rely on.
  std::optional<double> learning_rate;
  std::uint32_t epochs = 1;
  LossKind loss = LossKind::smooth;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::uint32_t threads = 1;

  double resolved_lr() const {
    if (learning_rate) return *learning_rate;
    return optimizer == OptimizerKind::adam ? 1e-5 : 1e-4;
  }

  void validate() const {
    if (batch_size < 1)
      throw Error(ErrorCode::ConfigMismatch, "batch size must be at least 1");
    if (epochs < 1) throw Error(ErrorCode::ConfigMismatch, "epochs must be at least 1");
    if (threads < 1) throw Error(ErrorCode::ConfigMismatch, "threads must be at least 1");
    double lr = resolved_lr();
    if (!(lr >= 0.0) || !std::isfinite(lr))
      throw Error(ErrorCode::ConfigMismatch, "learning rate must be finite and >= 0");
  }
};

struct EpochRecord {
  std::uint32_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::optional<double> val_avgprec;  // absent when there is no usable val image
  std::uint32_t skipped = 0;          // train images without a rankable label set
};

inline nlohmann::ordered_json epoch_record_json(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["epoch"] = rec.epoch;
  j["mean_loss"] = rec.mean_loss;
  if (rec.val_avgprec) j["val_avgprec"] = *rec.val_avgprec;
  else j["val_avgprec"] = nullptr;
  j["skipped"] = rec.skipped;
  return j;
}

// Where the loop reports to. Everything is optional so library tests can
// train fully in memory.
struct TrainSinks {
  std::filesystem::path checkpoint_path;  // rewritten after each epoch
  std::ostream* history = nullptr;        // JSON lines, one object per epoch
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
};

namespace detail {

// Ordered parallel map: results land in input order regardless of thread
// count, so training remains bit-reproducible when parallelized.
template <typename Fn>
void parallel_for(std::size_t count, std::uint32_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::uint32_t workers = std::min<std::uint32_t>(threads, std::uint32_t(count));
  for (std::uint32_t w = 0; w < workers; ++w) {
    pool.emplace_back([=, &fn]() {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

template <typename S>
Tensor3<S> as_scalar(Tensor3<float>&& values) {
  if constexpr (std::is_same_v<S, float>) return std::move(values);
  else return values.template cast<S>();
}

}  // namespace detail

// Forward pass over a list of images, score matrix [ids x N] in id order.
template <typename S>
Matrix<double> score_images(const ModelConfig& config, const ModelParams<S>& params,
                            const FeatureStore& store,
                            std::span<const std::uint32_t> ids,
                            std::uint32_t threads = 1) {
  Matrix<double> scores(std::uint32_t(ids.size()), config.num_classes);
  detail::parallel_for(ids.size(), threads, [&](std::size_t i) {
    Tensor3<S> alpha = detail::as_scalar<S>(store.read(ids[i]).values);
    std::vector<S> logits = model_forward<S>(config, params, alpha);
    for (std::uint32_t n = 0; n < config.num_classes; ++n)
      scores(std::uint32_t(i), n) = double(logits[n]);
  });
  return scores;
}

// Mini-batch loop: shuffle -> per-batch forward, mean ranking loss, backward,
// one optimizer step. Deterministic for a fixed seed; the thread count only
// parallelizes forward passes, gradient reduction stays ordered.
template <typename S>
TrainResult train(const ModelConfig& config, ModelParams<S>& params,
                  const FeatureStore& store, const LabelMatrix& labels,
                  const DatasetSplit& split, const TrainConfig& train_config,
                  const TrainSinks& sinks = {}) {
  train_config.validate();
  config.validate();
  if (split.train_ids.empty())
    throw Error(ErrorCode::AllImagesSkipped, "training split is empty");
  for (std::uint32_t id : split.train_ids)
    if (!store.contains(id))
      throw Error(ErrorCode::MissingId,
                  "train image " + std::to_string(id) + " not in feature store");

  // Pre-resolve label rows once; this also validates id membership.
  std::vector<RelevanceSets> train_rels(split.train_ids.size());
  for (std::size_t i = 0; i < split.train_ids.size(); ++i)
    train_rels[i] = RelevanceSets::from_row(labels, labels.row_of(split.train_ids[i]));

  OptimizerState opt;
  opt.kind = train_config.optimizer;
  opt.learning_rate = train_config.resolved_lr();

  auto shuffle_rng = seeded_rng(train_config.seed, seed_stream::kShuffle);
  std::vector<std::size_t> order(split.train_ids.size());

  TrainResult result;
  for (std::uint32_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (train_config.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::uint64_t counted = 0;
    std::uint32_t skipped = 0;

    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + train_config.batch_size);
      const std::size_t batch = stop - start;

      std::vector<Tensor3<S>> alphas(batch);
      std::vector<ForwardCache<S>> caches(batch);
      std::vector<std::vector<S>> logits(batch);
      detail::parallel_for(batch, train_config.threads, [&](std::size_t b) {
        std::uint32_t id = split.train_ids[order[start + b]];
        alphas[b] = detail::as_scalar<S>(store.read(id).values);
        logits[b] = model_forward(config, params, alphas[b], &caches[b]);
      });

      std::vector<RelevanceSets> rels(batch);
      for (std::size_t b = 0; b < batch; ++b) rels[b] = train_rels[order[start + b]];

      BatchLossResult<S> batch_result;
      try {
        batch_result = batch_loss(train_config.loss, logits, rels);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::AllImagesSkipped) {
          skipped += std::uint32_t(batch);
          continue;
        }
        throw;
      }
      loss_sum += batch_result.mean_loss * batch_result.counted;
      counted += batch_result.counted;
      skipped += batch_result.skipped;

      params.zero_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        if (batch_result.grads[b].empty()) continue;
        model_backward(config, params, caches[b],
                       std::span<const S>(batch_result.grads[b]));
      }

      auto views = params.parameter_views();
      auto grad_views = params.gradient_views();
      optimizer_step<S>(opt, std::span<const std::span<S>>(views),
                        std::span<const std::span<const S>>(grad_views));
      ++params.version;
    }

    if (counted == 0)
      throw Error(ErrorCode::AllImagesSkipped,
                  "epoch " + std::to_string(epoch) + " had no trainable image");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / double(counted);
    rec.skipped = skipped;
    if (!std::isfinite(rec.mean_loss))
      throw Error(ErrorCode::NonFiniteLoss,
                  "mean loss diverged in epoch " + std::to_string(epoch) +
                      "; last epoch checkpoint kept");

    if (!split.val_ids.empty()) {
      Matrix<double> val_scores = score_images(config, params, store,
                                               std::span<const std::uint32_t>(split.val_ids),
                                               train_config.threads);
      std::vector<std::uint32_t> rows(split.val_ids.size());
      for (std::size_t i = 0; i < split.val_ids.size(); ++i)
        rows[i] = labels.row_of(split.val_ids[i]);
      try {
        rec.val_avgprec =
            dataset_avgprec(val_scores, labels, std::span<const std::uint32_t>(rows)).mean;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::AllImagesSkipped) throw;
      }
    }

    if (!sinks.checkpoint_path.empty()) {
      // Write-then-rename so an interrupted write cannot clobber the last
      // good checkpoint.
      auto tmp = sinks.checkpoint_path;
      tmp += ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
          throw Error(ErrorCode::IoFailure, "cannot create " + tmp.string());
        write_checkpoint(config, params, out);
      }
      std::filesystem::rename(tmp, sinks.checkpoint_path);
    }
    if (sinks.history) {
      (*sinks.history) << epoch_record_json(rec).dump() << "\n";
      sinks.history->flush();
    }
    if (sinks.on_epoch) sinks.on_epoch(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace finetag
