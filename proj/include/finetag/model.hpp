#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "finetag/bilinear.hpp"
#include "finetag/binary_io.hpp"
#include "finetag/errors.hpp"
#include "finetag/projection.hpp"
#include "finetag/random.hpp"
#include "finetag/tensor.hpp"

namespace finetag {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct ModelConfig {
  std::uint32_t channels = 512;    // C
  std::uint32_t components = 20;   // K
  std::uint32_t num_classes = 312; // N
  Dtype dtype = Dtype::f32;
  bool bcnn_normalize = false;  // signed sqrt + L2 after pooling, default off

  void validate() const {
    if (channels < 1 || components < 1 || num_classes < 1 || components > channels)
      throw Error(ErrorCode::DimMismatch,
                  "invalid model config C=" + std::to_string(channels) +
                      " K=" + std::to_string(components) +
                      " N=" + std::to_string(num_classes));
  }

  bool operator==(const ModelConfig&) const = default;
};

// Trainable state of the head: 1×1-conv projection plus the FC layer, with
// matching gradient buffers. `version` advances on every parameter mutation
// so a forward cache can detect staleness.
template <typename S>
struct ModelParams {
  Matrix<S> proj_weights;       // [C, K]
  std::vector<S> proj_bias;     // [K]
  Matrix<S> fc_weights;         // [C*K, N], flatten order c*K + k
  std::vector<S> fc_bias;       // [N]

  Matrix<S> grad_proj_weights;
  std::vector<S> grad_proj_bias;
  Matrix<S> grad_fc_weights;
  std::vector<S> grad_fc_bias;

  std::uint64_t version = 0;

  void zero_grad() {
    grad_proj_weights.fill(S{});
    grad_fc_weights.fill(S{});
    std::fill(grad_proj_bias.begin(), grad_proj_bias.end(), S{});
    std::fill(grad_fc_bias.begin(), grad_fc_bias.end(), S{});
  }

  std::uint64_t parameter_count() const {
    return std::uint64_t(proj_weights.size()) + proj_bias.size() +
           fc_weights.size() + fc_bias.size();
  }

  std::array<std::span<S>, 4> parameter_views() {
    return {proj_weights.data(), std::span<S>(proj_bias), fc_weights.data(),
            std::span<S>(fc_bias)};
  }

  std::array<std::span<const S>, 4> gradient_views() const {
    return {grad_proj_weights.data(), std::span<const S>(grad_proj_bias),
            grad_fc_weights.data(), std::span<const S>(grad_fc_bias)};
  }

  bool all_finite() const {
    return finetag::all_finite(proj_weights.data()) &&
           finetag::all_finite(std::span<const S>(proj_bias)) &&
           finetag::all_finite(fc_weights.data()) &&
           finetag::all_finite(std::span<const S>(fc_bias));
  }
};

// Head parameter count from the layer shapes.
inline std::uint64_t count_parameters(const ModelConfig& config) {
  const std::uint64_t c = config.channels, k = config.components, n = config.num_classes;
  return c * k + k + c * k * n + n;
}

// FC stack of the 16-layer VGG reference head: 25088->4096->4096->N.
inline std::uint64_t count_baseline_fc(std::uint32_t num_classes) {
  const std::uint64_t n = num_classes;
  return 25088ull * 4096 + 4096 + 4096ull * 4096 + 4096 + 4096ull * n + n;
}

struct ParamCountReport {
  std::uint64_t head = 0;
  std::uint64_t baseline_fc = 0;
  double ratio = 0.0;
  bool within_reference_band = false;  // ratio in [35, 42]
};

inline ParamCountReport ratio_report(const ModelConfig& config) {
  ParamCountReport r;
  r.head = count_parameters(config);
  r.baseline_fc = count_baseline_fc(config.num_classes);
  r.ratio = double(r.baseline_fc) / double(r.head);
  r.within_reference_band = r.ratio >= 35.0 && r.ratio <= 42.0;
  return r;
}

// Projection layer copies the fitted basis; FC weights are Xavier-uniform
// with bound sqrt(6/(C*K+N)), FC bias zero.
template <typename S>
ModelParams<S> init_params(const ModelConfig& config, const ProjectionBasis& basis,
                           std::uint64_t seed) {
  config.validate();
  if (basis.channels() != config.channels || basis.components() != config.components)
    throw Error(ErrorCode::DimMismatch,
                "basis is " + std::to_string(basis.channels()) + "x" +
                    std::to_string(basis.components()) + ", config wants " +
                    std::to_string(config.channels) + "x" +
                    std::to_string(config.components));

  ModelParams<S> params;
  params.proj_weights = basis.weights.template cast<S>();
  params.proj_bias.resize(config.components);
  for (std::uint32_t j = 0; j < config.components; ++j)
    params.proj_bias[j] = S(basis.bias[j]);

  const std::uint32_t flat = config.channels * config.components;
  params.fc_weights = Matrix<S>(flat, config.num_classes);
  params.fc_bias.assign(config.num_classes, S{});

  const double bound = std::sqrt(6.0 / (double(flat) + config.num_classes));
  auto rng = seeded_rng(seed, seed_stream::kParamInit);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (auto& v : params.fc_weights.data()) v = S(uniform(rng));

  params.grad_proj_weights = Matrix<S>(config.channels, config.components);
  params.grad_proj_bias.assign(config.components, S{});
  params.grad_fc_weights = Matrix<S>(flat, config.num_classes);
  params.grad_fc_bias.assign(config.num_classes, S{});
  params.version = 1;
  return params;
}

template <typename S>
struct ForwardCache {
  Tensor3<S> alpha;
  Tensor3<S> beta;
  Matrix<S> pooled;       // raw bilinear output
  Matrix<S> normalized;   // populated only when bcnn_normalize is on
  double norm = 0.0;
  std::uint64_t params_version = 0;
  bool valid = false;
};

namespace detail {
inline constexpr double kSignedSqrtEps = 1e-12;
}

// projection -> bilinear pooling -> (optional signed-sqrt + L2) -> flatten ->
// FC without non-linearity. Returns the N raw confidence scores.
template <typename S>
std::vector<S> model_forward(const ModelConfig& config, const ModelParams<S>& params,
                             const Tensor3<S>& alpha, ForwardCache<S>* cache = nullptr) {
  if (alpha.channels() != config.channels)
    throw Error(ErrorCode::ShapeMismatch,
                "feature map has " + std::to_string(alpha.channels()) +
                    " channels, model wants " + std::to_string(config.channels));

  Tensor3<S> beta = project_forward(params.proj_weights,
                                    std::span<const S>(params.proj_bias), alpha);
  Matrix<S> pooled = bilinear_pool_forward(alpha, beta);

  Matrix<S> normalized;
  double norm = 0.0;
  const Matrix<S>* features = &pooled;
  if (config.bcnn_normalize) {
    normalized = Matrix<S>(pooled.rows(), pooled.cols());
    double sq = 0.0;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      double v = double(pooled.data()[i]);
      double y = (v >= 0 ? 1.0 : -1.0) * std::sqrt(std::abs(v));
      normalized.data()[i] = S(y);
      sq += y * y;
    }
    norm = std::max(std::sqrt(sq), detail::kSignedSqrtEps);
    for (auto& v : normalized.data()) v = S(double(v) / norm);
    features = &normalized;
  }

  const std::uint32_t flat = config.channels * config.components;
  std::vector<S> logits(config.num_classes);
  for (std::uint32_t n = 0; n < config.num_classes; ++n) {
    double acc = double(params.fc_bias[n]);
    for (std::uint32_t i = 0; i < flat; ++i)
      acc += double(features->data()[i]) * double(params.fc_weights(i, n));
    logits[n] = S(acc);
  }

  if (cache) {
    cache->alpha = alpha;
    cache->beta = std::move(beta);
    cache->pooled = std::move(pooled);
    cache->normalized = std::move(normalized);
    cache->norm = norm;
    cache->params_version = params.version;
    cache->valid = true;
  }
  return logits;
}

// Accumulates exact analytic gradients of every parameter tensor into the
// params gradient buffers and returns grad_alpha. Alpha feeds both the
// projection input and the bilinear pooling, so grad_alpha carries two terms.
template <typename S>
Tensor3<S> model_backward(const ModelConfig& config, ModelParams<S>& params,
                          const ForwardCache<S>& cache, std::span<const S> grad_logits) {
  if (!cache.valid || cache.params_version != params.version)
    throw Error(ErrorCode::StaleCache,
                "forward cache does not match current parameters");
  if (grad_logits.size() != config.num_classes)
    throw Error(ErrorCode::ShapeMismatch, "grad_logits size mismatch");

  const std::uint32_t flat = config.channels * config.components;
  const Matrix<S>& features = config.bcnn_normalize ? cache.normalized : cache.pooled;

  // FC layer.
  std::vector<double> grad_features(flat, 0.0);
  for (std::uint32_t n = 0; n < config.num_classes; ++n) {
    const double g = double(grad_logits[n]);
    params.grad_fc_bias[n] = S(double(params.grad_fc_bias[n]) + g);
    for (std::uint32_t i = 0; i < flat; ++i) {
      params.grad_fc_weights(i, n) =
          S(double(params.grad_fc_weights(i, n)) + double(features.data()[i]) * g);
      grad_features[i] += double(params.fc_weights(i, n)) * g;
    }
  }

  // Undo the optional signed-sqrt + L2 normalization.
  Matrix<S> grad_pooled(config.channels, config.components);
  if (config.bcnn_normalize) {
    double dot = 0.0;
    for (std::uint32_t i = 0; i < flat; ++i)
      dot += grad_features[i] * double(cache.normalized.data()[i]);
    for (std::uint32_t i = 0; i < flat; ++i) {
      double grad_y =
          (grad_features[i] - double(cache.normalized.data()[i]) * dot) / cache.norm;
      double v = double(cache.pooled.data()[i]);
      grad_pooled.data()[i] =
          S(grad_y * 0.5 / std::sqrt(std::abs(v) + detail::kSignedSqrtEps));
    }
  } else {
    for (std::uint32_t i = 0; i < flat; ++i) grad_pooled.data()[i] = S(grad_features[i]);
  }

  BilinearGrads<S> pool_grads =
      bilinear_pool_backward(grad_pooled, cache.alpha, cache.beta);
  ProjectionGrads<S> proj_grads =
      project_backward(pool_grads.beta, cache.alpha, params.proj_weights);

  for (std::size_t i = 0; i < params.grad_proj_weights.size(); ++i)
    params.grad_proj_weights.data()[i] =
        S(double(params.grad_proj_weights.data()[i]) +
          double(proj_grads.weights.data()[i]));
  for (std::uint32_t j = 0; j < config.components; ++j)
    params.grad_proj_bias[j] =
        S(double(params.grad_proj_bias[j]) + double(proj_grads.bias[j]));

  Tensor3<S> grad_alpha(config.channels, cache.alpha.height(), cache.alpha.width());
  for (std::size_t i = 0; i < grad_alpha.size(); ++i)
    grad_alpha.data()[i] =
        S(double(pool_grads.alpha.data()[i]) + double(proj_grads.alpha.data()[i]));
  return grad_alpha;
}

// FTMD checkpoint format, little-endian:
//   magic "FTMD" | u32 version=1
//   | u32 C | u32 K | u32 N | u8 dtype (0=f32, 1=f64) | u8 bcnn_normalize
//   | proj_weights C*K f32 (c-major) | proj_bias K f32
//   | fc_weights (C*K)*N f32 (row-major) | fc_bias N f32
//   | u32 CRC32 over every byte after the magic
template <typename S>
void write_checkpoint(const ModelConfig& config, const ModelParams<S>& params,
                      std::ostream& out) {
  io::ByteWriter payload;
  payload.put_u32(1);  // version
  payload.put_u32(config.channels);
  payload.put_u32(config.components);
  payload.put_u32(config.num_classes);
  payload.put_u8(std::uint8_t(config.dtype));
  payload.put_u8(config.bcnn_normalize ? 1 : 0);
  for (S v : params.proj_weights.data()) payload.put_f32(float(v));
  for (S v : params.proj_bias) payload.put_f32(float(v));
  for (S v : params.fc_weights.data()) payload.put_f32(float(v));
  for (S v : params.fc_bias) payload.put_f32(float(v));

  io::ByteWriter file;
  file.put_magic("FTMD");
  file.put_bytes({reinterpret_cast<const std::uint8_t*>(payload.bytes().data()),
                  payload.size()});
  file.put_u32(payload.crc32());
  io::write_stream(out, file.bytes());
}

template <typename S>
std::pair<ModelConfig, ModelParams<S>> read_checkpoint(std::istream& in) {
  auto bytes = io::read_all(in);
  io::ByteReader r(bytes);
  r.expect_magic("FTMD", "model checkpoint");
  if (r.remaining() < 4) throw Error(ErrorCode::BadFormat, "truncated FTMD file");
  auto payload = r.all().subspan(4, r.all().size() - 8);

  // Authenticate before parsing: the size fields below drive allocations, so
  // they must never be trusted from a corrupted file.
  io::ByteReader tr(r.all().subspan(r.all().size() - 4));
  if (tr.get_u32() != io::crc32_of(payload))
    throw Error(ErrorCode::ChecksumMismatch, "FTMD checksum mismatch");

  io::ByteReader pr(payload);
  std::uint32_t version = pr.get_u32();
  if (version != 1)
    throw Error(ErrorCode::BadFormat, "unsupported FTMD version " + std::to_string(version));
  ModelConfig config;
  config.channels = pr.get_u32();
  config.components = pr.get_u32();
  config.num_classes = pr.get_u32();
  std::uint8_t dtype = pr.get_u8();
  if (dtype > 1) throw Error(ErrorCode::BadFormat, "unknown dtype " + std::to_string(dtype));
  config.dtype = Dtype(dtype);
  config.bcnn_normalize = pr.get_u8() != 0;
  config.validate();

  // The payload was authenticated above, but a well-formed checksum can still
  // cover absurd dimensions; pin them to the payload size before allocating.
  const std::uint64_t flat64 = std::uint64_t(config.channels) * config.components;
  if (flat64 > 0x7FFFFFFFull || config.num_classes > 0x7FFFFFFFull)
    throw Error(ErrorCode::BadFormat, "FTMD dimensions out of range");
  const std::uint64_t scalars = flat64 * (config.num_classes + 1ull) +
                                config.components + config.num_classes;
  if (pr.remaining() % 4 != 0 || scalars != pr.remaining() / 4)
    throw Error(ErrorCode::BadFormat, "FTMD payload size does not match its dimensions");

  ModelParams<S> params;
  const std::uint32_t flat = config.channels * config.components;
  params.proj_weights = Matrix<S>(config.channels, config.components);
  for (auto& v : params.proj_weights.data()) v = S(pr.get_f32());
  params.proj_bias.resize(config.components);
  for (auto& v : params.proj_bias) v = S(pr.get_f32());
  params.fc_weights = Matrix<S>(flat, config.num_classes);
  for (auto& v : params.fc_weights.data()) v = S(pr.get_f32());
  params.fc_bias.resize(config.num_classes);
  for (auto& v : params.fc_bias) v = S(pr.get_f32());

  params.grad_proj_weights = Matrix<S>(config.channels, config.components);
  params.grad_proj_bias.assign(config.components, S{});
  params.grad_fc_weights = Matrix<S>(flat, config.num_classes);
  params.grad_fc_bias.assign(config.num_classes, S{});
  params.version = 1;
  return {config, std::move(params)};
}

}  // namespace finetag
