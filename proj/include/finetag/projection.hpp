#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "finetag/binary_io.hpp"
#include "finetag/errors.hpp"
#include "finetag/feature_store.hpp"
#include "finetag/random.hpp"
#include "finetag/tensor.hpp"

namespace finetag {

// Feature vectors drawn from spatial locations of training feature maps;
// the fitting input for PCA/FastICA.
struct SampleBank {
  Matrix<double> samples;  // M × C
  std::uint64_t seed = 0;
  bool below_recommended = false;  // M < 10*C
};

enum class ProjectionMethod : std::uint8_t { ica = 0, pca = 1 };

// The C -> K reduction expressed as 1×1-conv parameters: beta = weights^T
// alpha + bias at every spatial location. Diagnostics keep the whitening
// decomposition so the fit can be audited; only weights/bias/method are
// persisted in FTPJ files.
struct ProjectionBasis {
  Matrix<double> weights;    // [C, K]
  std::vector<double> bias;  // [K]
  ProjectionMethod method = ProjectionMethod::pca;

  // diagnostics
  std::vector<double> mean;         // [C]
  Matrix<double> whitening;         // [K, C], rows e_j^T / sqrt(lambda_j)
  Matrix<double> rotation;          // [K, K], orthonormal rows
  std::vector<double> eigenvalues;  // [C], nonincreasing
  bool converged = true;
  std::uint32_t iterations = 0;

  std::uint32_t channels() const { return weights.rows(); }
  std::uint32_t components() const { return weights.cols(); }
};

struct FastIcaOptions {
  std::uint32_t max_iter = 200;
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

// For each image, `per_image` spatial positions chosen uniformly without
// replacement; each position contributes one C-vector row. Deterministic
// given the id order and seed.
inline SampleBank sample_locations(const FeatureStore& store,
                                   std::span<const std::uint32_t> ids,
                                   std::uint32_t per_image, std::uint64_t seed) {
  const std::uint32_t c = store.channels();
  SampleBank bank;
  bank.seed = seed;
  bank.samples = Matrix<double>(std::uint32_t(ids.size()) * per_image, c);

  auto rng = seeded_rng(seed, seed_stream::kLocationSampling);
  std::uint32_t row = 0;
  for (std::uint32_t id : ids) {
    FeatureMap map = store.read(id);
    const std::uint32_t locations = map.values.locations();
    if (per_image > locations)
      throw Error(ErrorCode::PerImageTooLarge,
                  "per_image " + std::to_string(per_image) + " exceeds " +
                      std::to_string(locations) + " locations of image " +
                      std::to_string(id));
    std::vector<std::uint32_t> all(locations);
    for (std::uint32_t i = 0; i < locations; ++i) all[i] = i;
    std::vector<std::uint32_t> chosen;
    chosen.reserve(per_image);
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), per_image, rng);
    for (std::uint32_t loc : chosen) {
      const std::uint32_t h = loc / map.values.width();
      const std::uint32_t w = loc % map.values.width();
      for (std::uint32_t ch = 0; ch < c; ++ch)
        bank.samples(row, ch) = double(map.values.at(ch, h, w));
      ++row;
    }
  }
  bank.below_recommended = bank.samples.rows() < 10 * c;
  return bank;
}

namespace detail {

using EMatrix = Eigen::MatrixXd;
using EVector = Eigen::VectorXd;

inline Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                      Eigen::RowMajor>>
as_eigen(const Matrix<double>& m) {
  return {m.data().data(), m.rows(), m.cols()};
}

struct Whitening {
  EVector mean;          // C
  EMatrix transform;     // K × C
  EVector eigenvalues;   // C, nonincreasing
};

// Centers the bank, eigendecomposes the unbiased sample covariance, and
// builds the K×C transform whose output has unit per-component variance.
inline Whitening compute_whitening(const Matrix<double>& samples, std::uint32_t k) {
  const auto x = as_eigen(samples);
  const std::uint32_t m = samples.rows();
  const std::uint32_t c = samples.cols();
  if (k > c)
    throw Error(ErrorCode::RankDeficient,
                "requested " + std::to_string(k) + " components from " +
                    std::to_string(c) + " channels");
  if (m < 2 || m < c)
    throw Error(ErrorCode::DegenerateSamples,
                "need at least max(2, C) samples, got " + std::to_string(m));

  Whitening wh;
  wh.mean = x.colwise().mean();
  EMatrix centered = x.rowwise() - wh.mean.transpose();
  EMatrix cov = centered.transpose() * centered / double(m - 1);

  Eigen::SelfAdjointEigenSolver<EMatrix> eig(cov);
  if (eig.info() != Eigen::Success)
    throw Error(ErrorCode::DegenerateSamples, "eigendecomposition failed");

  // Eigen returns ascending order; flip to nonincreasing.
  EVector values = eig.eigenvalues().reverse();
  EMatrix vectors = eig.eigenvectors().rowwise().reverse();

  const double max_eig = values(0);
  if (!(max_eig > 0))
    throw Error(ErrorCode::DegenerateSamples, "samples have zero variance");
  const double threshold = max_eig * 1e-12;
  std::uint32_t positive = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (values(i) > threshold) ++positive;
  if (positive < k)
    throw Error(ErrorCode::RankDeficient,
                "only " + std::to_string(positive) + " positive eigenvalues for k=" +
                    std::to_string(k));

  wh.transform.resize(k, c);
  for (std::uint32_t j = 0; j < k; ++j)
    wh.transform.row(j) = vectors.col(j).transpose() / std::sqrt(values(j));
  wh.eigenvalues = values;
  return wh;
}

// Resolves the per-component sign indeterminacy: the largest-magnitude entry
// of each weight column is made positive by flipping the rotation row.
inline void fix_signs(EMatrix& rotation, const EMatrix& whitening) {
  EMatrix projection = rotation * whitening;  // K × C
  for (Eigen::Index j = 0; j < projection.rows(); ++j) {
    Eigen::Index arg = 0;
    projection.row(j).cwiseAbs().maxCoeff(&arg);
    if (projection(j, arg) < 0) rotation.row(j) *= -1.0;
  }
}

inline ProjectionBasis assemble_basis(const Whitening& wh, EMatrix rotation,
                                      ProjectionMethod method) {
  fix_signs(rotation, wh.transform);
  EMatrix projection = rotation * wh.transform;  // K × C

  ProjectionBasis basis;
  basis.method = method;
  const auto k = std::uint32_t(projection.rows());
  const auto c = std::uint32_t(projection.cols());
  basis.weights = Matrix<double>(c, k);
  for (std::uint32_t i = 0; i < c; ++i)
    for (std::uint32_t j = 0; j < k; ++j) basis.weights(i, j) = projection(j, i);
  EVector bias = -(projection * wh.mean);
  basis.bias.assign(bias.data(), bias.data() + bias.size());

  basis.mean.assign(wh.mean.data(), wh.mean.data() + wh.mean.size());
  basis.whitening = Matrix<double>(k, c);
  for (std::uint32_t i = 0; i < k; ++i)
    for (std::uint32_t j = 0; j < c; ++j) basis.whitening(i, j) = wh.transform(i, j);
  basis.rotation = Matrix<double>(k, k);
  for (std::uint32_t i = 0; i < k; ++i)
    for (std::uint32_t j = 0; j < k; ++j) basis.rotation(i, j) = rotation(i, j);
  basis.eigenvalues.assign(wh.eigenvalues.data(),
                           wh.eigenvalues.data() + wh.eigenvalues.size());
  return basis;
}

// W <- (W W^T)^(-1/2) W, the symmetric decorrelation step.
inline EMatrix symmetric_orthogonalize(const EMatrix& w) {
  Eigen::SelfAdjointEigenSolver<EMatrix> eig(w * w.transpose());
  EVector values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!(values(i) > 0))
      throw Error(ErrorCode::DegenerateSamples, "unmixing matrix lost rank");
    values(i) = 1.0 / std::sqrt(values(i));
  }
  return eig.eigenvectors() * values.asDiagonal() *
         eig.eigenvectors().transpose() * w;
}

}  // namespace detail

// PCA whitening basis: projecting the training bank gives centered components
// with unit variance, eigen-directions ordered by nonincreasing variance.
inline ProjectionBasis fit_pca(const SampleBank& bank, std::uint32_t k) {
  auto wh = detail::compute_whitening(bank.samples, k);
  detail::EMatrix identity = detail::EMatrix::Identity(k, k);
  return detail::assemble_basis(wh, identity, ProjectionMethod::pca);
}

// Symmetric fixed-point FastICA with the log-cosh contrast (g = tanh) on
// PCA-whitened data. Runs until the rotation stabilizes (max row-wise
// |1 - |<w_new, w_old>|| < tol) or max_iter is hit, in which case the basis
// carries converged = false rather than an error.
inline ProjectionBasis fit_fastica(const SampleBank& bank, std::uint32_t k,
                                   const FastIcaOptions& options = {}) {
  if (options.max_iter < 1)
    throw Error(ErrorCode::DegenerateSamples, "max_iter must be >= 1");
  if (!(options.tol > 0))
    throw Error(ErrorCode::DegenerateSamples, "tol must be > 0");

  auto wh = detail::compute_whitening(bank.samples, k);
  const auto x = detail::as_eigen(bank.samples);
  const auto m = x.rows();

  // K × M whitened data, unit covariance.
  detail::EMatrix z =
      wh.transform * (x.rowwise() - wh.mean.transpose()).transpose();

  auto rng = seeded_rng(options.seed, seed_stream::kIcaInit);
  std::normal_distribution<double> normal(0.0, 1.0);
  detail::EMatrix w(k, k);
  for (std::uint32_t i = 0; i < k; ++i)
    for (std::uint32_t j = 0; j < k; ++j) w(i, j) = normal(rng);
  w = detail::symmetric_orthogonalize(w);

  bool converged = false;
  std::uint32_t iterations = 0;
  while (iterations < options.max_iter) {
    ++iterations;
    detail::EMatrix u = w * z;                       // K × M
    detail::EMatrix g = u.array().tanh();            // contrast
    detail::EVector g_prime_mean =
        (1.0 - g.array().square()).rowwise().mean();  // E[g'(u)] per row
    detail::EMatrix w_new =
        (g * z.transpose()) / double(m) - g_prime_mean.asDiagonal() * w;
    w_new = detail::symmetric_orthogonalize(w_new);

    double delta = 0.0;
    for (std::uint32_t i = 0; i < k; ++i) {
      double dot = std::abs(w_new.row(i).dot(w.row(i)));
      delta = std::max(delta, std::abs(1.0 - dot));
    }
    w = w_new;
    if (delta < options.tol) {
      converged = true;
      break;
    }
  }

  ProjectionBasis basis = detail::assemble_basis(wh, w, ProjectionMethod::ica);
  basis.converged = converged;
  basis.iterations = iterations;
  return basis;
}

// beta[k,h,w] = sum_c weights[c,k] * alpha[c,h,w] + bias[k]. Accumulation in
// 64-bit regardless of S.
template <typename S>
Tensor3<S> project_forward(const Matrix<S>& weights, std::span<const S> bias,
                           const Tensor3<S>& alpha) {
  const std::uint32_t c = weights.rows();
  const std::uint32_t k = weights.cols();
  if (alpha.channels() != c || bias.size() != k)
    throw Error(ErrorCode::ShapeMismatch,
                "projection expects C=" + std::to_string(c) + ", K=" + std::to_string(k));
  Tensor3<S> beta(k, alpha.height(), alpha.width());
  const std::uint32_t locations = alpha.locations();
  for (std::uint32_t j = 0; j < k; ++j) {
    for (std::uint32_t loc = 0; loc < locations; ++loc) {
      double acc = double(bias[j]);
      for (std::uint32_t i = 0; i < c; ++i)
        acc += double(weights(i, j)) * double(alpha.data()[std::size_t(i) * locations + loc]);
      beta.data()[std::size_t(j) * locations + loc] = S(acc);
    }
  }
  return beta;
}

template <typename S>
struct ProjectionGrads {
  Tensor3<S> alpha;
  Matrix<S> weights;
  std::vector<S> bias;
};

// Exact adjoint of project_forward.
template <typename S>
ProjectionGrads<S> project_backward(const Tensor3<S>& grad_beta, const Tensor3<S>& alpha,
                                    const Matrix<S>& weights) {
  const std::uint32_t c = weights.rows();
  const std::uint32_t k = weights.cols();
  if (alpha.channels() != c || grad_beta.channels() != k ||
      grad_beta.height() != alpha.height() || grad_beta.width() != alpha.width())
    throw Error(ErrorCode::ShapeMismatch, "projection backward shape mismatch");

  ProjectionGrads<S> grads;
  grads.alpha = Tensor3<S>(c, alpha.height(), alpha.width());
  grads.weights = Matrix<S>(c, k);
  grads.bias.assign(k, S{});

  const std::uint32_t locations = alpha.locations();
  for (std::uint32_t j = 0; j < k; ++j) {
    double bias_acc = 0.0;
    for (std::uint32_t loc = 0; loc < locations; ++loc)
      bias_acc += double(grad_beta.data()[std::size_t(j) * locations + loc]);
    grads.bias[j] = S(bias_acc);
  }
  for (std::uint32_t i = 0; i < c; ++i) {
    for (std::uint32_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::uint32_t loc = 0; loc < locations; ++loc)
        acc += double(alpha.data()[std::size_t(i) * locations + loc]) *
               double(grad_beta.data()[std::size_t(j) * locations + loc]);
      grads.weights(i, j) = S(acc);
    }
  }
  for (std::uint32_t i = 0; i < c; ++i) {
    for (std::uint32_t loc = 0; loc < locations; ++loc) {
      double acc = 0.0;
      for (std::uint32_t j = 0; j < k; ++j)
        acc += double(weights(i, j)) * double(grad_beta.data()[std::size_t(j) * locations + loc]);
      grads.alpha.data()[std::size_t(i) * locations + loc] = S(acc);
    }
  }
  return grads;
}

// FTPJ projection-basis format, little-endian:
//   magic "FTPJ" | u32 version=1 | u32 C | u32 K | u8 method (0=ica, 1=pca)
//   | C*K f32 weights (c-major) | K f32 bias
//   | u32 CRC32 over every byte after the magic
inline void write_basis(const ProjectionBasis& basis, std::ostream& out) {
  io::ByteWriter payload;
  payload.put_u32(1);  // version
  payload.put_u32(basis.channels());
  payload.put_u32(basis.components());
  payload.put_u8(std::uint8_t(basis.method));
  for (double v : basis.weights.data()) payload.put_f32(float(v));
  for (double v : basis.bias) payload.put_f32(float(v));

  io::ByteWriter file;
  file.put_magic("FTPJ");
  file.put_bytes({reinterpret_cast<const std::uint8_t*>(payload.bytes().data()),
                  payload.size()});
  file.put_u32(payload.crc32());
  io::write_stream(out, file.bytes());
}

inline ProjectionBasis read_basis(std::istream& in) {
  auto bytes = io::read_all(in);
  io::ByteReader r(bytes);
  r.expect_magic("FTPJ", "projection basis");
  if (r.remaining() < 4) throw Error(ErrorCode::BadFormat, "truncated FTPJ file");
  auto payload = r.all().subspan(4, r.all().size() - 8);

  // Authenticate before parsing: the size fields below drive allocations, so
  // they must never be trusted from a corrupted file.
  io::ByteReader tr(r.all().subspan(r.all().size() - 4));
  if (tr.get_u32() != io::crc32_of(payload))
    throw Error(ErrorCode::ChecksumMismatch, "FTPJ checksum mismatch");

  io::ByteReader pr(payload);
  std::uint32_t version = pr.get_u32();
  if (version != 1)
    throw Error(ErrorCode::BadFormat, "unsupported FTPJ version " + std::to_string(version));
  std::uint32_t c = pr.get_u32();
  std::uint32_t k = pr.get_u32();
  std::uint8_t method = pr.get_u8();
  if (method > 1)
    throw Error(ErrorCode::BadFormat, "unknown projection method " + std::to_string(method));
  const std::uint64_t cells = std::uint64_t(c) * k;
  if (cells > 0xFFFFFFFFull || pr.remaining() != cells * 4 + std::uint64_t(k) * 4)
    throw Error(ErrorCode::BadFormat, "FTPJ payload size does not match its dimensions");

  ProjectionBasis basis;
  basis.method = ProjectionMethod(method);
  basis.weights = Matrix<double>(c, k);
  for (auto& v : basis.weights.data()) v = double(pr.get_f32());
  basis.bias.resize(k);
  for (auto& v : basis.bias) v = double(pr.get_f32());
  return basis;
}

}  // namespace finetag
