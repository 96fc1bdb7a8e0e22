#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "finetag/feature_store.hpp"
#include "finetag/label_matrix.hpp"
#include "finetag/model.hpp"
#include "finetag/projection.hpp"
#include "support/temp_dir.hpp"

using finetag::Error;

namespace {

std::string label_matrix_bytes() {
  finetag::LabelMatrix m({1, 2, 5}, 7);
  std::mt19937_64 rng(61);
  for (std::uint32_t r = 0; r < 3; ++r)
    for (std::uint32_t c = 0; c < 7; ++c) m.set(r, c, rng() & 1);
  std::ostringstream out(std::ios::binary);
  m.write(out);
  return out.str();
}

std::string basis_bytes() {
  finetag::ProjectionBasis basis;
  basis.weights = finetag::Matrix<double>(3, 2);
  std::mt19937_64 rng(62);
  std::normal_distribution<double> dist;
  for (auto& v : basis.weights.data()) v = dist(rng);
  basis.bias = {dist(rng), dist(rng)};
  basis.method = finetag::ProjectionMethod::ica;
  std::ostringstream out(std::ios::binary);
  finetag::write_basis(basis, out);
  return out.str();
}

std::string checkpoint_bytes() {
  finetag::ModelConfig config{.channels = 3, .components = 2, .num_classes = 2,
                              .dtype = finetag::Dtype::f32, .bcnn_normalize = false};
  finetag::ProjectionBasis basis;
  basis.weights = finetag::Matrix<double>(3, 2);
  std::mt19937_64 rng(63);
  std::normal_distribution<double> dist;
  for (auto& v : basis.weights.data()) v = dist(rng);
  basis.bias = {dist(rng), dist(rng)};
  auto params = finetag::init_params<float>(config, basis, 17);
  std::ostringstream out(std::ios::binary);
  finetag::write_checkpoint(config, params, out);
  return out.str();
}

std::string store_bytes() {
  std::mt19937_64 rng(64);
  std::normal_distribution<float> dist;
  std::vector<finetag::FeatureMap> maps;
  for (std::uint32_t id : {2u, 3u, 8u}) {
    finetag::FeatureMap m;
    m.image_id = id;
    m.values = finetag::Tensor3<float>(2, 1, 2);
    for (auto& v : m.values.data()) v = dist(rng);
    maps.push_back(std::move(m));
  }
  std::ostringstream out(std::ios::binary);
  finetag::write_store(maps, out);
  return out.str();
}

template <typename ReadFn>
void sweep_stream_format(const std::string& label, const std::string& bytes,
                         ReadFn read) {
  INFO("format " << label << ", " << bytes.size() << " bytes");
  // Sanity: the untouched bytes load.
  {
    std::istringstream in(bytes, std::ios::binary);
    REQUIRE_NOTHROW(read(in));
  }
  // Every single-bit corruption must surface as an error. One bit per byte
  // keeps the sweep fast; the rotating bit position still visits every bit
  // lane many times across the file.
  for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
    std::string tampered = bytes;
    tampered[pos] = char(tampered[pos] ^ (1u << (pos % 8)));
    std::istringstream in(tampered, std::ios::binary);
    INFO("flipped bit " << pos % 8 << " of byte " << pos);
    CHECK_THROWS_AS(read(in), Error);
  }
}

}  // namespace

TEST_CASE("any single-bit flip in a label matrix file is detected") {
  sweep_stream_format("FTLM", label_matrix_bytes(),
                      [](std::istream& in) { finetag::LabelMatrix::read(in); });
}

TEST_CASE("any single-bit flip in a projection file is detected") {
  sweep_stream_format("FTPJ", basis_bytes(),
                      [](std::istream& in) { finetag::read_basis(in); });
}

TEST_CASE("any single-bit flip in a checkpoint file is detected") {
  sweep_stream_format("FTMD", checkpoint_bytes(),
                      [](std::istream& in) { finetag::read_checkpoint<float>(in); });
}

TEST_CASE("any single-bit flip in a feature store is detected") {
  const std::string bytes = store_bytes();
  testsupport::TempDir dir;
  auto path = dir / "sweep.ftns";

  auto try_full_read = [&](const std::string& contents) {
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(contents.data(), std::streamsize(contents.size()));
    }
    finetag::FeatureStore store(path);
    for (std::uint32_t id : {2u, 3u, 8u}) store.read(id);
  };

  REQUIRE_NOTHROW(try_full_read(bytes));
  for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
    std::string tampered = bytes;
    tampered[pos] = char(tampered[pos] ^ (1u << (pos % 8)));
    INFO("flipped bit " << pos % 8 << " of byte " << pos);
    CHECK_THROWS_AS(try_full_read(tampered), Error);
  }
}

TEST_CASE("magic strings keep the formats from impersonating each other") {
  {
    std::istringstream in(label_matrix_bytes(), std::ios::binary);
    CHECK_THROWS_AS(finetag::read_basis(in), Error);
  }
  {
    std::istringstream in(basis_bytes(), std::ios::binary);
    CHECK_THROWS_AS(finetag::read_checkpoint<float>(in), Error);
  }
  {
    std::istringstream in(checkpoint_bytes(), std::ios::binary);
    CHECK_THROWS_AS(finetag::LabelMatrix::read(in), Error);
  }
}

TEST_CASE("empty and truncated streams are errors, not crashes") {
  for (auto truncate_to : {std::size_t(0), std::size_t(3), std::size_t(4),
                           std::size_t(10)}) {
    {
      std::istringstream in(label_matrix_bytes().substr(0, truncate_to),
                            std::ios::binary);
      CHECK_THROWS_AS(finetag::LabelMatrix::read(in), Error);
    }
    {
      std::istringstream in(basis_bytes().substr(0, truncate_to), std::ios::binary);
      CHECK_THROWS_AS(finetag::read_basis(in), Error);
    }
    {
      std::istringstream in(checkpoint_bytes().substr(0, truncate_to),
                            std::ios::binary);
      CHECK_THROWS_AS(finetag::read_checkpoint<float>(in), Error);
    }
  }
}

TEST_CASE("appending a byte to a CRC-framed file is detected") {
  for (const std::string& bytes :
       {label_matrix_bytes(), basis_bytes(), checkpoint_bytes()}) {
    std::string longer = bytes + '\0';
    std::istringstream in(longer, std::ios::binary);
    bool threw = false;
    try {
      // Any of the three readers sees its own magic only for its own bytes;
      // pick by magic.
      if (bytes.compare(0, 4, "FTLM") == 0) finetag::LabelMatrix::read(in);
      else if (bytes.compare(0, 4, "FTPJ") == 0) finetag::read_basis(in);
      else finetag::read_checkpoint<float>(in);
    } catch (const Error&) {
      threw = true;
    }
    CHECK(threw);
  }
}
