#include <catch2/catch_amalgamated.hpp>

#include <optional>
#include <random>
#include <sstream>

#include "finetag/attributes.hpp"
#include "finetag/label_matrix.hpp"

using finetag::AttributeVocabulary;
using finetag::Error;
using finetag::ErrorCode;
using finetag::LabelMatrix;

namespace {

AttributeVocabulary tiny_vocab(std::uint32_t n) {
  std::ostringstream text;
  for (std::uint32_t i = 1; i <= n; ++i) text << i << " g::" << i << "\n";
  std::istringstream in(text.str());
  return AttributeVocabulary::parse(in);
}

LabelMatrix parse(const std::string& text, std::uint32_t num_images,
                  std::uint32_t num_attrs, bool strict = false) {
  std::istringstream in(text);
  auto vocab = tiny_vocab(num_attrs);
  return LabelMatrix::parse_annotations(in, vocab, num_images, strict);
}

}  // namespace

TEST_CASE("set and get round-trip across byte boundaries") {
  LabelMatrix m({1, 2, 3}, 9);  // 27 bits spans four bytes
  m.set(0, 8, true);
  m.set(1, 0, true);
  m.set(2, 8, true);
  CHECK(m.get(0, 8));
  CHECK(m.get(1, 0));
  CHECK(m.get(2, 8));
  CHECK_FALSE(m.get(0, 0));
  CHECK(m.positive_count() == 3);
  m.set(1, 0, false);
  CHECK_FALSE(m.get(1, 0));
  CHECK(m.positive_count() == 2);
}

TEST_CASE("annotation parsing sets the expected bits") {
  auto m = parse(
      "1 1 1 3 10.0\n"
      "1 2 0 1 2.0\n"
      "2 3 1 4 1.5\n",
      2, 3);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.get(0, 0));
  CHECK_FALSE(m.get(0, 1));
  CHECK(m.get(1, 2));
  CHECK(m.positive_count() == 2);
  CHECK(m.positives_in_row(0) == std::vector<std::uint32_t>{0});
  CHECK(m.positives_in_row(1) == std::vector<std::uint32_t>{2});
}

TEST_CASE("later annotation lines overwrite earlier ones") {
  auto m = parse("1 1 1\n1 1 0\n", 1, 2);
  CHECK_FALSE(m.get(0, 0));
}

TEST_CASE("strict mode demands exactly five fields") {
  CHECK_THROWS_AS(parse("1 1 1\n", 1, 1, /*strict=*/true), Error);
  CHECK_THROWS_AS(parse("1 1 1 3 10.0 extra\n", 1, 1, /*strict=*/true), Error);
  CHECK_NOTHROW(parse("1 1 1 3 10.0\n", 1, 1, /*strict=*/true));
  // Relaxed mode takes three or more fields.
  CHECK_NOTHROW(parse("1 1 1\n", 1, 1));
  CHECK_NOTHROW(parse("1 1 1 3 10.0 extra\n", 1, 1));
}

TEST_CASE("annotation range and flag errors") {
  auto code_of = [](const std::string& text) -> std::optional<ErrorCode> {
    try {
      parse(text, 2, 3);
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  CHECK(code_of("3 1 1\n") == ErrorCode::ImageIdOutOfRange);
  CHECK(code_of("0 1 1\n") == ErrorCode::ImageIdOutOfRange);
  CHECK(code_of("1 4 1\n") == ErrorCode::AttributeIdOutOfRange);
  CHECK(code_of("1 0 1\n") == ErrorCode::AttributeIdOutOfRange);
  CHECK(code_of("1 1 2\n") == ErrorCode::InvalidPresenceFlag);
  CHECK(code_of("garbage\n") == ErrorCode::MalformedLine);
}

TEST_CASE("row lookup by image id") {
  LabelMatrix m({5, 9, 12}, 2);
  CHECK(m.row_of(5) == 0);
  CHECK(m.row_of(12) == 2);
  CHECK(m.contains(9));
  CHECK_FALSE(m.contains(7));
  CHECK_THROWS_MATCHES(m.row_of(7), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::UnknownImageId;
                       }));
}

TEST_CASE("image ids must be strictly increasing") {
  CHECK_THROWS_AS(LabelMatrix({3, 3}, 1), Error);
  CHECK_THROWS_AS(LabelMatrix({3, 2}, 1), Error);
}

TEST_CASE("empty rows are reported but kept") {
  auto m = parse("1 1 1\n", 3, 2);
  CHECK(m.rows() == 3);
  CHECK(m.empty_row_ids() == std::vector<std::uint32_t>{2, 3});
}

TEST_CASE("label frequencies restricted to a subset") {
  auto m = parse(
      "1 1 1\n1 2 1\n"
      "2 1 1\n"
      "3 2 1\n",
      3, 2);
  std::vector<std::uint32_t> subset{1, 3};
  auto freq = m.label_frequencies(subset);
  CHECK(freq == std::vector<std::uint64_t>{1, 2});
}

TEST_CASE("FTLM write/read round-trips bit-exactly") {
  std::mt19937_64 rng(123);
  LabelMatrix m({2, 4, 6, 9, 10}, 13);
  for (std::uint32_t r = 0; r < m.rows(); ++r)
    for (std::uint32_t c = 0; c < m.cols(); ++c) m.set(r, c, rng() & 1);

  std::ostringstream out(std::ios::binary);
  m.write(out);
  std::string first = out.str();

  std::istringstream in(first, std::ios::binary);
  auto back = LabelMatrix::read(in);
  CHECK(back == m);

  std::ostringstream again(std::ios::binary);
  back.write(again);
  CHECK(again.str() == first);
}

TEST_CASE("FTLM corruption is detected") {
  LabelMatrix m({1, 2}, 5);
  m.set(0, 1, true);
  m.set(1, 4, true);
  std::ostringstream out(std::ios::binary);
  m.write(out);
  std::string bytes = out.str();

  SECTION("flipped payload byte fails the checksum") {
    bytes[8] ^= 0x01;  // inside the version/shape header
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_AS(LabelMatrix::read(in), Error);
  }
  SECTION("flipped checksum byte is caught") {
    bytes[bytes.size() - 1] ^= 0x80;
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_MATCHES(LabelMatrix::read(in), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == ErrorCode::ChecksumMismatch;
                         }));
  }
  SECTION("wrong magic") {
    bytes[0] = 'X';
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_AS(LabelMatrix::read(in), Error);
  }
  SECTION("truncation") {
    std::istringstream in(bytes.substr(0, bytes.size() - 6), std::ios::binary);
    CHECK_THROWS_AS(LabelMatrix::read(in), Error);
  }
}
