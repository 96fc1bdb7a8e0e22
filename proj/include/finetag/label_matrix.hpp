#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "finetag/attributes.hpp"
#include "finetag/binary_io.hpp"
#include "finetag/errors.hpp"

namespace finetag {

// Binary image×attribute relevance matrix. Bits are stored packed, one
// continuous row-major bitstream (bit index r*cols + c, LSB-first within a
// byte), which is also the on-disk layout.
//
// FTLM file format, all integers little-endian:
//   magic "FTLM" | u32 version=1 | u32 rows | u32 cols
//   | ceil(rows*cols/8) bytes of packed bits (row-major, LSB-first)
//   | rows × u32 image ids (strictly increasing)
//   | u32 CRC32 over every byte after the magic
class LabelMatrix {
 public:
  LabelMatrix() = default;

  LabelMatrix(std::vector<std::uint32_t> image_ids, std::uint32_t cols)
      : rows_(std::uint32_t(image_ids.size())),
        cols_(cols),
        image_ids_(std::move(image_ids)),
        bits_((std::size_t(rows_) * cols_ + 7) / 8, 0) {
    for (std::size_t i = 1; i < image_ids_.size(); ++i)
      if (image_ids_[i] <= image_ids_[i - 1])
        throw Error(ErrorCode::DuplicateId, "image ids must be strictly increasing");
  }

  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }
  const std::vector<std::uint32_t>& image_ids() const { return image_ids_; }

  bool get(std::uint32_t row, std::uint32_t col) const {
    std::size_t b = std::size_t(row) * cols_ + col;
    return (bits_[b >> 3] >> (b & 7)) & 1;
  }

  void set(std::uint32_t row, std::uint32_t col, bool value) {
    std::size_t b = std::size_t(row) * cols_ + col;
    if (value)
      bits_[b >> 3] |= std::uint8_t(1u << (b & 7));
    else
      bits_[b >> 3] &= std::uint8_t(~(1u << (b & 7)));
  }

  // Row index for an image id; UnknownImageId if absent.
  std::uint32_t row_of(std::uint32_t image_id) const {
    auto it = std::lower_bound(image_ids_.begin(), image_ids_.end(), image_id);
    if (it == image_ids_.end() || *it != image_id)
      throw Error(ErrorCode::UnknownImageId, "image id " + std::to_string(image_id));
    return std::uint32_t(it - image_ids_.begin());
  }

  bool contains(std::uint32_t image_id) const {
    auto it = std::lower_bound(image_ids_.begin(), image_ids_.end(), image_id);
    return it != image_ids_.end() && *it == image_id;
  }

  // 0-based column indices of set bits in one row.
  std::vector<std::uint32_t> positives_in_row(std::uint32_t row) const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t c = 0; c < cols_; ++c)
      if (get(row, c)) out.push_back(c);
    return out;
  }

  std::uint64_t positive_count() const {
    std::uint64_t n = 0;
    for (std::uint32_t r = 0; r < rows_; ++r)
      for (std::uint32_t c = 0; c < cols_; ++c) n += get(r, c);
    return n;
  }

  // Images carrying zero positive attributes; kept in the matrix but flagged
  // so loss/metric code can skip them.
  std::vector<std::uint32_t> empty_row_ids() const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t r = 0; r < rows_; ++r)
      if (positives_in_row(r).empty()) out.push_back(image_ids_[r]);
    return out;
  }

  bool operator==(const LabelMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ &&
           image_ids_ == other.image_ids_ && bits_ == other.bits_;
  }

  // Per-attribute positive counts restricted to `ids` (each must be present).
  std::vector<std::uint64_t> label_frequencies(std::span<const std::uint32_t> ids) const {
    std::vector<std::uint64_t> counts(cols_, 0);
    for (std::uint32_t id : ids) {
      std::uint32_t r = row_of(id);
      for (std::uint32_t c = 0; c < cols_; ++c)
        if (get(r, c)) ++counts[c];
    }
    return counts;
  }

  // Parses CUB-style annotation lines:
  //   <image_id> <attribute_id> <is_present> [<certainty> <time> ...]
  // Certainty/time are discarded. In strict mode a line must carry exactly
  // five fields; otherwise three or more are accepted.
  static LabelMatrix parse_annotations(std::istream& in, const AttributeVocabulary& vocab,
                                       std::uint32_t num_images, bool strict = false) {
    std::vector<std::uint32_t> ids(num_images);
    for (std::uint32_t i = 0; i < num_images; ++i) ids[i] = i + 1;
    LabelMatrix m(std::move(ids), vocab.num_attributes());

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      std::istringstream ls(line);
      long long image_id = 0, attr_id = 0;
      std::string flag;
      if (!(ls >> image_id >> attr_id >> flag))
        throw Error(ErrorCode::MalformedLine,
                    "annotation line " + std::to_string(line_no) + ": '" + line + "'");
      if (strict) {
        std::string certainty, time, extra;
        if (!(ls >> certainty >> time) || (ls >> extra))
          throw Error(ErrorCode::MalformedLine,
                      "annotation line " + std::to_string(line_no) +
                          ": strict mode requires exactly 5 fields");
      }
      if (image_id < 1 || std::uint64_t(image_id) > num_images)
        throw Error(ErrorCode::ImageIdOutOfRange,
                    "line " + std::to_string(line_no) + ": image id " +
                        std::to_string(image_id));
      if (attr_id < 1 || std::uint64_t(attr_id) > vocab.num_attributes())
        throw Error(ErrorCode::AttributeIdOutOfRange,
                    "line " + std::to_string(line_no) + ": attribute id " +
                        std::to_string(attr_id));
      if (flag != "0" && flag != "1")
        throw Error(ErrorCode::InvalidPresenceFlag,
                    "line " + std::to_string(line_no) + ": presence flag '" + flag + "'");
      m.set(std::uint32_t(image_id - 1), std::uint32_t(attr_id - 1), flag == "1");
    }
    return m;
  }

  void write(std::ostream& out) const {
    io::ByteWriter payload;
    payload.put_u32(1);  // version
    payload.put_u32(rows_);
    payload.put_u32(cols_);
    payload.put_bytes(bits_);
    for (std::uint32_t id : image_ids_) payload.put_u32(id);

    io::ByteWriter file;
    file.put_magic("FTLM");
    file.put_bytes({reinterpret_cast<const std::uint8_t*>(payload.bytes().data()),
                    payload.size()});
    file.put_u32(payload.crc32());
    io::write_stream(out, file.bytes());
  }

  static LabelMatrix read(std::istream& in) {
    auto bytes = io::read_all(in);
    io::ByteReader r(bytes);
    r.expect_magic("FTLM", "label matrix");
    if (r.remaining() < 4) throw Error(ErrorCode::BadFormat, "truncated FTLM file");
    auto payload = r.all().subspan(4, r.all().size() - 8);

    // Authenticate before parsing: the size fields below drive allocations, so
    // they must never be trusted from a corrupted file.
    io::ByteReader tr(r.all().subspan(r.all().size() - 4));
    std::uint32_t stored_crc = tr.get_u32();
    if (stored_crc != io::crc32_of(payload))
      throw Error(ErrorCode::ChecksumMismatch, "FTLM checksum mismatch");

    io::ByteReader pr(payload);
    std::uint32_t version = pr.get_u32();
    if (version != 1)
      throw Error(ErrorCode::BadFormat, "unsupported FTLM version " + std::to_string(version));
    std::uint32_t rows = pr.get_u32();
    std::uint32_t cols = pr.get_u32();
    std::uint64_t bit_bytes = (std::uint64_t(rows) * cols + 7) / 8;
    if (pr.remaining() != bit_bytes + std::uint64_t(rows) * 4)
      throw Error(ErrorCode::BadFormat, "FTLM payload size does not match its dimensions");
    auto bits = pr.get_bytes(std::size_t(bit_bytes));
    std::vector<std::uint32_t> ids(rows);
    for (std::uint32_t i = 0; i < rows; ++i) ids[i] = pr.get_u32();

    LabelMatrix m(std::move(ids), cols);
    std::copy(bits.begin(), bits.end(), m.bits_.begin());
    return m;
  }

 private:
  std::uint32_t rows_ = 0, cols_ = 0;
  std::vector<std::uint32_t> image_ids_;
  std::vector<std::uint8_t> bits_;
};

}  // namespace finetag
