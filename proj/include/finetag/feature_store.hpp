#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "finetag/binary_io.hpp"
#include "finetag/errors.hpp"
#include "finetag/tensor.hpp"

namespace finetag {

// One backbone activation tensor keyed by image id.
struct FeatureMap {
  std::uint32_t image_id = 0;
  Tensor3<float> values;
};

// FTNS feature-store format, all integers little-endian:
//   magic "FTNS" | u32 version=1 | u32 C | u8 dtype (0 = f32) | u32 count
//   per record:
//     u32 image_id | u32 H | u32 W
//     | C*H*W f32 payload (c-major, then h, then w)
//     | u32 CRC32 of the payload bytes
//   footer:
//     count × (u32 image_id | u64 record offset from file start)
//     | u32 CRC32 of the footer pair bytes
//
// All maps in a store share C; H and W may vary per record. Offsets are u64
// because full-dataset stores exceed 4 GiB.
namespace ftns {
inline constexpr std::size_t kHeaderSize = 4 + 4 + 4 + 1 + 4;
inline constexpr std::uint8_t kDtypeF32 = 0;
}  // namespace ftns

// Streams records as they arrive; header fields C and count are patched in
// finalize(), so the sink must be seekable.
class FeatureStoreWriter {
 public:
  explicit FeatureStoreWriter(std::ostream& sink) : sink_(sink) {
    io::ByteWriter header;
    header.put_magic("FTNS");
    header.put_u32(1);  // version
    header.put_u32(0);  // C, patched in finalize()
    header.put_u8(ftns::kDtypeF32);
    header.put_u32(0);  // count, patched in finalize()
    io::write_stream(sink_, header.bytes());
    offset_ = ftns::kHeaderSize;
  }

  void add(const FeatureMap& map) {
    if (finalized_) throw Error(ErrorCode::IoFailure, "writer already finalized");
    const auto& t = map.values;
    if (index_.empty()) {
      channels_ = t.channels();
    } else if (t.channels() != channels_) {
      throw Error(ErrorCode::MixedChannelCount,
                  "image " + std::to_string(map.image_id) + " has " +
                      std::to_string(t.channels()) + " channels, store has " +
                      std::to_string(channels_));
    }
    if (!seen_.insert(map.image_id).second)
      throw Error(ErrorCode::DuplicateImageId,
                  "image id " + std::to_string(map.image_id) + " written twice");

    io::ByteWriter payload;
    for (float v : t.data()) payload.put_f32(v);

    io::ByteWriter rec;
    rec.put_u32(map.image_id);
    rec.put_u32(t.height());
    rec.put_u32(t.width());
    rec.put_bytes({reinterpret_cast<const std::uint8_t*>(payload.bytes().data()),
                   payload.size()});
    rec.put_u32(payload.crc32());
    io::write_stream(sink_, rec.bytes());

    index_.push_back({map.image_id, offset_});
    offset_ += rec.size();
  }

  // Writes the footer, patches the header, returns the record count.
  std::uint32_t finalize() {
    if (finalized_) throw Error(ErrorCode::IoFailure, "writer already finalized");
    finalized_ = true;

    io::ByteWriter pairs;
    for (const auto& [id, off] : index_) {
      pairs.put_u32(id);
      pairs.put_u64(off);
    }
    io::ByteWriter footer;
    footer.put_bytes({reinterpret_cast<const std::uint8_t*>(pairs.bytes().data()),
                      pairs.size()});
    footer.put_u32(pairs.crc32());
    io::write_stream(sink_, footer.bytes());

    io::ByteWriter patch;
    patch.put_u32(channels_);
    sink_.seekp(8);
    io::write_stream(sink_, patch.bytes());
    io::ByteWriter count_patch;
    count_patch.put_u32(std::uint32_t(index_.size()));
    sink_.seekp(13);
    io::write_stream(sink_, count_patch.bytes());
    sink_.seekp(0, std::ios::end);
    if (!sink_) throw Error(ErrorCode::IoFailure, "sink is not seekable");
    return std::uint32_t(index_.size());
  }

 private:
  std::ostream& sink_;
  std::uint64_t offset_ = 0;
  std::uint32_t channels_ = 0;
  bool finalized_ = false;
  std::set<std::uint32_t> seen_;
  std::vector<std::pair<std::uint32_t, std::uint64_t>> index_;
};

inline std::uint32_t write_store(const std::vector<FeatureMap>& maps, std::ostream& sink) {
  FeatureStoreWriter w(sink);
  for (const auto& m : maps) w.add(m);
  return w.finalize();
}

// Read side. Opens the file, verifies header and footer, then serves random
// access by image id. Safe for concurrent read() calls (one shared stream,
// internally locked). Records are CRC-checked and NaN/Inf-scanned on load.
class FeatureStore {
 public:
  explicit FeatureStore(const std::filesystem::path& path)
      : stream_(path, std::ios::binary) {
    if (!stream_) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    stream_.seekg(0, std::ios::end);
    file_size_ = std::uint64_t(stream_.tellg());

    auto header = read_at(0, ftns::kHeaderSize);
    io::ByteReader hr(header);
    hr.expect_magic("FTNS", "feature store");
    std::uint32_t version = hr.get_u32();
    if (version != 1)
      throw Error(ErrorCode::BadFormat, "unsupported FTNS version " + std::to_string(version));
    channels_ = hr.get_u32();
    std::uint8_t dtype = hr.get_u8();
    if (dtype != ftns::kDtypeF32)
      throw Error(ErrorCode::BadFormat, "unsupported FTNS dtype " + std::to_string(dtype));
    count_ = hr.get_u32();

    std::uint64_t footer_size = std::uint64_t(count_) * 12 + 4;
    if (file_size_ < ftns::kHeaderSize + footer_size)
      throw Error(ErrorCode::BadFormat, "FTNS file too short for its footer");
    auto footer = read_at(file_size_ - footer_size, footer_size);
    std::span<const std::uint8_t> pair_bytes(footer.data(), footer.size() - 4);
    io::ByteReader fr(footer);
    for (std::uint32_t i = 0; i < count_; ++i) {
      std::uint32_t id = fr.get_u32();
      std::uint64_t off = fr.get_u64();
      if (!index_.emplace(id, off).second)
        throw Error(ErrorCode::DuplicateImageId,
                    "duplicate id " + std::to_string(id) + " in index");
    }
    if (fr.get_u32() != io::crc32_of(pair_bytes))
      throw Error(ErrorCode::ChecksumMismatch, "FTNS index checksum mismatch");
  }

  std::uint32_t channels() const { return channels_; }
  std::uint32_t count() const { return count_; }

  bool contains(std::uint32_t image_id) const { return index_.count(image_id) > 0; }

  std::vector<std::uint32_t> ids() const {
    std::vector<std::uint32_t> out;
    out.reserve(index_.size());
    for (const auto& [id, off] : index_) out.push_back(id);
    return out;
  }

  FeatureMap read(std::uint32_t image_id) const {
    auto it = index_.find(image_id);
    if (it == index_.end())
      throw Error(ErrorCode::MissingId, "image id " + std::to_string(image_id) +
                                            " not in feature store");
    std::uint64_t off = it->second;

    auto head = read_at(off, 12);
    io::ByteReader hr(head);
    std::uint32_t id = hr.get_u32();
    std::uint32_t h = hr.get_u32();
    std::uint32_t w = hr.get_u32();
    if (id != image_id)
      throw Error(ErrorCode::CorruptRecord,
                  "index points at record for id " + std::to_string(id));
    if (h == 0 || w == 0)
      throw Error(ErrorCode::CorruptRecord, "record with empty spatial dims");

    std::uint64_t payload_size = std::uint64_t(channels_) * h * w * 4;
    auto body = read_at(off + 12, payload_size + 4);
    std::span<const std::uint8_t> payload(body.data(), payload_size);
    io::ByteReader tail({body.data() + payload_size, 4});
    if (tail.get_u32() != io::crc32_of(payload))
      throw Error(ErrorCode::CorruptRecord,
                  "payload checksum mismatch for image " + std::to_string(image_id));

    FeatureMap map;
    map.image_id = image_id;
    map.values = Tensor3<float>(channels_, h, w);
    io::ByteReader pr(payload);
    auto dst = map.values.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      float v = pr.get_f32();
      if (!std::isfinite(v))
        throw Error(ErrorCode::NonFiniteValue,
                    "image " + std::to_string(image_id) + " channel " +
                        std::to_string(i / (std::size_t(h) * w)) + " holds a non-finite value");
      dst[i] = v;
    }
    return map;
  }

  std::vector<FeatureMap> read_batch(std::span<const std::uint32_t> ids) const {
    std::vector<FeatureMap> out;
    out.reserve(ids.size());
    for (std::uint32_t id : ids) out.push_back(read(id));
    return out;
  }

 private:
  std::vector<std::uint8_t> read_at(std::uint64_t offset, std::uint64_t size) const {
    if (offset + size > file_size_)
      throw Error(ErrorCode::BadFormat, "FTNS read past end of file");
    std::lock_guard<std::mutex> lock(mutex_);
    stream_.clear();
    stream_.seekg(std::streamoff(offset));
    std::vector<std::uint8_t> bytes(size);
    stream_.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(size));
    if (!stream_) throw Error(ErrorCode::IoFailure, "FTNS read failed");
    return bytes;
  }

  mutable std::ifstream stream_;
  mutable std::mutex mutex_;
  std::uint64_t file_size_ = 0;
  std::uint32_t channels_ = 0;
  std::uint32_t count_ = 0;
  std::map<std::uint32_t, std::uint64_t> index_;
};

}  // namespace finetag
