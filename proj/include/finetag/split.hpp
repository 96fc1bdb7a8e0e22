#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finetag/errors.hpp"
#include "finetag/random.hpp"

namespace finetag {

// Train/val/test partition. Train is the official training partition; val is
// a seeded uniform sample (without replacement) from the official test
// partition; test is the remainder. All three id lists are kept sorted.
struct DatasetSplit {
  std::vector<std::uint32_t> train_ids;
  std::vector<std::uint32_t> val_ids;
  std::vector<std::uint32_t> test_ids;
  std::uint64_t seed = 0;
  std::uint32_t val_size = 0;

  std::vector<std::uint32_t> all_ids() const {
    std::vector<std::uint32_t> out;
    out.reserve(train_ids.size() + val_ids.size() + test_ids.size());
    out.insert(out.end(), train_ids.begin(), train_ids.end());
    out.insert(out.end(), val_ids.begin(), val_ids.end());
    out.insert(out.end(), test_ids.begin(), test_ids.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  // Official split file: lines "<image_id> <is_train:{0,1}>".
  static DatasetSplit make(std::istream& official, std::uint32_t val_size,
                           std::uint64_t seed) {
    std::vector<std::uint32_t> train, test_partition;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(official, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      std::istringstream ls(line);
      long long id = 0;
      std::string flag;
      if (!(ls >> id >> flag) || id < 1 || (flag != "0" && flag != "1"))
        throw Error(ErrorCode::MalformedLine,
                    "split line " + std::to_string(line_no) + ": '" + line + "'");
      (flag == "1" ? train : test_partition).push_back(std::uint32_t(id));
    }
    if (val_size > test_partition.size())
      throw Error(ErrorCode::ValSizeTooLarge,
                  "val_size " + std::to_string(val_size) + " exceeds test partition of " +
                      std::to_string(test_partition.size()));

    std::sort(train.begin(), train.end());
    std::sort(test_partition.begin(), test_partition.end());

    auto rng = seeded_rng(seed, seed_stream::kSplitSampling);
    std::vector<std::uint32_t> val;
    val.reserve(val_size);
    std::sample(test_partition.begin(), test_partition.end(), std::back_inserter(val),
                val_size, rng);
    std::sort(val.begin(), val.end());

    std::vector<std::uint32_t> test;
    std::set_difference(test_partition.begin(), test_partition.end(), val.begin(),
                        val.end(), std::back_inserter(test));

    DatasetSplit s;
    s.train_ids = std::move(train);
    s.val_ids = std::move(val);
    s.test_ids = std::move(test);
    s.seed = seed;
    s.val_size = val_size;
    return s;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["val_size"] = val_size;
    j["train"] = train_ids;
    j["val"] = val_ids;
    j["test"] = test_ids;
    return j;
  }

  static DatasetSplit from_json(const nlohmann::json& j) {
    DatasetSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.val_size = j.at("val_size").get<std::uint32_t>();
    s.train_ids = j.at("train").get<std::vector<std::uint32_t>>();
    s.val_ids = j.at("val").get<std::vector<std::uint32_t>>();
    s.test_ids = j.at("test").get<std::vector<std::uint32_t>>();
    return s;
  }
};

// Image index file: lines "<image_id> <relative path>"; ids must be the
// contiguous range 1..M. Returns M.
inline std::uint32_t parse_image_count(std::istream& in) {
  std::uint32_t count = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    long long id = 0;
    std::string path;
    if (!(ls >> id >> path) || id < 1)
      throw Error(ErrorCode::MalformedLine,
                  "images line " + std::to_string(line_no) + ": '" + line + "'");
    if (std::uint64_t(id) != std::uint64_t(count) + 1)
      throw Error(ErrorCode::NonContiguousIds,
                  "images line " + std::to_string(line_no) + ": expected id " +
                      std::to_string(count + 1) + ", got " + std::to_string(id));
    ++count;
  }
  return count;
}

}  // namespace finetag
