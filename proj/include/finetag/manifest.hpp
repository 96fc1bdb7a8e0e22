#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finetag/binary_io.hpp"
#include "finetag/errors.hpp"
#include "finetag/version.hpp"

namespace finetag {

// Audit record written next to every command's outputs: the resolved
// configuration plus content hashes of the inputs. Deliberately carries no
// timestamps or host details so a re-run with identical inputs produces an
// identical manifest.
struct RunManifest {
  std::string subcommand;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, std::uint32_t>> inputs;  // path, crc32
  std::vector<std::string> outputs;

  void add_input(const std::filesystem::path& path) {
    inputs.emplace_back(path.string(), io::crc32_of(io::read_file(path)));
  }

  void add_output(const std::filesystem::path& path) {
    outputs.push_back(path.string());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["subcommand"] = subcommand;
    j["config"] = config;
    nlohmann::ordered_json ins = nlohmann::ordered_json::array();
    for (const auto& [path, crc] : inputs) {
      nlohmann::ordered_json entry;
      entry["path"] = path;
      entry["crc32"] = crc;
      ins.push_back(entry);
    }
    j["inputs"] = ins;
    j["outputs"] = outputs;
    return j;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
    out << to_json().dump(2) << "\n";
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
  }
};

}  // namespace finetag
