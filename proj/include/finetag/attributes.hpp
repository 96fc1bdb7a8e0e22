#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finetag/errors.hpp"

namespace finetag {

struct AttributeEntry {
  std::uint32_t id = 0;  // 1-based
  std::string group;
  std::string variety;

  std::string full_name() const {
    return variety.empty() ? group : group + "::" + variety;
  }
};

// The attribute vocabulary: contiguous 1-based ids plus the group taxonomy
// derived from the "<group>::<variety>" naming convention. A name without
// "::" forms a single-variety group equal to the full name.
class AttributeVocabulary {
 public:
  AttributeVocabulary() = default;
  explicit AttributeVocabulary(std::vector<AttributeEntry> entries)
      : entries_(std::move(entries)) {
    validate();
  }

  std::uint32_t num_attributes() const { return std::uint32_t(entries_.size()); }
  const std::vector<AttributeEntry>& entries() const { return entries_; }
  const AttributeEntry& entry(std::uint32_t id) const { return entries_[id - 1]; }

  // Distinct group names in first-appearance order.
  std::vector<std::string> group_names() const {
    std::vector<std::string> names;
    for (const auto& e : entries_)
      if (std::find(names.begin(), names.end(), e.group) == names.end())
        names.push_back(e.group);
    return names;
  }

  std::uint32_t num_groups() const { return std::uint32_t(group_names().size()); }

  // Group name -> member attribute ids, in first-appearance order of groups.
  std::vector<std::pair<std::string, std::vector<std::uint32_t>>> groups() const {
    std::vector<std::pair<std::string, std::vector<std::uint32_t>>> out;
    for (const auto& e : entries_) {
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const auto& g) { return g.first == e.group; });
      if (it == out.end()) {
        out.push_back({e.group, {e.id}});
      } else {
        it->second.push_back(e.id);
      }
    }
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["num_attributes"] = num_attributes();
    j["groups"] = group_names();
    nlohmann::ordered_json attrs = nlohmann::ordered_json::array();
    for (const auto& e : entries_) {
      nlohmann::ordered_json a;
      a["id"] = e.id;
      a["group"] = e.group;
      a["variety"] = e.variety;
      attrs.push_back(a);
    }
    j["attributes"] = attrs;
    return j;
  }

  static AttributeVocabulary from_json(const nlohmann::json& j) {
    std::vector<AttributeEntry> entries;
    for (const auto& a : j.at("attributes")) {
      AttributeEntry e;
      e.id = a.at("id").get<std::uint32_t>();
      e.group = a.at("group").get<std::string>();
      e.variety = a.at("variety").get<std::string>();
      entries.push_back(std::move(e));
    }
    return AttributeVocabulary(std::move(entries));
  }

  // Lines are "<id> <name>"; warnings collects group-size oddities (sizes
  // outside [3, 15] are suspicious for CUB-like data but not fatal).
  static AttributeVocabulary parse(std::istream& in,
                                   std::vector<std::string>* warnings = nullptr) {
    std::vector<AttributeEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      std::istringstream ls(line);
      long long id = 0;
      std::string name;
      if (!(ls >> id >> name) || id <= 0)
        throw Error(ErrorCode::MalformedLine,
                    "attributes line " + std::to_string(line_no) + ": '" + line + "'");
      AttributeEntry e;
      e.id = std::uint32_t(id);
      auto sep = name.find("::");
      if (sep == std::string::npos) {
        e.group = name;
      } else {
        e.group = name.substr(0, sep);
        e.variety = name.substr(sep + 2);
      }
      if (e.group.empty())
        throw Error(ErrorCode::MalformedLine,
                    "attributes line " + std::to_string(line_no) + ": empty group name");
      entries.push_back(std::move(e));
    }
    AttributeVocabulary vocab(std::move(entries));
    if (warnings) vocab.collect_warnings(*warnings);
    return vocab;
  }

 private:
  void validate() {
    std::sort(entries_.begin(), entries_.end(),
              [](const AttributeEntry& a, const AttributeEntry& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (i > 0 && entries_[i].id == entries_[i - 1].id)
        throw Error(ErrorCode::DuplicateId,
                    "attribute id " + std::to_string(entries_[i].id) + " appears twice");
      if (entries_[i].id != i + 1)
        throw Error(ErrorCode::NonContiguousIds,
                    "attribute ids must be contiguous 1..N; missing id " +
                        std::to_string(i + 1));
    }
  }

  void collect_warnings(std::vector<std::string>& warnings) const {
    for (const auto& [group, ids] : groups()) {
      if (ids.size() < 3 || ids.size() > 15)
        warnings.push_back("group '" + group + "' has " + std::to_string(ids.size()) +
                           " varieties (expected 3..15)");
    }
  }

  std::vector<AttributeEntry> entries_;
};

}  // namespace finetag
