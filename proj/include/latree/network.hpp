#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latree/core_types.hpp"

namespace latree {

// Layer `from`'s output width feeds layer `to`'s input width; to == from + 1.
struct NetworkLink {
  std::size_t from = 0;
  std::size_t to = 0;
  std::string name;
  bool operator==(const NetworkLink&) const = default;
};

/// Ordered layers plus the width-sharing links between neighbours.
struct NetworkSpec {
  std::vector<StructureConfig> layers;
  std::vector<std::string> names;  // optional, parallel to layers when non-empty
  std::vector<NetworkLink> links;

  std::size_t size() const { return layers.size(); }
  bool empty() const { return layers.empty(); }
  // Link whose `from` is layer l, if any.
  std::optional<NetworkLink> link_after(std::size_t l) const;

  // Throws DataError on invalid layers, non-consecutive links, or widths that
  // disagree across a link.
  void validate() const;

  bool operator==(const NetworkSpec& other) const {
    return layers == other.layers && links == other.links;
  }
};

// CNN->CNN and dense/recurrent->dense/recurrent share a width.
bool widths_linkable(const StructureConfig& from, const StructureConfig& to);

// Links every consecutive linkable pair whose widths agree.
NetworkSpec make_network(std::vector<StructureConfig> layers);

nlohmann::json network_to_json(const NetworkSpec& net);
NetworkSpec network_from_json(const nlohmann::json& doc);
void save_network_file(const NetworkSpec& net, const std::filesystem::path& path);
NetworkSpec load_network_file(const std::filesystem::path& path);

}  // namespace latree
