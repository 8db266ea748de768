#include <algorithm>

#include "latree/error.hpp"
#include "latree/model_io.hpp"
#include "latree/network.hpp"

namespace latree {

using nlohmann::json;

std::optional<NetworkLink> NetworkSpec::link_after(std::size_t l) const {
  for (const auto& link : links) {
    if (link.from == l) return link;
  }
  return std::nullopt;
}

void NetworkSpec::validate() const {
  if (!names.empty() && names.size() != layers.size()) {
    throw DataError("network: names must be parallel to layers");
  }
  for (const auto& layer : layers) layer.validate();
  std::vector<bool> used(layers.size(), false);
  for (const auto& link : links) {
    if (link.to != link.from + 1 || link.to >= layers.size()) {
      throw DataError("network: links must join consecutive layers (" + std::to_string(link.from) +
                      " -> " + std::to_string(link.to) + ")");
    }
    if (used[link.from]) throw DataError("network: layer has more than one outgoing link");
    used[link.from] = true;
    if (!widths_linkable(layers[link.from], layers[link.to])) {
      throw DataError("network: layers " + std::to_string(link.from) + " and " +
                      std::to_string(link.to) + " do not share a width");
    }
    if (layers[link.from].out_width() != layers[link.to].in_width()) {
      throw DataError("network: width mismatch across link " + std::to_string(link.from) + " -> " +
                      std::to_string(link.to));
    }
  }
}

bool widths_linkable(const StructureConfig& from, const StructureConfig& to) {
  const bool conv_from = from.kind() == LayerKind::CNN;
  const bool conv_to = to.kind() == LayerKind::CNN;
  return conv_from == conv_to;
}

NetworkSpec make_network(std::vector<StructureConfig> layers) {
  NetworkSpec net;
  net.layers = std::move(layers);
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    if (widths_linkable(net.layers[l], net.layers[l + 1]) &&
        net.layers[l].out_width() == net.layers[l + 1].in_width()) {
      net.links.push_back({l, l + 1, ""});
    }
  }
  net.validate();
  return net;
}

json network_to_json(const NetworkSpec& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    json entry = config_to_json(net.layers[l]);
    if (!net.names.empty() && !net.names[l].empty()) entry["name"] = net.names[l];
    layers.push_back(entry);
  }
  json links = json::array();
  for (const auto& link : net.links) {
    json entry = {{"from", link.from}, {"to", link.to}};
    if (!link.name.empty()) entry["name"] = link.name;
    links.push_back(entry);
  }
  return {{"format_version", model_format_version()}, {"layers", layers}, {"links", links}};
}

NetworkSpec network_from_json(const json& doc) {
  parse_format_version(doc, "network document");
  if (!doc.contains("layers") || !doc.at("layers").is_array()) {
    throw DataError("network document: 'layers' must be an array");
  }
  std::vector<StructureConfig> layers;
  std::vector<std::string> names;
  bool any_name = false;
  for (const auto& entry : doc.at("layers")) {
    json body = entry;
    std::string name;
    if (body.is_object() && body.contains("name")) {
      name = body.at("name").get<std::string>();
      body.erase("name");
      any_name = true;
    }
    layers.push_back(config_from_json(body));
    names.push_back(name);
  }
  NetworkSpec net;
  if (!doc.contains("links")) {
    net = make_network(std::move(layers));
  } else {
    net.layers = std::move(layers);
    for (const auto& entry : doc.at("links")) {
      NetworkLink link;
      try {
        link.from = entry.at("from").get<std::size_t>();
        link.to = entry.at("to").get<std::size_t>();
        if (entry.contains("name")) link.name = entry.at("name").get<std::string>();
      } catch (const json::exception& e) {
        throw DataError(std::string("network document: bad link: ") + e.what());
      }
      net.links.push_back(link);
    }
    std::sort(net.links.begin(), net.links.end(),
              [](const NetworkLink& a, const NetworkLink& b) { return a.from < b.from; });
  }
  if (any_name) net.names = std::move(names);
  net.validate();
  return net;
}

void save_network_file(const NetworkSpec& net, const std::filesystem::path& path) {
  write_text_file(path, network_to_json(net).dump(2) + "\n");
}

NetworkSpec load_network_file(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("network document: parse error: " + std::string(e.what()));
  }
  return network_from_json(doc);
}

}  // namespace latree
