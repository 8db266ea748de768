#include "latree/model_io.hpp"

#include <fstream>
#include <sstream>

#include "latree/error.hpp"

namespace latree {

namespace {

using nlohmann::json;

template <typename T>
T field(const json& obj, const char* name) {
  if (!obj.contains(name)) throw DataError(std::string("model document: missing field '") + name + "'");
  try {
    return obj.at(name).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("model document: bad field '") + name + "': " + e.what());
  }
}

template <typename T>
T field_or(const json& obj, const char* name, T fallback) {
  if (!obj.contains(name) || obj.at(name).is_null()) return fallback;
  return field<T>(obj, name);
}

}  // namespace

std::string model_format_version() {
  return std::to_string(kModelFormatMajor) + "." + std::to_string(kModelFormatMinor);
}

std::pair<int, int> parse_format_version(const json& doc, std::string_view what) {
  if (!doc.is_object() || !doc.contains("format_version") || !doc.at("format_version").is_string()) {
    throw DataError(std::string(what) + ": missing string 'format_version'");
  }
  const auto text = doc.at("format_version").get<std::string>();
  int major = 0;
  int minor = 0;
  char dot = 0;
  std::istringstream is(text);
  if (!(is >> major >> dot >> minor) || dot != '.' || !is.eof()) {
    throw DataError(std::string(what) + ": malformed format_version '" + text + "'");
  }
  if (major != kModelFormatMajor || minor > kModelFormatMinor) {
    throw DataError(std::string(what) + ": unsupported format_version " + text + " (reader is " +
                    model_format_version() + ")");
  }
  return {major, minor};
}

json fit_params_to_json(const FitParams& p) {
  return {{"mape_stop", p.mape_stop},       {"min_leaf", p.min_leaf},
          {"max_depth", p.max_depth},       {"multiple_taus", p.multiple_taus},
          {"range_quantiles", p.range_quantiles}, {"noise_seed", p.noise_seed}};
}

FitParams fit_params_from_json(const json& j, int minor) {
  FitParams p;
  if (!j.is_object()) throw DataError("model document: 'fit_params' must be an object");
  p.mape_stop = field<double>(j, "mape_stop");
  p.min_leaf = field<std::size_t>(j, "min_leaf");
  p.max_depth = field<std::size_t>(j, "max_depth");
  p.multiple_taus = field<std::vector<std::int64_t>>(j, "multiple_taus");
  p.noise_seed = field_or<std::uint64_t>(j, "noise_seed", 0);
  // range_quantiles appeared in 1.1.
  p.range_quantiles = minor >= 1 ? field<std::size_t>(j, "range_quantiles")
                                 : field_or<std::size_t>(j, "range_quantiles", FitParams{}.range_quantiles);
  return p;
}

json model_to_json(const TimeModel& model) {
  json nodes = json::array();
  const auto names = feature_names(model.kind());
  for (std::size_t id = 0; id < model.nodes().size(); ++id) {
    const auto& n = model.node(id);
    json cond = nullptr;
    if (n.cond) {
      cond = {{"feature", n.cond->feature},
              {"feature_name", std::string(names[n.cond->feature])},
              {"tau", n.cond->tau},
              {"kind", std::string(to_string(n.cond->kind))}};
    }
    nodes.push_back({{"id", id},
                     {"cond", cond},
                     {"w", n.fit.w},
                     {"b", n.fit.b},
                     {"n", n.fit.n},
                     {"mape", n.fit.mape},
                     {"mse", n.fit.mse},
                     {"depth", n.depth},
                     {"left", n.left >= 0 ? json(n.left) : json(nullptr)},
                     {"right", n.right >= 0 ? json(n.right) : json(nullptr)}});
  }
  return {{"format_version", model_format_version()},
          {"layer_kind", std::string(to_string(model.kind()))},
          {"fit_params", fit_params_to_json(model.params())},
          {"nodes", nodes}};
}

TimeModel model_from_json(const json& doc) {
  const auto [major, minor] = parse_format_version(doc, "model document");
  (void)major;
  const auto kind = parse_layer_kind(field<std::string>(doc, "layer_kind"));
  if (!doc.contains("fit_params")) throw DataError("model document: missing field 'fit_params'");
  const auto params = fit_params_from_json(doc.at("fit_params"), minor);
  if (!doc.contains("nodes") || !doc.at("nodes").is_array()) {
    throw DataError("model document: 'nodes' must be an array");
  }
  const auto& arr = doc.at("nodes");
  std::vector<TreeNode> nodes(arr.size());
  std::vector<bool> seen(arr.size(), false);
  for (const auto& jn : arr) {
    const auto id = field<std::size_t>(jn, "id");
    if (id >= nodes.size() || seen[id]) throw DataError("model document: bad or duplicate node id");
    seen[id] = true;
    TreeNode node;
    if (jn.contains("cond") && !jn.at("cond").is_null()) {
      const auto& jc = jn.at("cond");
      Condition c;
      c.feature = field<std::size_t>(jc, "feature");
      c.tau = field<double>(jc, "tau");
      const auto k = field<std::string>(jc, "kind");
      if (k == "range") {
        c.kind = Condition::Kind::Range;
      } else if (k == "multiple") {
        c.kind = Condition::Kind::Multiple;
      } else {
        throw DataError("model document: unknown condition kind '" + k + "'");
      }
      if (c.feature >= feature_count(kind)) throw DataError("model document: condition feature out of range");
      node.cond = c;
    }
    node.fit.w = field<std::vector<double>>(jn, "w");
    node.fit.b = field<double>(jn, "b");
    node.fit.n = field<std::size_t>(jn, "n");
    // Per-node error statistics appeared in 1.1.
    node.fit.mape = minor >= 1 ? field<double>(jn, "mape") : field_or<double>(jn, "mape", 0.0);
    node.fit.mse = minor >= 1 ? field<double>(jn, "mse") : field_or<double>(jn, "mse", 0.0);
    node.depth = field_or<std::size_t>(jn, "depth", 0);
    node.left = field_or<int>(jn, "left", -1);
    node.right = field_or<int>(jn, "right", -1);
    nodes[id] = std::move(node);
  }
  // Depth is derivable; recompute so older files stay consistent.
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (nodes[id].left >= 0 && std::size_t(nodes[id].left) < nodes.size()) {
      nodes[std::size_t(nodes[id].left)].depth = nodes[id].depth + 1;
    }
    if (nodes[id].right >= 0 && std::size_t(nodes[id].right) < nodes.size()) {
      nodes[std::size_t(nodes[id].right)].depth = nodes[id].depth + 1;
    }
  }
  return TimeModel(kind, std::move(nodes), params);
}

std::string save_model(const TimeModel& model) { return model_to_json(model).dump(2) + "\n"; }

TimeModel load_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("model document: parse error: ") + e.what());
  }
  return model_from_json(doc);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void save_model_file(const TimeModel& model, const std::filesystem::path& path) {
  write_text_file(path, save_model(model));
}

TimeModel load_model_file(const std::filesystem::path& path) { return load_model(read_text_file(path)); }

}  // namespace latree
