#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "latree/error.hpp"
#include "latree/harness.hpp"
#include "latree/model_io.hpp"

namespace latree {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::int64_t draw(std::mt19937_64& rng, IntRange r) {
  return std::uniform_int_distribution<std::int64_t>(r.lo, r.hi)(rng);
}

template <class T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& values) {
  return values[std::uniform_int_distribution<std::size_t>(0, values.size() - 1)(rng)];
}

StructureConfig draw_with(const PlanScope& scope, LayerKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case LayerKind::FC:
      return StructureConfig::fc(draw(rng, scope.fc_in), draw(rng, scope.fc_out));
    case LayerKind::GRU:
    case LayerKind::LSTM: {
      const auto in = draw(rng, scope.rnn_in);
      const auto out = draw(rng, scope.rnn_out);
      const auto step = pick(rng, scope.steps);
      return kind == LayerKind::GRU ? StructureConfig::gru(in, out, step)
                                    : StructureConfig::lstm(in, out, step);
    }
    case LayerKind::CNN:
      break;
  }
  // Valid padding needs the kernel to fit; redraw the geometry until it does.
  for (;;) {
    ConvShape s;
    s.in_height = draw(rng, scope.cnn_height);
    s.in_width = draw(rng, scope.cnn_width);
    const auto& k = pick(rng, scope.kernels);
    s.kernel_height = k.first;
    s.kernel_width = k.second;
    s.in_channel = draw(rng, scope.cnn_channels);
    s.out_channel = draw(rng, scope.cnn_channels);
    s.padding = pick(rng, scope.paddings);
    s.stride = pick(rng, scope.strides);
    if (s.padding == Padding::Same || (s.in_height >= s.kernel_height && s.in_width >= s.kernel_width)) {
      return StructureConfig::conv(s);
    }
  }
}

std::string_view to_string(SampleSource s) { return s == SampleSource::Synthetic ? "synthetic" : "measured"; }

SampleSource parse_source(std::string_view s) {
  if (s == "synthetic") return SampleSource::Synthetic;
  if (s == "measured") return SampleSource::Measured;
  throw DataError("unknown sample source '" + std::string(s) + "'");
}

TreeNode leaf(std::vector<double> w, double b, std::size_t depth) {
  TreeNode n;
  n.fit.w = std::move(w);
  n.fit.b = b;
  n.depth = depth;
  return n;
}

TreeNode split(Condition cond, int left, int right, std::vector<double> w, double b, std::size_t depth) {
  TreeNode n = leaf(std::move(w), b, depth);
  n.cond = cond;
  n.left = left;
  n.right = right;
  return n;
}

template <class F>
void split_lines(std::string_view text, F&& each) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string line(text.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) each(line, line_no);
    pos = end + 1;
  }
}

}  // namespace

PlanScope scope_by_name(std::string_view name) {
  if (name == "default") {
    PlanScope scope;
    scope.name = "default";
    return scope;
  }
  throw DataError("unknown plan scope '" + std::string(name) + "'");
}

StructureConfig draw_config(const PlanScope& scope, LayerKind kind, std::uint64_t seed, std::uint64_t index) {
  std::mt19937_64 rng(fnv1a(std::to_string(index) + ":" + std::string(to_string(kind)), seed));
  return draw_with(scope, kind, rng);
}

std::vector<PlanEntry> generate_plan(std::string_view scope_name, std::size_t n_networks, std::uint64_t seed) {
  if (n_networks == 0) throw DataError("plan needs at least one network");
  const PlanScope scope = scope_by_name(scope_name);
  std::mt19937_64 rng(seed);
  std::vector<PlanEntry> plan;
  for (std::size_t net = 0; net < n_networks; ++net) {
    const auto layers = draw(rng, scope.layers_per_network);
    for (std::int64_t l = 0; l < layers; ++l) {
      const LayerKind kind = pick(rng, std::vector<LayerKind>(kAllLayerKinds.begin(), kAllLayerKinds.end()));
      plan.push_back({net, draw_with(scope, kind, rng)});
    }
  }
  return plan;
}

std::vector<PlanEntry> generate_kind_plan(std::string_view scope_name, LayerKind kind, std::size_t n_components,
                                          std::uint64_t seed) {
  if (n_components == 0) throw DataError("plan needs at least one component");
  const PlanScope scope = scope_by_name(scope_name);
  std::mt19937_64 rng(seed);
  std::vector<PlanEntry> plan;
  for (std::size_t i = 0; i < n_components; ++i) plan.push_back({i, draw_with(scope, kind, rng)});
  return plan;
}

std::string write_plan(const std::vector<PlanEntry>& plan) {
  std::string out;
  for (const auto& e : plan) {
    json rec = config_to_json(e.config);
    rec["network"] = e.network;
    out += rec.dump() + "\n";
  }
  return out;
}

std::vector<PlanEntry> read_plan(std::string_view text) {
  std::vector<PlanEntry> plan;
  split_lines(text, [&](const std::string& line, std::size_t line_no) {
    try {
      json rec = json::parse(line);
      PlanEntry e;
      e.network = rec.at("network").get<std::size_t>();
      rec.erase("network");
      e.config = config_from_json(rec);
      plan.push_back(e);
    } catch (const json::exception& ex) {
      throw DataError("plan line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const DataError& ex) {
      throw DataError("plan line " + std::to_string(line_no) + ": " + ex.what());
    }
  });
  return plan;
}

SyntheticOracle default_oracle(double noise, std::uint64_t seed) {
  SyntheticOracle oracle;
  oracle.name = "nexus5-like";
  oracle.noise = noise;
  oracle.seed = seed;
  FitParams params;

  const auto in_ch = *feature_index(LayerKind::CNN, "in_channel");
  const auto out_ch = *feature_index(LayerKind::CNN, "out_channel");
  const Condition in4{in_ch, 4, Condition::Kind::Multiple};
  const Condition out4{out_ch, 4, Condition::Kind::Multiple};
  std::vector<TreeNode> cnn = {
      split(in4, 1, 2, {3.8e-8, 5.2e-6, 0}, 9.2, 0),
      split(out4, 3, 4, {2.9e-8, 3.5e-6, 0}, 7.0, 1),
      split(out4, 5, 6, {4.6e-8, 7.0e-6, 0}, 11.4, 1),
      leaf({2.6e-8, 3.0e-6, 0}, 6.0, 2),
      leaf({3.2e-8, 4.0e-6, 0}, 8.0, 2),
      leaf({4.2e-8, 6.0e-6, 0}, 10.0, 2),
      leaf({5.0e-8, 8.0e-6, 0}, 12.8, 2),
  };
  oracle.planted.emplace(LayerKind::CNN, TimeModel(LayerKind::CNN, std::move(cnn), params));

  const auto fc_in = *feature_index(LayerKind::FC, "in_dim");
  std::vector<TreeNode> fc = {
      split({fc_in, 1024, Condition::Kind::Range}, 1, 2, {2.2e-7, 1.3e-5, 0}, 0.08, 0),
      leaf({1.8e-7, 1.0e-5, 0}, 0.05, 1),
      leaf({2.4e-7, 1.5e-5, 0}, 0.1, 1),
  };
  oracle.planted.emplace(LayerKind::FC, TimeModel(LayerKind::FC, std::move(fc), params));

  oracle.planted.emplace(LayerKind::GRU,
                         TimeModel(LayerKind::GRU, {leaf({1.2e-7, 2.0e-5, 0, 0.666}, 0.3, 0)}, params));
  oracle.planted.emplace(LayerKind::LSTM,
                         TimeModel(LayerKind::LSTM, {leaf({1.4e-7, 2.0e-5, 0, 0.75}, 0.4, 0)}, params));
  return oracle;
}

ProfileSample synth_time(const SyntheticOracle& oracle, const StructureConfig& config) {
  config.validate();
  auto it = oracle.planted.find(config.kind());
  if (it == oracle.planted.end()) {
    throw DataError("oracle has no law for " + std::string(to_string(config.kind())));
  }
  const double law = it->second.predict(config);
  double eps = 0;
  if (oracle.noise > 0) {
    std::mt19937_64 rng(fnv1a(canonical_text(config), oracle.seed));
    eps = std::max(-0.5, std::normal_distribution<double>(0.0, oracle.noise)(rng));
  }
  ProfileSample s;
  s.config = config;
  s.time_ms = law * (1.0 + eps);
  s.reps = 20;
  s.source = SampleSource::Synthetic;
  if (!(s.time_ms > 0) || !std::isfinite(s.time_ms)) {
    throw NumericError("oracle produced a non-positive time for " + canonical_text(config));
  }
  return s;
}

json oracle_to_json(const SyntheticOracle& oracle) {
  json models = json::array();
  for (const auto& [kind, model] : oracle.planted) models.push_back(model_to_json(model));
  return {{"format_version", model_format_version()},
          {"name", oracle.name},
          {"noise", oracle.noise},
          {"seed", oracle.seed},
          {"models", models}};
}

SyntheticOracle oracle_from_json(const json& doc) {
  parse_format_version(doc, "oracle document");
  SyntheticOracle oracle;
  try {
    oracle.name = doc.value("name", std::string());
    oracle.noise = doc.at("noise").get<double>();
    oracle.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& m : doc.at("models")) {
      TimeModel model = model_from_json(m);
      const auto kind = model.kind();
      if (!oracle.planted.emplace(kind, std::move(model)).second) {
        throw DataError("oracle document: duplicate law for " + std::string(to_string(kind)));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("oracle document: ") + e.what());
  }
  if (!(oracle.noise >= 0) || !std::isfinite(oracle.noise)) {
    throw DataError("oracle document: noise must be a non-negative number");
  }
  return oracle;
}

SyntheticOracle load_oracle_file(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("oracle document: parse error: " + std::string(e.what()));
  }
  return oracle_from_json(doc);
}

std::string write_profile(const std::vector<ProfileSample>& samples) {
  std::ostringstream out;
  for (const auto& s : samples) {
    json rec = config_to_json(s.config);
    rec["schema_version"] = kProfileSchemaVersion;
    rec["time_ms"] = s.time_ms;
    rec["reps"] = s.reps;
    rec["source"] = to_string(s.source);
    out << rec.dump() << '\n';
  }
  return out.str();
}

std::vector<ProfileSample> parse_profile(std::string_view text) {
  std::vector<ProfileSample> samples;
  std::optional<int> schema;
  split_lines(text, [&](const std::string& line, std::size_t line_no) {
    const std::string where = "profile line " + std::to_string(line_no) + ": ";
    try {
      json rec = json::parse(line);
      if (!rec.is_object()) throw DataError("record must be an object");
      const int version = rec.value("schema_version", kProfileSchemaVersion);
      if (version != kProfileSchemaVersion) {
        throw DataError("unsupported schema_version " + std::to_string(version));
      }
      if (schema && *schema != version) throw DataError("mixed schema versions");
      schema = version;
      ProfileSample s;
      s.time_ms = rec.at("time_ms").get<double>();
      if (!(s.time_ms > 0) || !std::isfinite(s.time_ms)) throw DataError("time_ms must be positive");
      s.reps = rec.value("reps", std::int64_t{1});
      if (s.reps < 1) throw DataError("reps must be at least 1");
      s.source = parse_source(rec.value("source", std::string("measured")));
      json cfg = {{"layer_type", rec.at("layer_type")}, {"config", rec.at("config")}};
      for (const auto& [key, _] : rec.items()) {
        static const std::vector<std::string> known = {"schema_version", "layer_type", "config",
                                                       "time_ms",        "reps",       "source"};
        if (std::find(known.begin(), known.end(), key) == known.end()) {
          throw DataError("unknown field '" + key + "'");
        }
      }
      s.config = config_from_json(cfg);
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  });
  return samples;
}

std::map<LayerKind, Dataset> group_by_kind(const std::vector<ProfileSample>& samples) {
  std::map<LayerKind, Dataset> out;
  for (const auto& s : samples) {
    auto it = out.try_emplace(s.config.kind(), s.config.kind()).first;
    it->second.add(s.config, s.time_ms);
  }
  return out;
}

std::map<LayerKind, Dataset> ingest_profile(const std::filesystem::path& path) {
  return group_by_kind(parse_profile(read_text_file(path)));
}

std::string write_datasets(const std::map<LayerKind, Dataset>& datasets) {
  std::vector<ProfileSample> samples;
  for (const auto& [kind, ds] : datasets) {
    for (const auto& s : ds.samples()) samples.push_back({s.config, s.y, 1, SampleSource::Measured});
  }
  return write_profile(samples);
}

}  // namespace latree
