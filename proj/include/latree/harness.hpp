#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latree/timetree.hpp"

namespace latree {

struct IntRange {
  std::int64_t lo = 1;
  std::int64_t hi = 1;
};

/// Structure configuration scope the profiling plan samples from.
struct PlanScope {
  std::string name;
  IntRange fc_in{1, 4096};
  IntRange fc_out{1, 4096};
  IntRange cnn_height{24, 225};
  IntRange cnn_width{24, 225};
  std::vector<std::pair<std::int64_t, std::int64_t>> kernels{{2, 2}, {3, 3}, {4, 4}, {5, 5}, {2, 3}};
  IntRange cnn_channels{1, 256};
  std::vector<Padding> paddings{Padding::Valid, Padding::Same};
  std::vector<std::int64_t> strides{1, 2};
  IntRange rnn_in{1, 512};
  IntRange rnn_out{1, 512};
  std::vector<std::int64_t> steps{8, 10, 15, 20};
  IntRange layers_per_network{6, 16};
};

// "default" is the full profiling scope. Throws DataError for unknown names.
PlanScope scope_by_name(std::string_view name);

struct PlanEntry {
  std::size_t network = 0;
  StructureConfig config = StructureConfig::fc(1, 1);
};

/// Random networks of uniformly drawn layers; deterministic under the seed.
/// The default scope gives about 11 components per network.
std::vector<PlanEntry> generate_plan(std::string_view scope, std::size_t n_networks, std::uint64_t seed);
// Components of one kind only, one per "network".
std::vector<PlanEntry> generate_kind_plan(std::string_view scope, LayerKind kind, std::size_t n_components,
                                          std::uint64_t seed);
StructureConfig draw_config(const PlanScope& scope, LayerKind kind, std::uint64_t seed, std::uint64_t index);

std::string write_plan(const std::vector<PlanEntry>& plan);
std::vector<PlanEntry> read_plan(std::string_view text);

enum class SampleSource { Measured, Synthetic };

struct ProfileSample {
  StructureConfig config = StructureConfig::fc(1, 1);
  double time_ms = 0;
  std::int64_t reps = 1;
  SampleSource source = SampleSource::Measured;
};

/// Planted condition trees standing in for on-device profiling.
struct SyntheticOracle {
  std::string name;
  std::map<LayerKind, TimeModel> planted;
  double noise = 0;  // relative standard deviation
  std::uint64_t seed = 0;
};

// Multiple-of-4 channel dips for CNN, a cache range for FC, and a per-step
// setup cost for the recurrent kinds.
SyntheticOracle default_oracle(double noise = 0.01, std::uint64_t seed = 7);

// time = law(config) * (1 + eps), eps ~ N(0, noise^2) truncated at -0.5,
// seeded from (oracle.seed, canonical config text).
ProfileSample synth_time(const SyntheticOracle& oracle, const StructureConfig& config);

nlohmann::json oracle_to_json(const SyntheticOracle& oracle);
SyntheticOracle oracle_from_json(const nlohmann::json& doc);
SyntheticOracle load_oracle_file(const std::filesystem::path& path);

/// Line-delimited profile records:
/// {"schema_version":1,"layer_type":..,"config":{..},"time_ms":..,"reps":..,"source":..}
inline constexpr int kProfileSchemaVersion = 1;
std::string write_profile(const std::vector<ProfileSample>& samples);
std::vector<ProfileSample> parse_profile(std::string_view text);
std::map<LayerKind, Dataset> group_by_kind(const std::vector<ProfileSample>& samples);
std::map<LayerKind, Dataset> ingest_profile(const std::filesystem::path& path);
std::string write_datasets(const std::map<LayerKind, Dataset>& datasets);

}  // namespace latree
