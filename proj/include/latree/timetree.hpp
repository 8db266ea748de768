#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latree/core_types.hpp"

namespace latree {

/// Split predicate on one feature. Range: f[j] <= tau (cache and memory
/// regimes). Multiple: f[j] % tau == 0 (unrolling and alignment effects).
struct Condition {
  enum class Kind { Range, Multiple };

  std::size_t feature = 0;
  double tau = 0;
  Kind kind = Kind::Range;

  bool holds(double value) const;
  bool holds(const FeatureVector& f) const { return holds(f[feature]); }
  bool operator==(const Condition&) const = default;
};

std::string_view to_string(Condition::Kind kind);
std::string describe(const Condition& cond, LayerKind layer);

/// Non-negative linear law y = w.x + b fitted on one node's samples.
struct LinearFit {
  std::vector<double> w;
  double b = 0;
  std::size_t n = 0;
  double mape = 0;  // fraction, not percent
  double mse = 0;

  double predict(const ExplanatoryVector& x) const;
};

struct FitParams {
  double mape_stop = 0.05;
  std::size_t min_leaf = 15;
  std::size_t max_depth = 12;
  std::vector<std::int64_t> multiple_taus = {2, 3, 4, 6, 8, 16, 32, 64, 128};
  std::size_t range_quantiles = 16;
  std::uint64_t noise_seed = 0;

  void validate() const;
};

struct Sample {
  StructureConfig config;
  FeatureVector f;
  ExplanatoryVector x;
  double y;
};

/// Profiling records of a single layer kind. All times are positive.
class Dataset {
 public:
  explicit Dataset(LayerKind kind) : kind_(kind) {}

  LayerKind kind() const { return kind_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<Sample>& samples() const { return samples_; }

  // Derives f and x from the config. Throws DataError on a kind mismatch or
  // a non-positive time.
  void add(const StructureConfig& config, double time_ms);
  void add(Sample sample);

 private:
  LayerKind kind_;
  std::vector<Sample> samples_;
};

struct TreeNode {
  std::optional<Condition> cond;  // absent on leaves
  LinearFit fit;
  int left = -1;   // condition true
  int right = -1;  // condition false
  std::size_t depth = 0;

  bool is_leaf() const { return left < 0; }
};

/// Binary tree of conditions with a non-negative linear law at every node.
/// Immutable once built; node 0 is the root and ids follow breadth-first
/// creation order.
class TimeModel {
 public:
  TimeModel(LayerKind kind, std::vector<TreeNode> nodes, FitParams params);

  LayerKind kind() const { return kind_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(std::size_t id) const { return nodes_.at(id); }
  const TreeNode& root() const { return nodes_.front(); }
  const FitParams& params() const { return params_; }
  std::size_t leaf_count() const;
  std::size_t depth() const;

  std::size_t route(const FeatureVector& f) const;
  double predict(const FeatureVector& f, const ExplanatoryVector& x) const;
  // Throws DataError when config.kind() != kind().
  double predict(const StructureConfig& config) const;

 private:
  LayerKind kind_;
  std::vector<TreeNode> nodes_;
  FitParams params_;
};

// Throws DataError on an empty dataset.
LinearFit nnls_fit(const Dataset& dataset);

std::vector<Condition> enumerate_conditions(const Dataset& dataset, const FitParams& params);

std::pair<Dataset, Dataset> partition(const Dataset& dataset, const Condition& cond);

// Weighted child MSE. Throws DataError when either side would be empty.
double impurity(const Dataset& dataset, const Condition& cond);

TimeModel fit_tree(const Dataset& dataset, const FitParams& params = {});

double predict(const TimeModel& model, const StructureConfig& config);

double mape(const TimeModel& model, const Dataset& dataset);

}  // namespace latree
