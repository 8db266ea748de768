#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "latree/network.hpp"
#include "latree/timetree.hpp"

namespace latree {

using ModelMap = std::map<LayerKind, TimeModel>;

// Throws DataError when no model covers `kind`.
const TimeModel& model_for(const ModelMap& models, LayerKind kind);

/// One Multiple-node decision taken while walking the tree.
struct ExpansionDecision {
  std::size_t node = 0;
  Condition cond;
  double from = 0;  // feature value before rounding
  double to = 0;    // candidate multiple
  double expanded_time = 0;    // left-child law at the rounded config
  double unexpanded_time = 0;  // right-child law at the current config
  bool accepted = false;
  // "expanded<=unexpanded" when the time comparison decided, otherwise the
  // reason the candidate was never compared (cap, path violation, ...).
  std::string rule;
};

struct LayerExpansion {
  StructureConfig original;
  StructureConfig expanded;
  double time_before = 0;
  double time_after = 0;
  std::vector<ExpansionDecision> decisions;
  std::vector<Condition> accepted;
};

struct ExpansionTrace {
  std::vector<LayerExpansion> layers;
  std::vector<std::string> notes;  // conflict resolutions and fallbacks
};

/// Rounds width coordinates up to the multiples the model rewards, walking
/// root to leaf and accepting a rounding only when the node's true-side law
/// at the rounded config is no slower than its false-side law at the current
/// one. Repeated until nothing changes, so the result is a fixed point; a
/// pass is kept only if the model's prediction strictly drops. Each rounding
/// is capped at twice the coordinate it starts from.
std::pair<StructureConfig, LayerExpansion> expand_layer(const TimeModel& model,
                                                        const StructureConfig& config);

double network_time(const ModelMap& models, const NetworkSpec& net);

// Expands every layer, then resolves width conflicts across each link in
// order by keeping whichever side's width gives the shorter network time.
std::pair<NetworkSpec, ExpansionTrace> expand_network(const ModelMap& models, const NetworkSpec& net);

/// Training-side loss term of the compression objective. Implementations
/// must be deterministic for fixed parameters.
class LossEvaluator {
 public:
  virtual ~LossEvaluator() = default;
  virtual double loss(const NetworkSpec& net) const = 0;
  // Opaque compressor parameters; carried, never interpreted here.
  nlohmann::json theta;
};

class ZeroLoss final : public LossEvaluator {
 public:
  double loss(const NetworkSpec&) const override { return 0.0; }
};

class FunctionLoss final : public LossEvaluator {
 public:
  explicit FunctionLoss(std::function<double(const NetworkSpec&)> fn) : fn_(std::move(fn)) {}
  double loss(const NetworkSpec& net) const override { return fn_(net); }

 private:
  std::function<double(const NetworkSpec&)> fn_;
};

/// Capacity proxy: scale * sum_l (reference_out_l / out_l - 1) over layers
/// whose output width shrank. Zero at the reference widths.
class CapacityLoss final : public LossEvaluator {
 public:
  CapacityLoss(NetworkSpec reference, double scale) : reference_(std::move(reference)), scale_(scale) {}
  double loss(const NetworkSpec& net) const override;

 private:
  NetworkSpec reference_;
  double scale_;
};

/// Runs `command <network-file>` and reads one non-negative real from
/// stdout. A non-zero exit or unparsable output is a NumericError.
class CommandLoss final : public LossEvaluator {
 public:
  explicit CommandLoss(std::string command) : command_(std::move(command)) {}
  double loss(const NetworkSpec& net) const override;

 private:
  std::string command_;
};

double time_aware_objective(const LossEvaluator& evaluator, const ModelMap& models,
                            const NetworkSpec& net, double lambda);

// Allowed output widths per layer. The next layer's input follows via links.
using WidthGrid = std::vector<std::vector<std::int64_t>>;

struct CompressResult {
  NetworkSpec network;
  double objective_before = 0;
  double objective_after = 0;
  double time_before = 0;
  double time_after = 0;
  std::size_t evaluations = 0;
  bool fell_back_to_input = false;
  ExpansionTrace trace;
};

// Applies one output width per layer, repairing linked input widths.
NetworkSpec apply_widths(const NetworkSpec& net, const std::vector<std::int64_t>& widths);

// Best-improvement coordinate descent over single-layer width moves, each
// candidate scored after expand_network; at most `budget` evaluator calls,
// one of which scores the input network.
CompressResult greedy_compress(const LossEvaluator& evaluator, const ModelMap& models,
                               const NetworkSpec& net, double lambda, const WidthGrid& grid,
                               std::size_t budget);

// Exhaustive minimiser over the grid (at most 1e6 candidates); ties go to the
// lexicographically smallest width vector.
CompressResult brute_force_compress(const LossEvaluator& evaluator, const ModelMap& models,
                                    const NetworkSpec& net, double lambda, const WidthGrid& grid);

/// Irreducible per-step setup time of the network's recurrent layers of the
/// model's kind: step * step-coefficient of the leaf reached by the
/// minimal (1-unit) structure after expansion.
double rnn_time_floor(const TimeModel& model, const NetworkSpec& net);

struct CopyBlock {
  std::vector<std::int64_t> src_offset;
  std::vector<std::int64_t> dst_offset;
  std::vector<std::int64_t> extent;
};

// Old weights are copied block-wise into the new shape; all other entries
// are zero.
struct TensorPad {
  std::string name;
  std::vector<std::int64_t> old_shape;
  std::vector<std::int64_t> new_shape;
  std::vector<CopyBlock> blocks;
};

struct LayerPad {
  std::size_t layer = 0;
  std::vector<TensorPad> tensors;
};

struct ZeroPadPlan {
  std::vector<LayerPad> layers;
  bool empty() const { return layers.empty(); }
};

// Throws DataError unless `expanded` is a coordinate-wise enlargement of `old`.
ZeroPadPlan zero_pad_plan(const NetworkSpec& old, const NetworkSpec& expanded);

nlohmann::json trace_to_json(const ExpansionTrace& trace);
nlohmann::json pad_plan_to_json(const ZeroPadPlan& plan);

}  // namespace latree
