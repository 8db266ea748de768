#include "latree/steering.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>

#include "latree/error.hpp"

namespace latree {

namespace {

struct PathStep {
  Condition cond;
  bool truth;
};

bool obeys(const FeatureVector& f, const std::vector<PathStep>& path) {
  return std::all_of(path.begin(), path.end(),
                     [&](const PathStep& s) { return s.cond.holds(f) == s.truth; });
}

StructureConfig with_width(const StructureConfig& config, WidthField field, std::int64_t value) {
  StructureConfig out = config;
  if (field == WidthField::In) {
    out.set_in_width(value);
  } else {
    out.set_out_width(value);
  }
  return out;
}

std::int64_t width_of(const StructureConfig& config, WidthField field) {
  return field == WidthField::In ? config.in_width() : config.out_width();
}

// One root-to-leaf walk of the expansion search.
StructureConfig expansion_pass(const TimeModel& model, const StructureConfig& start,
                               std::vector<ExpansionDecision>& decisions) {
  StructureConfig cur = start;
  FeatureVector f = derive_features(cur);
  ExplanatoryVector x = derive_explanatory(cur);
  std::vector<PathStep> path;

  std::size_t id = 0;
  while (!model.node(id).is_leaf()) {
    const auto& node = model.node(id);
    const Condition cond = *node.cond;
    const auto& left = model.node(std::size_t(node.left));
    const auto& right = model.node(std::size_t(node.right));

    const bool truth = cond.holds(f);
    if (cond.kind == Condition::Kind::Range || truth) {
      path.push_back({cond, truth});
      id = std::size_t(truth ? node.left : node.right);
      continue;
    }

    ExpansionDecision d;
    d.node = id;
    d.cond = cond;
    d.from = f[cond.feature];
    const auto field = width_field_for_feature(model.kind(), cond.feature);
    const auto tau = static_cast<std::int64_t>(cond.tau);
    bool accept = false;
    if (!field) {
      d.rule = "not-a-width";
    } else {
      const std::int64_t value = width_of(cur, *field);
      const std::int64_t target = tau * ((value + tau - 1) / tau);
      d.to = double(target);
      if (target > 2 * width_of(start, *field)) {
        d.rule = "cap-2x";
      } else {
        const StructureConfig cand = with_width(cur, *field, target);
        const FeatureVector fc = derive_features(cand);
        const ExplanatoryVector xc = derive_explanatory(cand);
        d.expanded_time = left.fit.predict(xc);
        d.unexpanded_time = right.fit.predict(x);
        if (!obeys(fc, path)) {
          d.rule = "violates-path";
        } else {
          d.rule = "expanded<=unexpanded";
          accept = d.expanded_time <= d.unexpanded_time;
          if (accept) {
            cur = cand;
            f = fc;
            x = xc;
          }
        }
      }
    }
    d.accepted = accept;
    decisions.push_back(d);
    path.push_back({cond, accept});
    id = std::size_t(accept ? node.left : node.right);
  }
  return cur;
}

std::uint64_t hash_bytes(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

const TimeModel& model_for(const ModelMap& models, LayerKind kind) {
  const auto it = models.find(kind);
  if (it == models.end()) {
    throw DataError("no time model for layer kind " + std::string(to_string(kind)));
  }
  return it->second;
}

std::pair<StructureConfig, LayerExpansion> expand_layer(const TimeModel& model,
                                                        const StructureConfig& config) {
  if (config.kind() != model.kind()) {
    throw DataError("expand_layer: model for " + std::string(to_string(model.kind())) +
                    " given a " + std::string(to_string(config.kind())) + " layer");
  }
  LayerExpansion entry{config, config, model.predict(config), 0.0, {}, {}};
  StructureConfig cur = config;
  double cur_time = entry.time_before;
  // A strictly decreasing prediction cannot revisit a leaf, so the number of
  // productive passes is bounded by the leaf count.
  const std::size_t max_passes = model.leaf_count() + 1;
  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    std::vector<ExpansionDecision> decisions;
    const StructureConfig cand = expansion_pass(model, cur, decisions);
    if (cand == cur) {
      if (pass == 0) entry.decisions = decisions;
      break;
    }
    const double t = model.predict(cand);
    if (!(t < cur_time)) {
      for (auto& d : decisions) {
        if (d.accepted) {
          d.accepted = false;
          d.rule += ",pass-not-faster";
        }
      }
      entry.decisions.insert(entry.decisions.end(), decisions.begin(), decisions.end());
      break;
    }
    for (const auto& d : decisions) {
      if (d.accepted) entry.accepted.push_back(d.cond);
    }
    entry.decisions.insert(entry.decisions.end(), decisions.begin(), decisions.end());
    cur = cand;
    cur_time = t;
  }
  entry.expanded = cur;
  entry.time_after = cur_time;
  return {cur, entry};
}

double network_time(const ModelMap& models, const NetworkSpec& net) {
  double total = 0;
  for (const auto& layer : net.layers) total += model_for(models, layer.kind()).predict(layer);
  return total;
}

std::pair<NetworkSpec, ExpansionTrace> expand_network(const ModelMap& models, const NetworkSpec& net) {
  net.validate();
  ExpansionTrace trace;
  NetworkSpec cur = net;
  for (std::size_t l = 0; l < net.size(); ++l) {
    auto [expanded, entry] = expand_layer(model_for(models, net.layers[l].kind()), net.layers[l]);
    cur.layers[l] = expanded;
    trace.layers.push_back(std::move(entry));
  }

  for (const auto& link : net.links) {
    const std::int64_t a = cur.layers[link.from].out_width();
    const std::int64_t b = cur.layers[link.to].in_width();
    if (a == b) continue;
    NetworkSpec keep_from = cur;
    keep_from.layers[link.to].set_in_width(a);
    NetworkSpec keep_to = cur;
    keep_to.layers[link.from].set_out_width(b);
    const double ta = network_time(models, keep_from);
    const double tb = network_time(models, keep_to);
    std::ostringstream note;
    note << "link " << link.from << "->" << link.to << ": widths " << a << " vs " << b << ", kept ";
    if (ta <= tb) {
      cur = std::move(keep_from);
      note << a;
    } else {
      cur = std::move(keep_to);
      note << b;
    }
    trace.notes.push_back(note.str());
  }

  for (std::size_t l = 0; l < cur.size(); ++l) {
    trace.layers[l].expanded = cur.layers[l];
    trace.layers[l].time_after = model_for(models, cur.layers[l].kind()).predict(cur.layers[l]);
  }
  if (network_time(models, cur) > network_time(models, net)) {
    trace.notes.push_back("resolved network slower than input; kept input widths");
    for (std::size_t l = 0; l < net.size(); ++l) {
      trace.layers[l].expanded = net.layers[l];
      trace.layers[l].time_after = trace.layers[l].time_before;
    }
    return {net, trace};
  }
  cur.validate();
  return {cur, trace};
}

double CapacityLoss::loss(const NetworkSpec& net) const {
  if (net.size() != reference_.size()) throw DataError("capacity loss: network shape differs from reference");
  double total = 0;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const double ref = double(reference_.layers[l].out_width());
    const double got = double(net.layers[l].out_width());
    if (got < ref) total += ref / got - 1.0;
  }
  return scale_ * total;
}

double CommandLoss::loss(const NetworkSpec& net) const {
  namespace fs = std::filesystem;
  const std::string text = network_to_json(net).dump();
  const fs::path path = fs::temp_directory_path() /
                        ("latree-net-" + std::to_string(::getpid()) + "-" +
                         std::to_string(hash_bytes(text)) + ".json");
  save_network_file(net, path);
  const std::string cmd = command_ + " '" + path.string() + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    fs::remove(path);
    throw NumericError("evaluator: cannot start '" + command_ + "'");
  }
  std::string output;
  std::array<char, 256> buf{};
  while (std::fgets(buf.data(), int(buf.size()), pipe)) output += buf.data();
  const int status = ::pclose(pipe);
  std::error_code ec;
  fs::remove(path, ec);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw NumericError("evaluator: '" + command_ + "' failed");
  }
  std::istringstream is(output);
  double value = 0;
  if (!(is >> value) || !std::isfinite(value) || value < 0) {
    throw NumericError("evaluator: expected one non-negative real, got '" + output + "'");
  }
  return value;
}

double time_aware_objective(const LossEvaluator& evaluator, const ModelMap& models,
                            const NetworkSpec& net, double lambda) {
  if (lambda < 0) throw DataError("lambda must be non-negative");
  const double loss = evaluator.loss(net);
  if (lambda == 0) return loss;
  return loss + lambda * network_time(models, net);
}

NetworkSpec apply_widths(const NetworkSpec& net, const std::vector<std::int64_t>& widths) {
  NetworkSpec out = net;
  for (std::size_t l = 0; l < net.size(); ++l) {
    out.layers[l].set_out_width(widths[l]);
    if (const auto link = net.link_after(l)) out.layers[link->to].set_in_width(widths[l]);
  }
  return out;
}

namespace {

class Scorer {
 public:
  Scorer(const LossEvaluator& evaluator, const ModelMap& models, const NetworkSpec& net,
         double lambda, std::size_t budget)
      : evaluator_(evaluator), models_(models), net_(net), lambda_(lambda), budget_(budget) {}

  // nullopt once the evaluator budget is spent.
  std::optional<double> score(const std::vector<std::int64_t>& widths) {
    if (const auto it = cache_.find(widths); it != cache_.end()) return it->second;
    if (calls_ >= budget_) return std::nullopt;
    const auto expanded = expand_network(models_, apply_widths(net_, widths)).first;
    ++calls_;
    const double value = time_aware_objective(evaluator_, models_, expanded, lambda_);
    cache_.emplace(widths, value);
    return value;
  }

  std::size_t calls() const { return calls_; }

 private:
  const LossEvaluator& evaluator_;
  const ModelMap& models_;
  const NetworkSpec& net_;
  double lambda_;
  std::size_t budget_;
  std::size_t calls_ = 0;
  std::map<std::vector<std::int64_t>, double> cache_;
};

void check_grid(const NetworkSpec& net, const WidthGrid& grid) {
  if (grid.size() != net.size()) throw DataError("width grid must list one set of widths per layer");
  for (std::size_t l = 0; l < grid.size(); ++l) {
    if (grid[l].empty()) throw DataError("width grid for layer " + std::to_string(l) + " is empty");
    for (auto w : grid[l]) {
      if (w < 1) throw DataError("width grid values must be positive");
    }
  }
}

std::vector<std::int64_t> out_widths(const NetworkSpec& net) {
  std::vector<std::int64_t> w;
  for (const auto& layer : net.layers) w.push_back(layer.out_width());
  return w;
}

CompressResult finish(const LossEvaluator& evaluator, const ModelMap& models, const NetworkSpec& net,
                      double lambda, const std::vector<std::int64_t>& widths, double best,
                      std::size_t calls, bool allow_fallback) {
  CompressResult result;
  result.objective_before = time_aware_objective(evaluator, models, net, lambda);
  result.evaluations = calls + 1;
  result.time_before = network_time(models, net);
  auto [expanded, trace] = expand_network(models, apply_widths(net, widths));
  if (allow_fallback && best > result.objective_before) {
    result.network = net;
    result.objective_after = result.objective_before;
    result.fell_back_to_input = true;
    result.trace.notes.push_back("search result scored above the input network; returned input");
  } else {
    result.network = std::move(expanded);
    result.objective_after = best;
    result.trace = std::move(trace);
  }
  result.time_after = network_time(models, result.network);
  return result;
}

}  // namespace

CompressResult greedy_compress(const LossEvaluator& evaluator, const ModelMap& models,
                               const NetworkSpec& net, double lambda, const WidthGrid& grid,
                               std::size_t budget) {
  net.validate();
  check_grid(net, grid);
  if (lambda < 0) throw DataError("lambda must be non-negative");
  if (budget < 2) throw DataError("evaluation budget must be at least 2");
  // One call is kept back for scoring the input network itself.
  Scorer scorer(evaluator, models, net, lambda, budget - 1);
  std::vector<std::int64_t> state = out_widths(net);
  auto start = scorer.score(state);
  double best = *start;

  bool budget_left = true;
  while (budget_left) {
    std::optional<std::pair<std::size_t, std::int64_t>> move;
    double move_score = best;
    for (std::size_t l = 0; l < net.size() && budget_left; ++l) {
      for (auto w : grid[l]) {
        if (w == state[l]) continue;
        auto trial = state;
        trial[l] = w;
        const auto s = scorer.score(trial);
        if (!s) {
          budget_left = false;
          break;
        }
        if (*s < move_score) {
          move_score = *s;
          move = {l, w};
        }
      }
    }
    if (!move || !(move_score < best)) break;
    state[move->first] = move->second;
    best = move_score;
  }
  return finish(evaluator, models, net, lambda, state, best, scorer.calls(), true);
}

CompressResult brute_force_compress(const LossEvaluator& evaluator, const ModelMap& models,
                                    const NetworkSpec& net, double lambda, const WidthGrid& grid) {
  net.validate();
  check_grid(net, grid);
  if (lambda < 0) throw DataError("lambda must be non-negative");
  double space = 1;
  for (const auto& g : grid) space *= double(g.size());
  if (space > 1e6) throw DataError("brute-force search space exceeds 1e6 candidates");

  WidthGrid sorted = grid;
  for (auto& g : sorted) {
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
  }
  Scorer scorer(evaluator, models, net, lambda, std::numeric_limits<std::size_t>::max());
  std::vector<std::size_t> idx(net.size(), 0);
  std::vector<std::int64_t> widths(net.size());
  std::vector<std::int64_t> best_widths;
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    for (std::size_t l = 0; l < net.size(); ++l) widths[l] = sorted[l][idx[l]];
    const double s = *scorer.score(widths);
    if (s < best) {
      best = s;
      best_widths = widths;
    }
    // Odometer over the grid, last layer fastest: lexicographic order.
    bool carry = true;
    for (std::size_t l = net.size(); l > 0 && carry; --l) {
      if (++idx[l - 1] < sorted[l - 1].size()) {
        carry = false;
      } else {
        idx[l - 1] = 0;
      }
    }
    if (carry) break;
  }
  return finish(evaluator, models, net, lambda, best_widths, best, scorer.calls(), false);
}

double rnn_time_floor(const TimeModel& model, const NetworkSpec& net) {
  if (!is_recurrent(model.kind())) throw DataError("rnn_time_floor needs a GRU or LSTM model");
  const std::size_t step_index = 3;
  double total = 0;
  for (const auto& layer : net.layers) {
    if (layer.kind() != model.kind()) continue;
    const auto step = layer.recurrent().step;
    const auto minimal = model.kind() == LayerKind::GRU ? StructureConfig::gru(1, 1, step)
                                                        : StructureConfig::lstm(1, 1, step);
    const auto expanded = expand_layer(model, minimal).first;
    const auto& leaf = model.node(model.route(derive_features(expanded)));
    total += double(step) * leaf.fit.w[step_index];
  }
  return total;
}

namespace {

void require_grown(std::int64_t before, std::int64_t after, std::size_t layer) {
  if (after < before) {
    throw DataError("zero_pad_plan: layer " + std::to_string(layer) + " shrinks (" +
                    std::to_string(before) + " -> " + std::to_string(after) + ")");
  }
}

TensorPad embed(std::string name, std::vector<std::int64_t> old_shape, std::vector<std::int64_t> new_shape) {
  TensorPad t{std::move(name), old_shape, new_shape, {}};
  t.blocks.push_back({std::vector<std::int64_t>(old_shape.size(), 0),
                      std::vector<std::int64_t>(old_shape.size(), 0), old_shape});
  return t;
}

// Gate-major recurrent tensors: each of `gates` column blocks moves to its
// new offset.
TensorPad gated(std::string name, std::int64_t old_rows, std::int64_t new_rows, std::int64_t old_out,
                std::int64_t new_out, std::int64_t gates) {
  TensorPad t{std::move(name), {old_rows, gates * old_out}, {new_rows, gates * new_out}, {}};
  for (std::int64_t g = 0; g < gates; ++g) t.blocks.push_back({{0, g * old_out}, {0, g * new_out}, {old_rows, old_out}});
  return t;
}

}  // namespace

ZeroPadPlan zero_pad_plan(const NetworkSpec& old, const NetworkSpec& expanded) {
  if (old.size() != expanded.size()) throw DataError("zero_pad_plan: networks differ in depth");
  ZeroPadPlan plan;
  for (std::size_t l = 0; l < old.size(); ++l) {
    const auto& a = old.layers[l];
    const auto& b = expanded.layers[l];
    if (a.kind() != b.kind()) throw DataError("zero_pad_plan: layer kinds differ at " + std::to_string(l));
    require_grown(a.in_width(), b.in_width(), l);
    require_grown(a.out_width(), b.out_width(), l);
    if (a == b) continue;
    LayerPad pad;
    pad.layer = l;
    switch (a.kind()) {
      case LayerKind::FC:
        pad.tensors.push_back(embed("kernel", {a.in_width(), a.out_width()}, {b.in_width(), b.out_width()}));
        pad.tensors.push_back(embed("bias", {a.out_width()}, {b.out_width()}));
        break;
      case LayerKind::CNN: {
        const auto& s = a.conv();
        const auto& t = b.conv();
        if (s.kernel_height != t.kernel_height || s.kernel_width != t.kernel_width ||
            s.in_height != t.in_height || s.in_width != t.in_width || s.stride != t.stride ||
            s.padding != t.padding) {
          throw DataError("zero_pad_plan: only channel counts may change (layer " + std::to_string(l) + ")");
        }
        pad.tensors.push_back(embed("kernel", {s.kernel_height, s.kernel_width, s.in_channel, s.out_channel},
                                    {t.kernel_height, t.kernel_width, t.in_channel, t.out_channel}));
        pad.tensors.push_back(embed("bias", {s.out_channel}, {t.out_channel}));
        break;
      }
      case LayerKind::GRU:
      case LayerKind::LSTM: {
        if (a.recurrent().step != b.recurrent().step) {
          throw DataError("zero_pad_plan: recurrent step count changed at layer " + std::to_string(l));
        }
        const std::int64_t gates = a.kind() == LayerKind::GRU ? 3 : 4;
        const auto oi = a.in_width(), ni = b.in_width(), oo = a.out_width(), no = b.out_width();
        pad.tensors.push_back(gated("input_kernel", oi, ni, oo, no, gates));
        pad.tensors.push_back(gated("recurrent_kernel", oo, no, oo, no, gates));
        TensorPad bias{"bias", {gates * oo}, {gates * no}, {}};
        for (std::int64_t g = 0; g < gates; ++g) bias.blocks.push_back({{g * oo}, {g * no}, {oo}});
        pad.tensors.push_back(bias);
        break;
      }
    }
    plan.layers.push_back(std::move(pad));
  }
  return plan;
}

nlohmann::json trace_to_json(const ExpansionTrace& trace) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& entry : trace.layers) {
    nlohmann::json decisions = nlohmann::json::array();
    for (const auto& d : entry.decisions) {
      decisions.push_back({{"node", d.node},
                           {"condition", describe(d.cond, entry.original.kind())},
                           {"from", d.from},
                           {"to", d.to},
                           {"expanded_time_ms", d.expanded_time},
                           {"unexpanded_time_ms", d.unexpanded_time},
                           {"accepted", d.accepted},
                           {"rule", d.rule}});
    }
    nlohmann::json accepted = nlohmann::json::array();
    for (const auto& c : entry.accepted) {
      accepted.push_back({{"condition", describe(c, entry.original.kind())}, {"tau", c.tau}});
    }
    layers.push_back({{"original", config_to_json(entry.original)},
                      {"expanded", config_to_json(entry.expanded)},
                      {"time_before_ms", entry.time_before},
                      {"time_after_ms", entry.time_after},
                      {"accepted", accepted},
                      {"decisions", decisions}});
  }
  return {{"layers", layers}, {"notes", trace.notes}};
}

nlohmann::json pad_plan_to_json(const ZeroPadPlan& plan) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& lp : plan.layers) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : lp.tensors) {
      nlohmann::json blocks = nlohmann::json::array();
      for (const auto& b : t.blocks) {
        blocks.push_back({{"src_offset", b.src_offset}, {"dst_offset", b.dst_offset}, {"extent", b.extent}});
      }
      tensors.push_back({{"name", t.name}, {"old_shape", t.old_shape}, {"new_shape", t.new_shape}, {"copy", blocks}});
    }
    layers.push_back({{"layer", lp.layer}, {"tensors", tensors}});
  }
  return {{"layers", layers}};
}

}  // namespace latree
