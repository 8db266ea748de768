#include "latree/timetree.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "latree/error.hpp"
#include "latree/kernels.hpp"
#include "latree/nnls.hpp"

namespace latree {

namespace {

// Column-major copy of a dataset's explanatory matrix and times.
struct Columns {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<double>> x;
  std::vector<double> y;

  explicit Columns(const Dataset& ds) : rows(ds.size()), cols(explanatory_count(ds.kind())) {
    x.assign(cols, std::vector<double>(rows));
    y.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t a = 0; a < cols; ++a) x[a][r] = ds[r].x[a];
      y[r] = ds[r].y;
    }
  }

  kernels::DesignView view() const {
    kernels::DesignView v;
    v.columns = cols;
    for (std::size_t a = 0; a < cols; ++a) v.cols[a] = x[a].data();
    v.y = y.data();
    v.rows = rows;
    return v;
  }
};

LinearFit finish_fit(const kernels::DesignView& view, const std::vector<double>& coef) {
  LinearFit fit;
  fit.w.assign(coef.begin(), coef.end() - 1);
  fit.b = coef.back();
  fit.n = view.rows;
  const auto res = kernels::residual_stats(view, fit.w, fit.b);
  fit.mse = res.sse / double(view.rows);
  fit.mape = res.sape / double(view.rows);
  return fit;
}

LinearFit fit_columns(const Columns& cols) {
  const auto view = cols.view();
  const auto stats = kernels::weighted_gram(view, {});
  const auto sol = solve_nnls(stats);
  return finish_fit(view, sol.coef);
}

bool is_integral(double v) { return std::floor(v) == v; }

// D5 ordering among (near-)equal impurities.
bool preferred(const Condition& a, const Condition& b) {
  if (a.kind != b.kind) return a.kind == Condition::Kind::Multiple;
  if (a.feature != b.feature) return a.feature < b.feature;
  return a.tau < b.tau;
}

double exact_impurity(const Dataset& ds, const Condition& cond) {
  auto [left, right] = partition(ds, cond);
  if (left.empty() || right.empty()) {
    throw DataError("condition leaves one side of the partition empty");
  }
  const auto fl = nnls_fit(left);
  const auto fr = nnls_fit(right);
  const double n = double(ds.size());
  return double(left.size()) / n * fl.mse + double(right.size()) / n * fr.mse;
}

struct Scored {
  Condition cond;
  double score;
};

// Picks the split: cheap Gram-based scoring of all candidates, then an exact
// residual pass on the near-best shortlist, then D5 tie-breaking.
std::optional<Condition> best_condition(const Dataset& ds, const std::vector<Condition>& cands) {
  if (cands.empty()) return std::nullopt;
  const Columns cols(ds);
  const auto view = cols.view();
  const double n = double(ds.size());

  double mean_y2 = 0;
  for (double y : cols.y) mean_y2 += y * y;
  mean_y2 /= n;

  std::vector<Scored> scored;
  scored.reserve(cands.size());
  std::vector<double> in(cols.rows), out(cols.rows);
  for (const auto& cond : cands) {
    for (std::size_t r = 0; r < cols.rows; ++r) {
      const bool t = cond.holds(ds[r].f);
      in[r] = t ? 1.0 : 0.0;
      out[r] = t ? 0.0 : 1.0;
    }
    const auto gl = kernels::weighted_gram(view, in);
    const auto gr = kernels::weighted_gram(view, out);
    const double sse = gram_sse(gl, solve_nnls(gl).coef) + gram_sse(gr, solve_nnls(gr).coef);
    scored.push_back({cond, sse / n});
  }

  double best = scored.front().score;
  for (const auto& s : scored) best = std::min(best, s.score);
  const double slack = best * 1e-6 + 1e-9 * mean_y2;
  std::vector<Scored> shortlist;
  for (const auto& s : scored) {
    if (s.score <= best + slack) shortlist.push_back(s);
  }
  std::sort(shortlist.begin(), shortlist.end(),
            [](const Scored& a, const Scored& b) { return a.score < b.score; });
  if (shortlist.size() > 64) shortlist.resize(64);

  for (auto& s : shortlist) s.score = exact_impurity(ds, s.cond);
  double exact_best = shortlist.front().score;
  for (const auto& s : shortlist) exact_best = std::min(exact_best, s.score);
  const double tie = 1e-12 * exact_best + 1e-24 * mean_y2;

  std::optional<Condition> chosen;
  for (const auto& s : shortlist) {
    if (s.score > exact_best + tie) continue;
    if (!chosen || preferred(s.cond, *chosen)) chosen = s.cond;
  }
  return chosen;
}

}  // namespace

bool Condition::holds(double value) const {
  if (kind == Kind::Range) return value <= tau;
  return std::fmod(value, tau) == 0.0;
}

std::string_view to_string(Condition::Kind kind) {
  return kind == Condition::Kind::Range ? "range" : "multiple";
}

std::string describe(const Condition& cond, LayerKind layer) {
  std::ostringstream os;
  const auto names = feature_names(layer);
  const std::string name =
      cond.feature < names.size() ? std::string(names[cond.feature]) : "f" + std::to_string(cond.feature);
  if (cond.kind == Condition::Kind::Range) {
    os << name << " <= " << cond.tau;
  } else {
    os << name << " % " << cond.tau << " == 0";
  }
  return os.str();
}

double LinearFit::predict(const ExplanatoryVector& x) const {
  double y = b;
  for (std::size_t i = 0; i < w.size(); ++i) y += w[i] * x[i];
  return y;
}

void FitParams::validate() const {
  if (!(mape_stop > 0)) throw DataError("mape_stop must be positive");
  if (min_leaf < 2) throw DataError("min_leaf must be at least 2");
  for (auto tau : multiple_taus) {
    if (tau < 2) throw DataError("multiple taus must be integers >= 2");
  }
}

void Dataset::add(const StructureConfig& config, double time_ms) {
  add(Sample{config, derive_features(config), derive_explanatory(config), time_ms});
}

void Dataset::add(Sample sample) {
  if (sample.config.kind() != kind_) {
    throw DataError("sample of kind " + std::string(to_string(sample.config.kind())) +
                    " added to " + std::string(to_string(kind_)) + " dataset");
  }
  if (!(sample.y > 0) || !std::isfinite(sample.y)) {
    throw DataError("execution time must be positive and finite");
  }
  samples_.push_back(std::move(sample));
}

TimeModel::TimeModel(LayerKind kind, std::vector<TreeNode> nodes, FitParams params)
    : kind_(kind), nodes_(std::move(nodes)), params_(std::move(params)) {
  if (nodes_.empty()) throw DataError("time model needs at least a root node");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    const bool has_left = node.left >= 0;
    const bool has_right = node.right >= 0;
    if (has_left != has_right) throw DataError("tree node must have zero or two children");
    if (has_left != node.cond.has_value()) {
      throw DataError("internal nodes need a condition and leaves must not have one");
    }
    if (has_left && (std::size_t(node.left) >= nodes_.size() ||
                     std::size_t(node.right) >= nodes_.size() ||
                     std::size_t(node.left) <= i || std::size_t(node.right) <= i)) {
      throw DataError("tree child ids out of range");
    }
    if (node.fit.w.size() != explanatory_count(kind_)) {
      throw DataError("linear fit arity does not match layer kind");
    }
  }
}

std::size_t TimeModel::leaf_count() const {
  return std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); });
}

std::size_t TimeModel::depth() const {
  std::size_t d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

std::size_t TimeModel::route(const FeatureVector& f) const {
  std::size_t id = 0;
  while (!nodes_[id].is_leaf()) {
    const auto& node = nodes_[id];
    id = std::size_t(node.cond->holds(f) ? node.left : node.right);
  }
  return id;
}

double TimeModel::predict(const FeatureVector& f, const ExplanatoryVector& x) const {
  return nodes_[route(f)].fit.predict(x);
}

double TimeModel::predict(const StructureConfig& config) const {
  if (config.kind() != kind_) {
    throw DataError("model for " + std::string(to_string(kind_)) + " cannot predict a " +
                    std::string(to_string(config.kind())) + " layer");
  }
  return predict(derive_features(config), derive_explanatory(config));
}

LinearFit nnls_fit(const Dataset& dataset) {
  if (dataset.empty()) throw DataError("cannot fit an empty dataset");
  return fit_columns(Columns(dataset));
}

std::vector<Condition> enumerate_conditions(const Dataset& dataset, const FitParams& params) {
  std::vector<Condition> out;
  const std::size_t n = dataset.size();
  if (n < 2 * params.min_leaf || n == 0) return out;
  const std::size_t nf = feature_count(dataset.kind());

  std::vector<double> values(n);
  for (std::size_t j = 0; j < nf; ++j) {
    for (std::size_t r = 0; r < n; ++r) values[r] = dataset[r].f[j];
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) continue;

    auto count_le = [&](double tau) {
      return std::size_t(std::upper_bound(sorted.begin(), sorted.end(), tau) - sorted.begin());
    };
    const std::size_t q = params.range_quantiles;
    double last = -1;
    for (std::size_t i = 1; i <= q; ++i) {
      const double tau = sorted[(i * n) / (q + 1)];
      if (tau == last) continue;
      last = tau;
      const std::size_t left = count_le(tau);
      if (left >= params.min_leaf && n - left >= params.min_leaf) {
        out.push_back({j, tau, Condition::Kind::Range});
      }
    }

    if (!std::all_of(values.begin(), values.end(), is_integral)) continue;
    for (auto tau_int : params.multiple_taus) {
      const Condition cond{j, double(tau_int), Condition::Kind::Multiple};
      const std::size_t left =
          std::size_t(std::count_if(values.begin(), values.end(), [&](double v) { return cond.holds(v); }));
      if (left >= params.min_leaf && n - left >= params.min_leaf) out.push_back(cond);
    }
  }
  return out;
}

std::pair<Dataset, Dataset> partition(const Dataset& dataset, const Condition& cond) {
  Dataset left(dataset.kind());
  Dataset right(dataset.kind());
  for (const auto& s : dataset.samples()) {
    (cond.holds(s.f) ? left : right).add(s);
  }
  return {std::move(left), std::move(right)};
}

double impurity(const Dataset& dataset, const Condition& cond) { return exact_impurity(dataset, cond); }

TimeModel fit_tree(const Dataset& dataset, const FitParams& params) {
  params.validate();
  if (dataset.empty()) throw DataError("cannot fit a time model on an empty dataset");

  std::vector<TreeNode> nodes;
  nodes.push_back(TreeNode{std::nullopt, nnls_fit(dataset), -1, -1, 0});

  std::deque<std::pair<std::size_t, Dataset>> queue;
  queue.emplace_back(0, dataset);
  while (!queue.empty()) {
    auto [id, data] = std::move(queue.front());
    queue.pop_front();
    const auto& fit = nodes[id].fit;
    if (fit.mape < params.mape_stop || data.size() < params.min_leaf ||
        nodes[id].depth >= params.max_depth) {
      continue;
    }
    const auto cond = best_condition(data, enumerate_conditions(data, params));
    if (!cond) continue;

    auto [left, right] = partition(data, *cond);
    const std::size_t depth = nodes[id].depth + 1;
    const int left_id = int(nodes.size());
    nodes.push_back(TreeNode{std::nullopt, nnls_fit(left), -1, -1, depth});
    const int right_id = int(nodes.size());
    nodes.push_back(TreeNode{std::nullopt, nnls_fit(right), -1, -1, depth});
    nodes[id].cond = *cond;
    nodes[id].left = left_id;
    nodes[id].right = right_id;
    queue.emplace_back(std::size_t(left_id), std::move(left));
    queue.emplace_back(std::size_t(right_id), std::move(right));
  }
  return TimeModel(dataset.kind(), std::move(nodes), params);
}

double predict(const TimeModel& model, const StructureConfig& config) {
  return model.predict(config);
}

double mape(const TimeModel& model, const Dataset& dataset) {
  if (dataset.empty()) return 0;
  double total = 0;
  for (const auto& s : dataset.samples()) {
    total += std::abs(model.predict(s.f, s.x) - s.y) / s.y;
  }
  return total / double(dataset.size());
}

}  // namespace latree
