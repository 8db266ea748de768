#include "latree/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "latree/error.hpp"

namespace latree {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double diagonal(const Bilinear& p, double c) { return p(c, c); }

}  // namespace

SignificanceReport coefficient_pvalues(const Dataset& dataset) {
  const std::size_t k = explanatory_count(dataset.kind());
  const std::size_t n = dataset.size();
  if (n <= k + 2) {
    throw DataError("p-values need more than " + std::to_string(k + 2) + " samples, got " +
                    std::to_string(n));
  }
  const auto names = explanatory_names(dataset.kind());

  // Columns scaled to unit norm; t-statistics do not depend on the scaling.
  Eigen::MatrixXd x(n, k);
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t a = 0; a < k; ++a) x(r, a) = dataset[r].x[a];
    y[r] = dataset[r].y;
  }
  Eigen::VectorXd norms = x.colwise().norm().transpose();
  for (std::size_t a = 0; a < k; ++a) {
    if (norms[a] > 0) x.col(a) /= norms[a];
  }

  Eigen::MatrixXd full(n, k + 1);
  full.leftCols(k) = x;
  full.col(k).setConstant(1.0 / std::sqrt(double(n)));

  // The intercept always stays, so rank is judged on centred columns: a
  // constant column (a fixed step count, say) centres to nothing.
  const Eigen::MatrixXd centred = x.rowwise() - x.colwise().mean();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(centred);
  qr.setThreshold(1e-10);
  const auto rank = static_cast<std::size_t>(qr.rank());
  std::vector<bool> keep(k + 1, false);
  for (std::size_t i = 0; i < rank; ++i) keep[std::size_t(qr.colsPermutation().indices()[Eigen::Index(i)])] = true;
  keep[k] = true;

  std::vector<std::size_t> kept;
  for (std::size_t a = 0; a <= k; ++a) {
    if (keep[a]) kept.push_back(a);
  }
  Eigen::MatrixXd design(n, kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) design.col(Eigen::Index(i)) = full.col(Eigen::Index(kept[i]));

  const Eigen::MatrixXd gram = design.transpose() * design;
  const Eigen::MatrixXd inv = gram.ldlt().solve(Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
  const Eigen::VectorXd beta = inv * (design.transpose() * y);
  const Eigen::VectorXd resid = y - design * beta;
  const std::size_t df = n - kept.size();
  const double sigma2 = resid.squaredNorm() / double(df);

  SignificanceReport report;
  report.kind = dataset.kind();
  report.samples = n;
  report.degrees_of_freedom = df;
  const boost::math::students_t dist(static_cast<double>(df));
  for (std::size_t a = 0; a < k; ++a) {
    VariableSignificance v;
    v.name = std::string(names[a]);
    const auto it = std::find(kept.begin(), kept.end(), a);
    if (it == kept.end() || norms[a] == 0) {
      v.degenerate = true;
      v.p_value = 1.0;
      report.variables.push_back(v);
      continue;
    }
    const auto i = Eigen::Index(it - kept.begin());
    const double se = std::sqrt(std::max(sigma2 * inv(i, i), 0.0));
    v.coefficient = beta[i] / norms[a];
    if (se == 0) {
      v.t_statistic = beta[i] == 0 ? 0.0 : std::copysign(kInf, beta[i]);
      v.p_value = beta[i] == 0 ? 1.0 : 0.0;
    } else {
      v.t_statistic = beta[i] / se;
      v.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(v.t_statistic))));
    }
    report.variables.push_back(v);
  }
  return report;
}

bool CnnSetting::matches(const StructureConfig& config) const {
  if (config.kind() != LayerKind::CNN) return false;
  const auto& s = config.conv();
  return s.in_height == in_height && s.in_width == in_width && s.kernel_height == kernel_height &&
         s.kernel_width == kernel_width && s.stride == stride && s.padding == padding;
}

StructureConfig CnnSetting::with_channels(std::int64_t in_channel, std::int64_t out_channel) const {
  ConvShape s;
  s.in_height = in_height;
  s.in_width = in_width;
  s.kernel_height = kernel_height;
  s.kernel_width = kernel_width;
  s.stride = stride;
  s.padding = padding;
  s.in_channel = in_channel;
  s.out_channel = out_channel;
  return StructureConfig::conv(s);
}

Bilinear channel_polynomial(const LinearFit& fit, const CnnSetting& setting) {
  if (fit.w.size() != 3) throw DataError("channel polynomial needs a CNN fit [flops, mem, param_size]");
  const auto out = conv_output_dims(setting.in_height, setting.in_width, setting.kernel_height,
                                    setting.kernel_width, setting.stride, setting.padding);
  const double out_area = double(out.height) * double(out.width);
  const double kernel_area = double(setting.kernel_height) * double(setting.kernel_width);
  const double in_area = double(setting.in_height) * double(setting.in_width);
  // flops = 2*out_area*kernel_area*u*v
  // mem   = in_area*u + out_area*v + out_area*kernel_area*u
  // param = kernel_area*u*v + 1
  const double w_flops = fit.w[0];
  const double w_mem = fit.w[1];
  const double w_param = fit.w[2];
  Bilinear p;
  p.uv = w_flops * 2.0 * out_area * kernel_area + w_param * kernel_area;
  p.u = w_mem * (in_area + out_area * kernel_area);
  p.v = w_mem * out_area;
  p.constant = fit.b + w_param;
  return p;
}

Bilinear expansion_benefit(const LinearFit& leaf_true, const LinearFit& leaf_false,
                           const CnnSetting& setting, std::int64_t delta, ChannelAxis axis) {
  const Bilinear t = channel_polynomial(leaf_true, setting);
  const Bilinear f = channel_polynomial(leaf_false, setting);
  const double d = double(delta);
  Bilinear out;
  out.uv = t.uv - f.uv;
  if (axis == ChannelAxis::In) {
    // t.uv*(u+d)*v + t.u*(u+d) + t.v*v + t.c
    out.u = t.u - f.u;
    out.v = t.uv * d + t.v - f.v;
    out.constant = t.u * d + t.constant - f.constant;
  } else {
    out.u = t.uv * d + t.u - f.u;
    out.v = t.v - f.v;
    out.constant = t.v * d + t.constant - f.constant;
  }
  return out;
}

bool ExpansionRegion::contains(double in_c, double out_c) const {
  if (empty()) return false;
  return in_c >= 1 && out_c >= 1 && in_c < bound && out_c < bound;
}

ExpansionRegion safe_region(const Bilinear& benefit) {
  ExpansionRegion region;
  region.contour = benefit;
  if (diagonal(benefit, 1.0) >= 0) {
    region.bound = 0;
    return region;
  }
  const double a = benefit.uv;
  const double s = benefit.u + benefit.v;
  const double d = benefit.constant;

  // First crossing to >= 0 beyond c = 1, from the closed form.
  double estimate = kInf;
  if (a == 0) {
    if (s > 0) estimate = -d / s;
  } else {
    const double disc = s * s - 4 * a * d;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      const double r1 = std::min((-s - sq) / (2 * a), (-s + sq) / (2 * a));
      const double r2 = std::max((-s - sq) / (2 * a), (-s + sq) / (2 * a));
      if (a > 0) {
        estimate = r2;
      } else if (r1 > 1) {
        estimate = r1;
      }
    }
  }
  if (!std::isfinite(estimate)) {
    region.bound = kInf;
    return region;
  }

  // Polish by bisection on a bracket [lo, hi] with p(lo) < 0 <= p(hi).
  double lo = 1.0;
  double hi = std::max(estimate, 1.0) * 1.001 + 1e-3;
  while (diagonal(benefit, hi) < 0) hi = 2 * hi;
  if (estimate > lo && estimate < hi && diagonal(benefit, estimate) < 0) lo = estimate;
  for (int it = 0; it < 200 && hi - lo > 1e-6 * std::max(1.0, lo) * 1e-3; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (diagonal(benefit, mid) < 0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  region.bound = lo;
  return region;
}

bool verify_region(ExpansionRegion& region, std::size_t grid) {
  if (region.empty()) {
    region.verified = false;
    return false;
  }
  const double edge = region.unbounded() ? 65536.0 : region.bound;
  bool ok = true;
  for (std::size_t i = 0; i < grid && ok; ++i) {
    const double u = 1.0 + (edge - 1.0) * double(i) / double(grid);
    for (std::size_t j = 0; j < grid; ++j) {
      const double v = 1.0 + (edge - 1.0) * double(j) / double(grid);
      if (!(region.contour(u, v) < 0)) {
        ok = false;
        break;
      }
    }
  }
  region.verified = ok;
  if (!ok) region.bound = 0;
  return ok;
}

std::vector<ExpansionRegion> model_regions(const TimeModel& model, const CnnSetting& setting) {
  std::vector<ExpansionRegion> out;
  if (model.kind() != LayerKind::CNN) return out;
  const auto in_idx = *feature_index(LayerKind::CNN, "in_channel");
  const auto out_idx = *feature_index(LayerKind::CNN, "out_channel");
  for (const auto& node : model.nodes()) {
    if (!node.cond || node.cond->kind != Condition::Kind::Multiple) continue;
    if (node.cond->feature != in_idx && node.cond->feature != out_idx) continue;
    const auto axis = node.cond->feature == in_idx ? ChannelAxis::In : ChannelAxis::Out;
    const auto tau = static_cast<std::int64_t>(node.cond->tau);
    auto region = safe_region(expansion_benefit(model.node(std::size_t(node.left)).fit,
                                                model.node(std::size_t(node.right)).fit, setting,
                                                tau - 1, axis));
    region.condition = *node.cond;
    region.setting = setting;
    verify_region(region);
    out.push_back(region);
  }
  return out;
}

SimplifiedModel::SimplifiedModel(TimeModel base, std::vector<ExpansionRegion> regions)
    : base_(std::move(base)), regions_(std::move(regions)) {}

bool SimplifiedModel::inside(const StructureConfig& config) const {
  if (config.kind() != LayerKind::CNN) return false;
  bool any = false;
  const double u = double(config.conv().in_channel);
  const double v = double(config.conv().out_channel);
  for (const auto& r : regions_) {
    if (r.empty() || !r.setting.matches(config)) continue;
    any = true;
    if (!r.contains(u, v)) return false;
  }
  return any;
}

StructureConfig SimplifiedModel::snap(const StructureConfig& config) const {
  if (!inside(config)) return config;
  ConvShape s = config.conv();
  const auto in_idx = *feature_index(LayerKind::CNN, "in_channel");
  std::map<std::size_t, std::int64_t> tau_for;
  for (const auto& r : regions_) {
    if (r.empty() || !r.setting.matches(config)) continue;
    auto& t = tau_for[r.condition.feature];
    t = std::max(t, static_cast<std::int64_t>(r.condition.tau));
  }
  for (const auto& [feature, tau] : tau_for) {
    auto& value = feature == in_idx ? s.in_channel : s.out_channel;
    value = tau * ((value + tau - 1) / tau);
  }
  return StructureConfig::conv(s);
}

double SimplifiedModel::predict(const StructureConfig& config) const { return base_.predict(snap(config)); }

SimplifiedModel simplify_model(const TimeModel& model, const std::vector<ExpansionRegion>& regions) {
  std::vector<ExpansionRegion> kept;
  const auto in_idx = *feature_index(LayerKind::CNN, "in_channel");
  const auto out_idx = *feature_index(LayerKind::CNN, "out_channel");
  for (const auto& r : regions) {
    if (r.empty()) continue;
    if (!r.verified) throw DataError("simplify_model: region '" + describe(r.condition, LayerKind::CNN) + "' is not verified");
    if (r.condition.kind != Condition::Kind::Multiple ||
        (r.condition.feature != in_idx && r.condition.feature != out_idx)) {
      throw DataError("simplify_model: regions must come from channel multiple conditions");
    }
    for (const auto& other : kept) {
      if (other.condition.feature != r.condition.feature || !(other.setting == r.setting)) continue;
      const auto a = static_cast<std::int64_t>(other.condition.tau);
      const auto b = static_cast<std::int64_t>(r.condition.tau);
      if (a % b != 0 && b % a != 0) {
        throw DataError("simplify_model: contradictory multiples " + std::to_string(a) + " and " +
                        std::to_string(b) + " on the same feature");
      }
    }
    kept.push_back(r);
  }
  if (model.kind() != LayerKind::CNN && !kept.empty()) {
    throw DataError("simplify_model: expansion regions only apply to CNN models");
  }
  return SimplifiedModel(model, std::move(kept));
}

nlohmann::json significance_to_json(const SignificanceReport& report) {
  nlohmann::json vars = nlohmann::json::array();
  for (const auto& v : report.variables) {
    vars.push_back({{"name", v.name},
                    {"coefficient", v.coefficient},
                    {"t_statistic", std::isfinite(v.t_statistic) ? nlohmann::json(v.t_statistic) : nlohmann::json(nullptr)},
                    {"p_value", v.p_value},
                    {"degenerate", v.degenerate}});
  }
  return {{"layer_kind", std::string(to_string(report.kind))},
          {"samples", report.samples},
          {"degrees_of_freedom", report.degrees_of_freedom},
          {"variables", vars}};
}

nlohmann::json region_to_json(const ExpansionRegion& region, LayerKind kind) {
  nlohmann::json bound;
  if (region.unbounded()) {
    bound = "inf";
  } else {
    bound = region.bound;
  }
  return {{"condition", describe(region.condition, kind)},
          {"setting",
           {{"in_height", region.setting.in_height},
            {"in_width", region.setting.in_width},
            {"kernel_height", region.setting.kernel_height},
            {"kernel_width", region.setting.kernel_width},
            {"stride", region.setting.stride},
            {"padding", std::string(to_string(region.setting.padding))}}},
          {"bound", bound},
          {"contour", {{"uv", region.contour.uv}, {"u", region.contour.u}, {"v", region.contour.v}, {"constant", region.contour.constant}}},
          {"verified", region.verified},
          {"empty", region.empty()}};
}

}  // namespace latree
