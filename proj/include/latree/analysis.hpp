#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "latree/timetree.hpp"

namespace latree {

struct VariableSignificance {
  std::string name;
  double coefficient = 0;
  double t_statistic = 0;
  double p_value = 1;
  bool degenerate = false;  // linearly dependent column, reported as p = 1
};

struct SignificanceReport {
  LayerKind kind = LayerKind::FC;
  std::size_t samples = 0;
  std::size_t degrees_of_freedom = 0;
  std::vector<VariableSignificance> variables;
};

/// Two-sided t-tests of an unconstrained least-squares fit with intercept.
/// Requires more than (#variables + 2) samples.
SignificanceReport coefficient_pvalues(const Dataset& dataset);

/// Fixed CNN geometry; everything except the two channel counts.
struct CnnSetting {
  std::int64_t in_height = 24;
  std::int64_t in_width = 24;
  std::int64_t kernel_height = 3;
  std::int64_t kernel_width = 3;
  std::int64_t stride = 1;
  Padding padding = Padding::Same;

  bool matches(const StructureConfig& config) const;
  StructureConfig with_channels(std::int64_t in_channel, std::int64_t out_channel) const;
  bool operator==(const CnnSetting&) const = default;
};

/// a_uv*u*v + a_u*u + a_v*v + a_0 over u = in_channel, v = out_channel.
struct Bilinear {
  double uv = 0;
  double u = 0;
  double v = 0;
  double constant = 0;

  double operator()(double in_c, double out_c) const { return uv * in_c * out_c + u * in_c + v * out_c + constant; }
};

// A CNN leaf law written as a function of the two channel counts.
Bilinear channel_polynomial(const LinearFit& fit, const CnnSetting& setting);

enum class ChannelAxis { In, Out };

/// y_T(channels expanded by delta along `axis`) - y_F(u, v). Negative means
/// rounding up to the multiple is faster. Throws DataError for non-CNN fits.
Bilinear expansion_benefit(const LinearFit& leaf_true, const LinearFit& leaf_false,
                           const CnnSetting& setting, std::int64_t delta,
                           ChannelAxis axis = ChannelAxis::In);

struct ExpansionRegion {
  Condition condition;
  CnnSetting setting;
  // Square edge: benefit(c, c) < 0 for 1 <= c < bound. 0 = empty, +inf = everywhere.
  double bound = 0;
  Bilinear contour;
  bool verified = false;

  bool empty() const { return !(bound > 1.0); }
  bool unbounded() const { return bound == std::numeric_limits<double>::infinity(); }
  bool contains(double in_c, double out_c) const;
};

/// Intersection of the zero contour with the diagonal in_c = out_c.
ExpansionRegion safe_region(const Bilinear& benefit);

/// Checks benefit < 0 on a grid x grid lattice inside the square; a failing
/// region is demoted to empty. Unbounded regions are checked up to 65536.
bool verify_region(ExpansionRegion& region, std::size_t grid = 32);

/// Regions for every Multiple(in/out_channel) node of a CNN model under one
/// setting, verified.
std::vector<ExpansionRegion> model_regions(const TimeModel& model, const CnnSetting& setting);

/// Model that snaps configurations inside the joint verified region up to the
/// regions' multiples before routing; identical to the base model elsewhere.
class SimplifiedModel {
 public:
  SimplifiedModel(TimeModel base, std::vector<ExpansionRegion> regions);

  const TimeModel& base() const { return base_; }
  const std::vector<ExpansionRegion>& regions() const { return regions_; }
  bool inside(const StructureConfig& config) const;
  StructureConfig snap(const StructureConfig& config) const;
  double predict(const StructureConfig& config) const;

 private:
  TimeModel base_;
  std::vector<ExpansionRegion> regions_;
};

// Throws DataError on unverified regions or contradictory multiples.
SimplifiedModel simplify_model(const TimeModel& model, const std::vector<ExpansionRegion>& regions);

nlohmann::json significance_to_json(const SignificanceReport& report);
nlohmann::json region_to_json(const ExpansionRegion& region, LayerKind kind);

}  // namespace latree
