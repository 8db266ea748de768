#include <doctest.h>

#include <cmath>
#include <random>

#include "latree/error.hpp"
#include "latree/kernels.hpp"
#include "latree/timetree.hpp"

using namespace latree;

namespace {

StructureConfig conv(std::int64_t ic, std::int64_t oc, std::int64_t hw = 24, std::int64_t k = 3) {
  ConvShape s;
  s.in_height = hw;
  s.in_width = hw;
  s.kernel_height = k;
  s.kernel_width = k;
  s.in_channel = ic;
  s.out_channel = oc;
  return StructureConfig::conv(s);
}

const std::size_t kInC = 4;
const std::size_t kOutC = 5;

double law(const ExplanatoryVector& x, std::vector<double> w, double b) {
  double y = b;
  for (std::size_t i = 0; i < w.size(); ++i) y += w[i] * x[i];
  return y;
}

// in % 4 == 0 -> (out % 4 == 0 ? A : B), else C
double planted_time(const StructureConfig& c) {
  const auto x = derive_explanatory(c);
  if (c.conv().in_channel % 4 == 0) {
    if (c.conv().out_channel % 4 == 0) return law(x, {2e-8, 1e-6, 0}, 3.0);
    return law(x, {3e-8, 3e-6, 0}, 6.0);
  }
  return law(x, {5e-8, 2e-6, 0}, 9.0);
}

Dataset planted_dataset(std::size_t n, std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> ch(1, 256), hw(24, 96), k(2, 5);
  std::normal_distribution<double> eps(0.0, noise);
  Dataset ds(LayerKind::CNN);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = conv(ch(rng), ch(rng), hw(rng), k(rng));
    ds.add(c, planted_time(c) * (1.0 + (noise > 0 ? eps(rng) : 0.0)));
  }
  return ds;
}

TreeNode leaf(std::vector<double> w, double b) {
  TreeNode n;
  n.fit.w = std::move(w);
  n.fit.b = b;
  return n;
}

}  // namespace

TEST_CASE("condition predicates") {
  const Condition r{0, 10, Condition::Kind::Range};
  CHECK(r.holds(10.0));
  CHECK(r.holds(-3.0));
  CHECK_FALSE(r.holds(10.5));
  const Condition m{0, 4, Condition::Kind::Multiple};
  CHECK(m.holds(8.0));
  CHECK(m.holds(0.0));
  CHECK_FALSE(m.holds(9.0));
  CHECK(describe(m, LayerKind::CNN) == "in_height % 4 == 0");
  CHECK(describe(Condition{kInC, 4, Condition::Kind::Multiple}, LayerKind::CNN) == "in_channel % 4 == 0");
}

TEST_CASE("dataset checks") {
  Dataset ds(LayerKind::FC);
  CHECK_THROWS_AS(ds.add(StructureConfig::fc(3, 3), 0.0), DataError);
  CHECK_THROWS_AS(ds.add(StructureConfig::fc(3, 3), -1.0), DataError);
  CHECK_THROWS_AS(ds.add(StructureConfig::gru(3, 3, 8), 1.0), DataError);
  ds.add(StructureConfig::fc(3, 5), 2.0);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].f == derive_features(StructureConfig::fc(3, 5)));
  CHECK(ds[0].x == derive_explanatory(StructureConfig::fc(3, 5)));
}

TEST_CASE("fit params validation") {
  FitParams p;
  CHECK_NOTHROW(p.validate());
  p.mape_stop = 0;
  CHECK_THROWS_AS(p.validate(), DataError);
  p = FitParams{};
  p.min_leaf = 1;
  CHECK_THROWS_AS(p.validate(), DataError);
  p = FitParams{};
  p.multiple_taus = {1};
  CHECK_THROWS_AS(p.validate(), DataError);
}

TEST_CASE("nnls fit on a dataset") {
  Dataset ds(LayerKind::FC);
  CHECK_THROWS_AS(nnls_fit(ds), DataError);
  for (int i = 1; i <= 30; ++i) {
    const auto c = StructureConfig::fc(i, 2 * i + 1);
    ds.add(c, 3.0 * derive_explanatory(c).flops + 10.0);
  }
  const auto fit = nnls_fit(ds);
  CHECK(fit.n == 30);
  CHECK(fit.w[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(fit.b == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(fit.mape < 1e-9);
  for (double w : fit.w) CHECK(w >= 0);
  CHECK(fit.b >= 0);
}

TEST_CASE("exactly linear data gives a single leaf") {
  Dataset ds(LayerKind::FC);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::int64_t> d(1, 4096);
  for (int i = 0; i < 200; ++i) {
    const auto c = StructureConfig::fc(d(rng), d(rng));
    ds.add(c, 3.0 * derive_explanatory(c).flops + 10.0);
  }
  const auto model = fit_tree(ds);
  CHECK(model.leaf_count() == 1);
  CHECK(model.depth() == 0);
}

TEST_CASE("fewer than min_leaf samples gives a single leaf") {
  const auto ds = planted_dataset(14, 1, 0.0);
  const auto model = fit_tree(ds);
  CHECK(model.nodes().size() == 1);
  CHECK(model.root().fit.n == 14);
}

TEST_CASE("condition enumeration") {
  FitParams params;
  SUBCASE("too small for any split") {
    const auto ds = planted_dataset(20, 2, 0.0);
    CHECK(enumerate_conditions(ds, params).empty());
  }
  SUBCASE("constant feature yields nothing") {
    const auto ds = planted_dataset(200, 3, 0.0);
    for (const auto& c : enumerate_conditions(ds, params)) {
      CHECK(c.feature != 7);  // stride is always 1 here
      CHECK(c.feature != 6);  // padding is always same
    }
  }
  SUBCASE("multiple of four is offered") {
    Dataset ds(LayerKind::FC);
    for (int i = 1; i <= 100; ++i) ds.add(StructureConfig::fc(i, 10), 1.0 + i);
    const auto conds = enumerate_conditions(ds, params);
    bool found = false;
    for (const auto& c : conds) {
      if (c.feature == 0 && c.kind == Condition::Kind::Multiple && c.tau == 4) found = true;
      auto [l, r] = partition(ds, c);
      CHECK(l.size() >= params.min_leaf);
      CHECK(r.size() >= params.min_leaf);
      if (c.kind == Condition::Kind::Multiple) CHECK(c.tau >= 2);
    }
    CHECK(found);
    // out_dim is constant.
    for (const auto& c : conds) CHECK(c.feature != 1);
  }
}

TEST_CASE("partition") {
  Dataset ds(LayerKind::FC);
  for (int v : {3, 4, 8, 9}) ds.add(StructureConfig::fc(v, 2), double(v));
  auto [l, r] = partition(ds, Condition{0, 4, Condition::Kind::Multiple});
  REQUIRE(l.size() == 2);
  REQUIRE(r.size() == 2);
  CHECK(l[0].f[0] == 4);
  CHECK(l[1].f[0] == 8);
  CHECK(r[0].f[0] == 3);
  CHECK(r[1].f[0] == 9);
  auto [all, none] = partition(ds, Condition{0, 9, Condition::Kind::Range});
  CHECK(all.size() == 4);
  CHECK(none.empty());
  CHECK_THROWS_AS(impurity(ds, Condition{0, 9, Condition::Kind::Range}), DataError);
}

TEST_CASE("impurity") {
  SUBCASE("two exact laws keyed on a multiple") {
    Dataset ds(LayerKind::FC);
    for (int i = 1; i <= 80; ++i) {
      const auto c = StructureConfig::fc(i, 7);
      const auto x = derive_explanatory(c);
      ds.add(c, i % 4 == 0 ? 2.0 * x.flops + 1.0 : 5.0 * x.flops + 3.0);
    }
    CHECK(impurity(ds, Condition{0, 4, Condition::Kind::Multiple}) <= 1e-12);
  }
  SUBCASE("weighted by side size") {
    Dataset ds(LayerKind::FC);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(1.0, 5.0);
    for (int i = 1; i <= 40; ++i) ds.add(StructureConfig::fc(i, 3), u(rng));
    const Condition c{0, 10, Condition::Kind::Range};
    auto [l, r] = partition(ds, c);
    const double expect = double(l.size()) / 40.0 * nnls_fit(l).mse + double(r.size()) / 40.0 * nnls_fit(r).mse;
    CHECK(impurity(ds, c) == doctest::Approx(expect).epsilon(1e-9));
  }
  SUBCASE("never above the parent") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto ds = planted_dataset(120, 100 + seed, 0.05);
      const double parent = nnls_fit(ds).mse;
      for (const auto& c : enumerate_conditions(ds, FitParams{})) {
        REQUIRE(impurity(ds, c) <= parent + 1e-9 * std::max(1.0, parent));
      }
    }
  }
}

TEST_CASE("planted tree is recovered from noise-free data") {
  const auto ds = planted_dataset(800, 42, 0.0);
  const auto model = fit_tree(ds);
  REQUIRE(model.root().cond.has_value());
  CHECK(*model.root().cond == Condition{kInC, 4, Condition::Kind::Multiple});
  const auto& left = model.node(std::size_t(model.root().left));
  REQUIRE(left.cond.has_value());
  CHECK(*left.cond == Condition{kOutC, 4, Condition::Kind::Multiple});
  const auto& right = model.node(std::size_t(model.root().right));
  CHECK(right.is_leaf());
  CHECK(mape(model, ds) <= 1e-6);
}

TEST_CASE("tree structure invariants") {
  const auto ds = planted_dataset(600, 9, 0.03);
  FitParams params;
  params.max_depth = 4;
  const auto model = fit_tree(ds, params);
  CHECK(model.root().fit.n == ds.size());
  for (std::size_t i = 0; i < model.nodes().size(); ++i) {
    const auto& n = model.node(i);
    for (double w : n.fit.w) CHECK(w >= 0);
    CHECK(n.fit.b >= 0);
    CHECK(n.depth <= params.max_depth);
    if (!n.is_leaf()) {
      const auto& l = model.node(std::size_t(n.left));
      const auto& r = model.node(std::size_t(n.right));
      CHECK(l.fit.n + r.fit.n == n.fit.n);
      CHECK(l.depth == n.depth + 1);
      CHECK(l.fit.n >= params.min_leaf);
      CHECK(r.fit.n >= params.min_leaf);
    } else if (n.depth < params.max_depth && n.fit.n >= params.min_leaf && n.fit.mape >= params.mape_stop) {
      // Only a lack of candidates may stop this leaf.
      Dataset sub(LayerKind::CNN);
      for (const auto& smp : ds.samples()) {
        if (model.route(smp.f) == i) sub.add(smp);
      }
      REQUIRE(sub.size() == n.fit.n);
      CHECK(enumerate_conditions(sub, params).empty());
    }
  }
}

TEST_CASE("fitting is deterministic and isa independent") {
  const auto ds = planted_dataset(500, 77, 0.02);
  const auto a = fit_tree(ds);
  const auto b = fit_tree(ds);
  REQUIRE(a.nodes().size() == b.nodes().size());
  for (std::size_t i = 0; i < a.nodes().size(); ++i) {
    CHECK(a.node(i).cond == b.node(i).cond);
    CHECK(a.node(i).fit.w == b.node(i).fit.w);
    CHECK(a.node(i).fit.b == b.node(i).fit.b);
  }
  const auto isa = kernels::active_isa();
  kernels::set_active_isa(kernels::Isa::Scalar);
  const auto s = fit_tree(ds);
  kernels::set_active_isa(isa);
  REQUIRE(s.nodes().size() == a.nodes().size());
  for (std::size_t i = 0; i < a.nodes().size(); ++i) CHECK(s.node(i).cond == a.node(i).cond);
}

TEST_CASE("prediction") {
  SUBCASE("single leaf") {
    const TimeModel m(LayerKind::FC, {leaf({2, 0, 0}, 1)}, FitParams{});
    const auto c = StructureConfig::fc(2, 1);
    REQUIRE(derive_explanatory(c).flops == 5);
    CHECK(m.predict(c) == 11.0);
    CHECK(predict(m, c) == 11.0);
    CHECK_THROWS_AS(m.predict(StructureConfig::gru(2, 1, 8)), DataError);
  }
  SUBCASE("routing") {
    TreeNode root = leaf({0, 0, 0}, 1);
    root.cond = Condition{kInC, 4, Condition::Kind::Multiple};
    root.left = 1;
    root.right = 2;
    TreeNode l = leaf({0, 0, 0}, 2);
    TreeNode r = leaf({0, 0, 0}, 3);
    l.depth = r.depth = 1;
    const TimeModel m(LayerKind::CNN, {root, l, r}, FitParams{});
    CHECK(m.route(derive_features(conv(8, 5))) == 1);
    CHECK(m.route(derive_features(conv(9, 5))) == 2);
    CHECK(m.predict(conv(8, 5)) == 2.0);
    CHECK(m.predict(conv(9, 5)) == 3.0);
  }
  SUBCASE("malformed trees are rejected") {
    TreeNode root = leaf({0, 0, 0}, 1);
    root.left = 1;
    CHECK_THROWS_AS(TimeModel(LayerKind::CNN, {root, leaf({0, 0, 0}, 1)}, FitParams{}), DataError);
    CHECK_THROWS_AS(TimeModel(LayerKind::CNN, {leaf({0, 0, 0, 0}, 1)}, FitParams{}), DataError);
    CHECK_THROWS_AS(TimeModel(LayerKind::CNN, {}, FitParams{}), DataError);
  }
  SUBCASE("positive whenever the law is") {
    const auto ds = planted_dataset(300, 5, 0.01);
    const auto m = fit_tree(ds);
    for (const auto& s : ds.samples()) CHECK(m.predict(s.config) > 0);
  }
}
