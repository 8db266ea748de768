#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "latree/error.hpp"
#include "latree/steering.hpp"

using namespace latree;

namespace {

const std::size_t kKernelH = 2;
const std::size_t kInC = 4;
const std::size_t kOutC = 5;

LinearFit fit_of(std::vector<double> w, double b) {
  LinearFit f;
  f.w = std::move(w);
  f.b = b;
  return f;
}

LinearFit leaf_true() { return fit_of({3.41e-8, 4.03e-6, 7.11e-25}, 8.11); }
LinearFit leaf_false() { return fit_of({3.11e-8, 8.03e-6, 1.52e-34}, 12.82); }

TimeModel split_model(Condition cond, LinearFit t, LinearFit f, LayerKind kind = LayerKind::CNN) {
  TreeNode root;
  root.fit = f;
  root.cond = cond;
  root.left = 1;
  root.right = 2;
  TreeNode l, r;
  l.fit = std::move(t);
  r.fit = std::move(f);
  l.depth = r.depth = 1;
  return TimeModel(kind, {root, l, r}, FitParams{});
}

TimeModel example_model() {
  return split_model(Condition{kInC, 4, Condition::Kind::Multiple}, leaf_true(), leaf_false());
}

TimeModel single_leaf(LayerKind kind, std::vector<double> w, double b) {
  TreeNode n;
  n.fit = fit_of(std::move(w), b);
  return TimeModel(kind, {n}, FitParams{});
}

StructureConfig conv(std::int64_t size, std::int64_t in_c, std::int64_t out_c, std::int64_t stride = 1) {
  ConvShape s;
  s.in_height = s.in_width = size;
  s.kernel_height = s.kernel_width = 3;
  s.in_channel = in_c;
  s.out_channel = out_c;
  s.stride = stride;
  return StructureConfig::conv(s);
}

// Random CNN trees with width multiples and geometry ranges.
TimeModel random_tree(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::int64_t taus[] = {2, 4, 8, 16};
  std::vector<TreeNode> nodes(1);
  std::vector<std::size_t> open = {0};
  while (!open.empty()) {
    const std::size_t id = open.front();
    open.erase(open.begin());
    nodes[id].fit = fit_of({1e-8 * (1 + 9 * u(rng)), 1e-6 * (1 + 9 * u(rng)), 0.0}, 1 + 20 * u(rng));
    if (nodes[id].depth >= 3 || u(rng) < 0.25) continue;
    Condition c;
    const double pick = u(rng);
    if (pick < 0.4) {
      c = {kInC, double(taus[rng() % 4]), Condition::Kind::Multiple};
    } else if (pick < 0.8) {
      c = {kOutC, double(taus[rng() % 4]), Condition::Kind::Multiple};
    } else if (pick < 0.9) {
      c = {kInC, double(8 + rng() % 120), Condition::Kind::Range};
    } else {
      c = {0, double(24 + rng() % 100), Condition::Kind::Range};
    }
    nodes[id].cond = c;
    nodes[id].left = int(nodes.size());
    nodes[id].right = int(nodes.size() + 1);
    for (int k = 0; k < 2; ++k) {
      TreeNode child;
      child.depth = nodes[id].depth + 1;
      open.push_back(nodes.size());
      nodes.push_back(child);
    }
  }
  return TimeModel(LayerKind::CNN, nodes, FitParams{});
}

NetworkSpec fc_net() {
  return make_network({StructureConfig::fc(256, 128), StructureConfig::fc(128, 64), StructureConfig::fc(64, 10)});
}

ModelMap fc_models() {
  ModelMap m;
  m.emplace(LayerKind::FC, single_leaf(LayerKind::FC, {2e-6, 1e-5, 0}, 0.1));
  return m;
}

}  // namespace

TEST_CASE("worked expansion") {
  const auto model = example_model();
  ConvShape s;
  s.in_height = s.in_width = 24;
  s.kernel_height = s.kernel_width = 3;
  s.in_channel = 43;
  s.out_channel = 64;
  const auto [out, entry] = expand_layer(model, StructureConfig::conv(s));
  CHECK(out.conv().in_channel == 44);
  CHECK(out.conv().out_channel == 64);
  CHECK(entry.time_before == doctest::Approx(15.99).epsilon(0.005));
  CHECK(entry.time_after == doctest::Approx(10.28).epsilon(0.005));
  REQUIRE(entry.accepted.size() == 1);
  CHECK(entry.accepted[0] == Condition{kInC, 4, Condition::Kind::Multiple});
  REQUIRE_FALSE(entry.decisions.empty());
  CHECK(entry.decisions[0].rule == "expanded<=unexpanded");
  CHECK(entry.decisions[0].from == 43);
  CHECK(entry.decisions[0].to == 44);
}

TEST_CASE("already aligned layers are untouched") {
  const auto c = conv(24, 44, 64);
  const auto [out, entry] = expand_layer(example_model(), c);
  CHECK(out == c);
  CHECK(entry.decisions.empty());
  CHECK(entry.time_after == entry.time_before);
}

TEST_CASE("expansion rejected when the true side is slower") {
  const auto model = split_model(Condition{kInC, 4, Condition::Kind::Multiple},
                                 fit_of({3.41e-8, 4.03e-6, 0}, 1000.0), leaf_false());
  const auto c = conv(24, 43, 64);
  const auto [out, entry] = expand_layer(model, c);
  CHECK(out == c);
  REQUIRE(entry.decisions.size() == 1);
  CHECK_FALSE(entry.decisions[0].accepted);
  CHECK(entry.decisions[0].expanded_time > entry.decisions[0].unexpanded_time);
}

TEST_CASE("expansion guards") {
  SUBCASE("not a width") {
    const auto model = split_model(Condition{kKernelH, 2, Condition::Kind::Multiple}, leaf_true(), leaf_false());
    const auto [out, entry] = expand_layer(model, conv(24, 43, 64));
    CHECK(out == conv(24, 43, 64));
    REQUIRE(entry.decisions.size() == 1);
    CHECK(entry.decisions[0].rule == "not-a-width");
  }
  SUBCASE("twice the original at most") {
    const auto model = split_model(Condition{kInC, 8, Condition::Kind::Multiple}, leaf_true(), leaf_false());
    const auto [out, entry] = expand_layer(model, conv(24, 3, 64));
    CHECK(out == conv(24, 3, 64));
    CHECK(entry.decisions.at(0).rule == "cap-2x");
  }
  SUBCASE("stays inside the ranges above it") {
    TreeNode root;
    root.fit = leaf_false();
    root.cond = Condition{kInC, 40, Condition::Kind::Range};
    root.left = 1;
    root.right = 2;
    TreeNode inner;
    inner.fit = leaf_false();
    inner.cond = Condition{kInC, 32, Condition::Kind::Multiple};
    inner.left = 3;
    inner.right = 4;
    inner.depth = 1;
    TreeNode slow, a, b;
    slow.fit = leaf_false();
    slow.depth = 1;
    a.fit = leaf_true();
    b.fit = leaf_false();
    a.depth = b.depth = 2;
    const TimeModel model(LayerKind::CNN, {root, inner, slow, a, b}, FitParams{});
    const auto [out, entry] = expand_layer(model, conv(24, 39, 64));
    CHECK(out == conv(24, 39, 64));
    CHECK(entry.decisions.at(0).rule == "violates-path");
  }
  SUBCASE("wrong kind") {
    CHECK_THROWS_AS(expand_layer(example_model(), StructureConfig::fc(4, 4)), DataError);
  }
}

TEST_CASE("chained roundings reach a fixed point") {
  // 3 -> 4 in the first pass; 8 is more than twice 3 but not twice 4.
  TreeNode root;
  root.fit = leaf_false();
  root.cond = Condition{kInC, 4, Condition::Kind::Multiple};
  root.left = 1;
  root.right = 2;
  TreeNode inner;
  inner.fit = leaf_true();
  inner.cond = Condition{kInC, 8, Condition::Kind::Multiple};
  inner.left = 3;
  inner.right = 4;
  inner.depth = 1;
  TreeNode slow, fast, mid;
  slow.fit = leaf_false();
  slow.depth = 1;
  fast.fit = fit_of({3.41e-8, 4.03e-6, 0}, 1.0);
  mid.fit = leaf_true();
  fast.depth = mid.depth = 2;
  const TimeModel model(LayerKind::CNN, {root, inner, slow, fast, mid}, FitParams{});
  const auto c = conv(24, 3, 64);
  const auto [e, entry] = expand_layer(model, c);
  CHECK(e.conv().in_channel == 8);
  CHECK(entry.accepted.size() == 2);
  CHECK(expand_layer(model, e).first == e);
  CHECK(model.predict(e) < model.predict(c));
}

TEST_CASE("random trees: non-increasing, idempotent, growing") {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::int64_t> ch(1, 256);
  std::uniform_int_distribution<std::int64_t> hw(8, 128);
  int changed = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto model = random_tree(rng);
    const auto c = conv(hw(rng), ch(rng), ch(rng), 1 + std::int64_t(rng() % 2));
    const auto [e, entry] = expand_layer(model, c);
    REQUIRE(model.predict(e) <= model.predict(c));
    REQUIRE(expand_layer(model, e).first == e);
    REQUIRE(e.conv().in_channel >= c.conv().in_channel);
    REQUIRE(e.conv().out_channel >= c.conv().out_channel);
    REQUIRE(e.conv().in_height == c.conv().in_height);
    REQUIRE(e.conv().kernel_height == c.conv().kernel_height);
    REQUIRE(e.conv().stride == c.conv().stride);
    if (!(e == c)) ++changed;
  }
  CHECK(changed > 20);
}

TEST_CASE("network time") {
  ModelMap models;
  models.emplace(LayerKind::CNN, example_model());
  models.emplace(LayerKind::FC, single_leaf(LayerKind::FC, {1e-6, 1e-5, 0}, 0.2));
  CHECK(network_time(models, NetworkSpec{}) == 0.0);
  const auto c = conv(24, 43, 64);
  CHECK(network_time(models, make_network({c})) == models.at(LayerKind::CNN).predict(c));

  const std::vector<StructureConfig> layers = {conv(24, 3, 16), StructureConfig::fc(100, 10), conv(12, 43, 64)};
  std::vector<StructureConfig> reversed(layers.rbegin(), layers.rend());
  CHECK(network_time(models, make_network(layers)) == doctest::Approx(network_time(models, make_network(reversed))));

  CHECK_THROWS_AS(network_time(models, make_network({StructureConfig::gru(4, 4, 8)})), DataError);
}

TEST_CASE("network expansion") {
  ModelMap models;
  models.emplace(LayerKind::CNN, example_model());

  SUBCASE("empty") {
    const auto [out, trace] = expand_network(models, NetworkSpec{});
    CHECK(out.empty());
    CHECK(trace.layers.empty());
  }
  SUBCASE("single layer matches expand_layer") {
    const auto c = conv(24, 43, 64);
    const auto [out, trace] = expand_network(models, make_network({c}));
    CHECK(out.layers.at(0) == expand_layer(models.at(LayerKind::CNN), c).first);
  }
  SUBCASE("conflict across a link") {
    const auto model = split_model(Condition{kOutC, 4, Condition::Kind::Multiple}, leaf_true(), leaf_false());
    ModelMap m;
    m.emplace(LayerKind::CNN, model);
    const auto net = make_network({conv(24, 3, 43), conv(24, 43, 10)});
    REQUIRE(net.links.size() == 1);
    const auto [out, trace] = expand_network(m, net);
    out.validate();
    CHECK_FALSE(trace.notes.empty());

    // Independent resolution: expand each layer, try both link widths.
    const auto e0 = expand_layer(model, net.layers[0]).first;
    const auto e1 = expand_layer(model, net.layers[1]).first;
    REQUIRE(e0.out_width() != e1.in_width());
    auto a1 = e1;
    a1.set_in_width(e0.out_width());
    auto b0 = e0;
    b0.set_out_width(e1.in_width());
    const double ta = model.predict(e0) + model.predict(a1);
    const double tb = model.predict(b0) + model.predict(e1);
    const double want = std::min({ta, tb, network_time(m, net)});
    CHECK(network_time(m, out) == doctest::Approx(want).epsilon(1e-12));
    CHECK(network_time(m, out) <= network_time(m, net));
  }
}

TEST_CASE("zero pad plans") {
  SUBCASE("identical networks") {
    const auto net = fc_net();
    CHECK(zero_pad_plan(net, net).empty());
  }
  SUBCASE("dense") {
    const auto plan = zero_pad_plan(make_network({StructureConfig::fc(3, 5)}), make_network({StructureConfig::fc(4, 5)}));
    REQUIRE(plan.layers.size() == 1);
    const auto& k = plan.layers[0].tensors.at(0);
    CHECK(k.name == "kernel");
    CHECK(k.old_shape == std::vector<std::int64_t>{3, 5});
    CHECK(k.new_shape == std::vector<std::int64_t>{4, 5});
    REQUIRE(k.blocks.size() == 1);
    CHECK(k.blocks[0].extent == std::vector<std::int64_t>{3, 5});
    CHECK(k.blocks[0].dst_offset == std::vector<std::int64_t>{0, 0});
  }
  SUBCASE("conv channels") {
    const auto plan = zero_pad_plan(make_network({conv(24, 43, 64)}), make_network({conv(24, 44, 64)}));
    REQUIRE(plan.layers.size() == 1);
    const auto& k = plan.layers[0].tensors.at(0);
    CHECK(k.old_shape == std::vector<std::int64_t>{3, 3, 43, 64});
    CHECK(k.new_shape == std::vector<std::int64_t>{3, 3, 44, 64});
    const auto j = pad_plan_to_json(plan);
    CHECK(j.is_object());
  }
  SUBCASE("recurrent gates move") {
    const auto plan = zero_pad_plan(make_network({StructureConfig::gru(4, 6, 8)}),
                                    make_network({StructureConfig::gru(4, 8, 8)}));
    const auto& k = plan.layers.at(0).tensors.at(0);
    CHECK(k.new_shape == std::vector<std::int64_t>{4, 24});
    REQUIRE(k.blocks.size() == 3);
    CHECK(k.blocks[2].src_offset == std::vector<std::int64_t>{0, 12});
    CHECK(k.blocks[2].dst_offset == std::vector<std::int64_t>{0, 16});
  }
  SUBCASE("shrinking is refused") {
    CHECK_THROWS_AS(zero_pad_plan(make_network({conv(24, 44, 64)}), make_network({conv(24, 43, 64)})), DataError);
    CHECK_THROWS_AS(zero_pad_plan(make_network({conv(24, 4, 4)}), make_network({conv(32, 4, 4)})), DataError);
    CHECK_THROWS_AS(zero_pad_plan(fc_net(), make_network({StructureConfig::fc(256, 128)})), DataError);
  }
}

TEST_CASE("objective") {
  const auto models = fc_models();
  const auto net = fc_net();
  const double t = network_time(models, net);
  const FunctionLoss loss([](const NetworkSpec&) { return 0.25; });
  CHECK(time_aware_objective(loss, models, net, 0.0) == 0.25);
  CHECK(time_aware_objective(ZeroLoss{}, models, net, 2.0) == doctest::Approx(2 * t));
  const double a = time_aware_objective(loss, models, net, 1.0);
  const double b = time_aware_objective(loss, models, net, 3.0);
  CHECK(b - a == doctest::Approx(2 * t));
  CHECK_THROWS_AS(time_aware_objective(loss, models, net, -1.0), DataError);
}

TEST_CASE("capacity loss") {
  const auto net = fc_net();
  const CapacityLoss cap(net, 2.0);
  CHECK(cap.loss(net) == 0.0);
  const auto half = apply_widths(net, {64, 32, 10});
  CHECK(cap.loss(half) == doctest::Approx(4.0));
  CHECK(cap.loss(apply_widths(net, {512, 64, 10})) == 0.0);
  CHECK_THROWS_AS(cap.loss(make_network({StructureConfig::fc(1, 1)})), DataError);
}

TEST_CASE("command loss") {
  const auto net = fc_net();
  CHECK(CommandLoss("echo 2.5").loss(net) == 2.5);
}

TEST_CASE("command loss failures") {
  const auto net = fc_net();
  CHECK_THROWS_AS(CommandLoss("false").loss(net), NumericError);
  CHECK_THROWS_AS(CommandLoss("echo abc").loss(net), NumericError);
  CHECK_THROWS_AS(CommandLoss("echo -1").loss(net), NumericError);
  CHECK_THROWS_AS(CommandLoss("test -s").loss(net), NumericError);  // silent
}

TEST_CASE("apply widths follows links") {
  const auto out = apply_widths(fc_net(), {100, 50, 10});
  out.validate();
  CHECK(out.layers[1].in_width() == 100);
  CHECK(out.layers[2].in_width() == 50);
}

TEST_CASE("greedy and brute force") {
  const auto models = fc_models();
  const auto net = fc_net();
  const CapacityLoss cap(net, 1.0);
  const WidthGrid grid = {{32, 64, 128}, {16, 32, 64}, {10}};

  const auto g = greedy_compress(cap, models, net, 1.0, grid, 100);
  const auto b = brute_force_compress(cap, models, net, 1.0, grid);
  CHECK(b.objective_after <= g.objective_after + 1e-12);
  CHECK(g.objective_after <= g.objective_before);
  CHECK(b.network.layers[2].out_width() == 10);
  g.network.validate();
  b.network.validate();

  SUBCASE("lambda zero keeps capacity") {
    const auto z = brute_force_compress(cap, models, net, 0.0, grid);
    CHECK(z.network.layers[0].out_width() == 128);
    CHECK(z.network.layers[1].out_width() == 64);
    CHECK(z.objective_after == 0.0);
  }
  SUBCASE("larger lambda is never slower") {
    double prev_time = std::numeric_limits<double>::infinity();
    double prev_loss = -1;
    for (double lambda : {0.0, 0.1, 1.0, 10.0}) {
      const auto r = brute_force_compress(cap, models, net, lambda, grid);
      CHECK(r.time_after <= prev_time + 1e-12);
      const double l = cap.loss(r.network);
      CHECK(l >= prev_loss - 1e-12);
      prev_time = r.time_after;
      prev_loss = l;
    }
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(greedy_compress(cap, models, net, 1.0, {{32}, {16}}, 100), DataError);
    CHECK_THROWS_AS(greedy_compress(cap, models, net, 1.0, {{32}, {}, {10}}, 100), DataError);
    CHECK_THROWS_AS(greedy_compress(cap, models, net, -1.0, grid, 100), DataError);
    CHECK_THROWS_AS(greedy_compress(cap, models, net, 1.0, grid, 1), DataError);
    const WidthGrid huge(3, std::vector<std::int64_t>(101, 8));
    CHECK_THROWS_AS(brute_force_compress(cap, models, net, 1.0, huge), DataError);
  }
}

TEST_CASE("greedy respects its evaluation budget") {
  const auto models = fc_models();
  const auto net = fc_net();
  std::size_t calls = 0;
  const FunctionLoss counting([&](const NetworkSpec& n) {
    ++calls;
    return CapacityLoss(fc_net(), 1.0).loss(n);
  });
  WidthGrid grid = {{}, {}, {10}};
  for (std::int64_t w = 8; w <= 256; w += 8) grid[0].push_back(w);
  for (std::int64_t w = 8; w <= 128; w += 8) grid[1].push_back(w);
  for (std::size_t budget : {2u, 5u, 10u, 37u}) {
    calls = 0;
    const auto r = greedy_compress(counting, models, net, 1.0, grid, budget);
    CHECK(calls <= budget);
    CHECK(r.evaluations <= budget);
  }
}

TEST_CASE("greedy falls back to the input when nothing helps") {
  const auto models = fc_models();
  const auto net = fc_net();
  // Every move is worse than the input, so the input comes back unchanged.
  const FunctionLoss loss([&](const NetworkSpec& n) { return n == net ? 0.0 : 1e9; });
  const auto r = greedy_compress(loss, models, net, 0.0, {{32, 128}, {16, 64}, {10}}, 50);
  CHECK(r.network == net);
  CHECK(r.objective_after == r.objective_before);
}

TEST_CASE("recurrent floor") {
  const auto gru = single_leaf(LayerKind::GRU, {1.2e-7, 2e-5, 0, 0.666}, 0.3);
  const auto net = make_network({StructureConfig::gru(64, 64, 20)});
  CHECK(rnn_time_floor(gru, net) == doctest::Approx(13.32).epsilon(1e-12));
  CHECK(rnn_time_floor(gru, fc_net()) == 0.0);
  CHECK(rnn_time_floor(gru, make_network({StructureConfig::lstm(8, 8, 20)})) == 0.0);
  CHECK_THROWS_AS(rnn_time_floor(example_model(), net), DataError);

  // Two layers add up.
  const auto two = make_network({StructureConfig::gru(64, 64, 20), StructureConfig::gru(64, 32, 10)});
  CHECK(rnn_time_floor(gru, two) == doctest::Approx(13.32 + 6.66));
}

TEST_CASE("recurrent floor from a refitted model") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::int64_t> d(1, 512);
  std::normal_distribution<double> eps(0.0, 0.01);
  const std::int64_t steps[] = {8, 10, 15, 20};
  Dataset ds(LayerKind::GRU);
  for (int i = 0; i < 400; ++i) {
    const auto c = StructureConfig::gru(d(rng), d(rng), steps[rng() % 4]);
    const auto x = derive_explanatory(c);
    ds.add(c, (1e-7 * x.flops + 1e-5 * x.mem + 0.5 * *x.step + 0.2) * (1 + eps(rng)));
  }
  const auto model = fit_tree(ds);
  const auto net = make_network({StructureConfig::gru(128, 128, 10)});
  CHECK(rnn_time_floor(model, net) == doctest::Approx(5.0).epsilon(0.05));
}

TEST_CASE("trace json") {
  ModelMap models;
  models.emplace(LayerKind::CNN, example_model());
  const auto [out, trace] = expand_network(models, make_network({conv(24, 43, 64)}));
  const auto j = trace_to_json(trace);
  REQUIRE(j.at("layers").size() == 1);
  CHECK(j.at("layers")[0].at("decisions")[0].at("condition") == "in_channel % 4 == 0");
  CHECK(j.at("layers")[0].at("decisions")[0].at("accepted") == true);
}
