#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "latree/analysis.hpp"
#include "latree/cli.hpp"
#include "latree/error.hpp"
#include "latree/harness.hpp"
#include "latree/model_io.hpp"
#include "latree/network.hpp"
#include "latree/steering.hpp"

namespace latree::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string ms(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ms", v);
  return buf;
}

std::string pct(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * fraction);
  return buf;
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

json parse_json_arg(const std::string& text_or_path, std::string_view what) {
  const auto first = text_or_path.find_first_not_of(" \t\n");
  const bool inline_json = first != std::string::npos && text_or_path[first] == '{';
  try {
    return json::parse(inline_json ? text_or_path : read_text_file(text_or_path));
  } catch (const json::parse_error& e) {
    throw DataError(std::string(what) + ": parse error: " + e.what());
  }
}

std::string model_file_name(LayerKind kind) { return std::string(to_string(kind)) + ".model.json"; }

ModelMap load_models(const fs::path& path) {
  ModelMap models;
  if (fs::is_directory(path)) {
    for (LayerKind kind : kAllLayerKinds) {
      const fs::path file = path / model_file_name(kind);
      if (fs::exists(file)) models.emplace(kind, load_model_file(file));
    }
    if (models.empty()) throw DataError("no *.model.json files in '" + path.string() + "'");
  } else {
    TimeModel m = load_model_file(path);
    const auto kind = m.kind();
    models.emplace(kind, std::move(m));
  }
  return models;
}

// Seeded 75/25 split within each kind.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + std::uint64_t(ds.kind()) + 1);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_test = ds.size() / 4;
  Dataset train(ds.kind()), test(ds.kind());
  for (std::size_t k = 0; k < idx.size(); ++k) (k < n_test ? test : train).add(ds[idx[k]]);
  return {std::move(train), std::move(test)};
}

WidthGrid make_grid(const NetworkSpec& net, const std::vector<double>& fractions) {
  WidthGrid grid(net.size());
  for (std::size_t l = 0; l < net.size(); ++l) {
    const auto w = net.layers[l].out_width();
    if (l + 1 == net.size()) {
      grid[l] = {w};  // the output width is part of the task
      continue;
    }
    for (double f : fractions) {
      if (!(f > 0) || f > 1) throw DataError("width fractions must lie in (0, 1]");
      grid[l].push_back(std::max<std::int64_t>(1, std::int64_t(std::ceil(double(w) * f - 1e-9))));
    }
    std::sort(grid[l].begin(), grid[l].end());
    grid[l].erase(std::unique(grid[l].begin(), grid[l].end()), grid[l].end());
  }
  return grid;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw DataError("bad width fraction '" + item + "'");
    }
  }
  if (out.empty()) throw DataError("width grid is empty");
  return out;
}

CnnSetting parse_setting(const std::string& text) {
  CnnSetting s;
  if (text.empty()) return s;
  const json j = parse_json_arg(text, "setting");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "in_height") s.in_height = value.get<std::int64_t>();
      else if (key == "in_width") s.in_width = value.get<std::int64_t>();
      else if (key == "kernel_height") s.kernel_height = value.get<std::int64_t>();
      else if (key == "kernel_width") s.kernel_width = value.get<std::int64_t>();
      else if (key == "stride") s.stride = value.get<std::int64_t>();
      else if (key == "padding") s.padding = parse_padding(value.get<std::string>());
      else throw DataError("setting: unknown field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("setting: ") + e.what());
  }
  s.with_channels(1, 1).validate();
  return s;
}

void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structure-aware latency models for neural network layers", "latree"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string out_path, dataset_path, model_path, network_path, oracle_path, plan_path, evaluator_cmd;
  std::string config_arg, setting_arg, scope = "default", kind_name, search = "greedy", width_grid, trace_path,
                                       reference_path;
  std::uint64_t seed = 1;
  std::size_t networks = 120, budget = 4000;
  std::optional<double> noise, lambda, capacity_scale;
  FitParams fit_params;

  auto* plan = app.add_subcommand("plan", "Generate a random profiling plan (JSONL)");
  plan->add_option("--out", out_path, "Plan file (default: stdout)");
  plan->add_option("--networks", networks, "Number of networks (or components with --kind)");
  plan->add_option("--seed", seed, "Random seed");
  plan->add_option("--scope", scope, "Configuration scope");
  plan->add_option("--kind", kind_name, "Only draw components of this kind");

  auto* synth = app.add_subcommand("synth", "Time a plan with a synthetic oracle");
  synth->add_option("--plan", plan_path, "Plan file")->required();
  synth->add_option("--oracle", oracle_path, "Oracle file (default: built-in)");
  synth->add_option("--noise", noise, "Override the oracle's relative noise");
  synth->add_option("--seed", seed, "Override the oracle's seed");
  synth->add_option("--out", out_path, "Profile file (default: stdout)");

  auto* fit = app.add_subcommand("fit", "Fit one time model per layer kind");
  fit->add_option("--dataset", dataset_path, "Profile file")->required();
  fit->add_option("--out", out_path, "Output directory for <KIND>.model.json")->required();
  fit->add_option("--seed", seed, "Seed of the 75/25 split");
  fit->add_option("--min-leaf", fit_params.min_leaf, "Minimum samples per leaf");
  fit->add_option("--mape-stop", fit_params.mape_stop, "Stop splitting below this MAPE (fraction)");
  fit->add_option("--max-depth", fit_params.max_depth, "Maximum tree depth");

  auto* predict = app.add_subcommand("predict", "Predict the time of one layer");
  predict->add_option("--model", model_path, "Model file or directory")->required();
  predict->add_option("--config", config_arg, "Layer config as JSON text or file")->required();

  auto* analyze = app.add_subcommand("analyze", "Variable significance and expansion regions");
  analyze->add_option("--model", model_path, "Model file or directory");
  analyze->add_option("--dataset", dataset_path, "Profile file");
  analyze->add_option("--setting", setting_arg, "Fixed CNN geometry as JSON");
  analyze->add_option("--out", out_path, "Report file (default: stdout)");

  auto* expand = app.add_subcommand("expand", "Expand layer widths to faster configurations");
  expand->add_option("--model", model_path, "Model file or directory")->required();
  expand->add_option("--network", network_path, "Network file")->required();
  expand->add_option("--out", out_path, "Expanded network file");
  expand->add_option("--trace", trace_path, "Expansion trace file");

  auto* compress = app.add_subcommand("compress", "Time-aware width search");
  compress->add_option("--model", model_path, "Model file or directory")->required();
  compress->add_option("--network", network_path, "Network file")->required();
  compress->add_option("--config", config_arg, "Compression settings file");
  compress->add_option("--lambda", lambda, "Weight of the time term");
  compress->add_option("--evaluator-cmd", evaluator_cmd, "Loss command; receives a network file path");
  compress->add_option("--capacity-scale", capacity_scale, "Scale of the built-in capacity loss");
  compress->add_option("--width-grid", width_grid, "Comma-separated width fractions");
  compress->add_option("--budget", budget, "Maximum evaluator calls (greedy)");
  compress->add_option("--search", search, "greedy or brute")->check(CLI::IsMember({"greedy", "brute"}));
  compress->add_option("--out", out_path, "Compressed network file");
  compress->add_option("--trace", trace_path, "Expansion trace file");

  auto* capacity = app.add_subcommand("capacity-loss", "Print the capacity loss of a network");
  capacity->add_option("--reference", reference_path, "Reference network file")->required();
  capacity->add_option("--capacity-scale", capacity_scale, "Loss scale");
  capacity->add_option("network", network_path, "Candidate network file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (plan->parsed()) {
      std::vector<PlanEntry> entries = kind_name.empty()
                                           ? generate_plan(scope, networks, seed)
                                           : generate_kind_plan(scope, parse_layer_kind(kind_name), networks, seed);
      write_or_print(out_path, write_plan(entries), out);
      if (!out_path.empty()) out << "plan: " << entries.size() << " components -> " << out_path << "\n";
    } else if (synth->parsed()) {
      SyntheticOracle oracle = oracle_path.empty() ? default_oracle() : load_oracle_file(oracle_path);
      if (noise) oracle.noise = *noise;
      if (synth->count("--seed") > 0) oracle.seed = seed;
      if (!(oracle.noise >= 0)) throw DataError("noise must be non-negative");
      std::vector<ProfileSample> samples;
      for (const auto& e : read_plan(read_text_file(plan_path))) samples.push_back(synth_time(oracle, e.config));
      write_or_print(out_path, write_profile(samples), out);
      if (!out_path.empty()) out << "synth: " << samples.size() << " samples -> " << out_path << "\n";
    } else if (fit->parsed()) {
      fit_params.validate();
      const auto datasets = ingest_profile(dataset_path);
      fs::create_directories(out_path);
      for (const auto& [kind, ds] : datasets) {
        auto [train, test] = split_dataset(ds, seed);
        if (train.empty()) {
          err << "warning: " << to_string(kind) << ": too few samples to fit\n";
          continue;
        }
        const TimeModel model = fit_tree(train, fit_params);
        save_model_file(model, fs::path(out_path) / model_file_name(kind));
        out << to_string(kind) << ": nodes=" << model.nodes().size() << " leaves=" << model.leaf_count()
            << " depth=" << model.depth() << " train=" << train.size() << " test=" << test.size()
            << " test_mape=" << (test.empty() ? std::string("n/a") : pct(mape(model, test))) << "\n";
        if (model.leaf_count() == 1 && train.size() < 2 * fit_params.min_leaf) {
          err << "warning: " << to_string(kind) << ": single-leaf model (" << train.size()
              << " training samples, fewer than twice min-leaf " << fit_params.min_leaf << ")\n";
        }
      }
    } else if (predict->parsed()) {
      const StructureConfig config = config_from_json(parse_json_arg(config_arg, "config"));
      config.validate();
      const ModelMap models = load_models(model_path);
      out << ms(model_for(models, config.kind()).predict(config)) << "\n";
    } else if (analyze->parsed()) {
      if (model_path.empty() && dataset_path.empty()) throw CLI::RequiredError("--model or --dataset");
      json report = json::object();
      if (!dataset_path.empty()) {
        json sig = json::array();
        for (const auto& [kind, ds] : ingest_profile(dataset_path)) {
          sig.push_back(significance_to_json(coefficient_pvalues(ds)));
        }
        report["significance"] = sig;
      }
      if (!model_path.empty()) {
        const ModelMap models = load_models(model_path);
        const CnnSetting setting = parse_setting(setting_arg);
        json regions = json::array();
        if (auto it = models.find(LayerKind::CNN); it != models.end()) {
          for (const auto& r : model_regions(it->second, setting)) regions.push_back(region_to_json(r, LayerKind::CNN));
        }
        report["regions"] = regions;
      }
      write_or_print(out_path, report.dump(2) + "\n", out);
    } else if (expand->parsed()) {
      const ModelMap models = load_models(model_path);
      const NetworkSpec net = load_network_file(network_path);
      const auto [expanded, trace] = expand_network(models, net);
      for (std::size_t l = 0; l < net.size(); ++l) {
        out << "layer " << l << " " << to_string(net.layers[l].kind()) << ": " << net.layers[l].in_width() << "x"
            << net.layers[l].out_width() << " -> " << expanded.layers[l].in_width() << "x"
            << expanded.layers[l].out_width() << "  " << ms(model_for(models, net.layers[l].kind()).predict(net.layers[l]))
            << " -> " << ms(model_for(models, expanded.layers[l].kind()).predict(expanded.layers[l])) << "\n";
      }
      out << "network: " << ms(network_time(models, net)) << " -> " << ms(network_time(models, expanded)) << "\n";
      if (!out_path.empty()) {
        NetworkSpec named = expanded;
        named.names = net.names;
        save_network_file(named, out_path);
      }
      if (!trace_path.empty()) write_text_file(trace_path, trace_to_json(trace).dump(2) + "\n");
    } else if (compress->parsed()) {
      const ModelMap models = load_models(model_path);
      const NetworkSpec net = load_network_file(network_path);
      json settings = json::object();
      if (!config_arg.empty()) settings = parse_json_arg(config_arg, "compress config");
      double lam = 0;
      std::vector<double> fractions = {0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0};
      double scale = 1.0;
      try {
        for (const auto& [key, value] : settings.items()) {
          if (key == "lambda") lam = value.get<double>();
          else if (key == "capacity_scale") scale = value.get<double>();
          else if (key == "budget") budget = value.get<std::size_t>();
          else if (key == "width_fractions") fractions = value.get<std::vector<double>>();
          else if (key == "search") search = value.get<std::string>();
          else throw DataError("compress config: unknown field '" + key + "'");
        }
      } catch (const json::exception& e) {
        throw DataError(std::string("compress config: ") + e.what());
      }
      if (lambda) lam = *lambda;
      if (capacity_scale) scale = *capacity_scale;
      if (compress->count("--budget") > 0) budget = compress->get_option("--budget")->as<std::size_t>();
      if (compress->count("--search") > 0) search = compress->get_option("--search")->as<std::string>();
      if (!width_grid.empty()) fractions = parse_fractions(width_grid);
      if (!(lam >= 0) || !std::isfinite(lam)) throw DataError("lambda must be a non-negative number");
      if (!(scale >= 0)) throw DataError("capacity scale must be non-negative");
      if (search != "greedy" && search != "brute") throw DataError("search must be greedy or brute");

      std::unique_ptr<LossEvaluator> evaluator;
      if (!evaluator_cmd.empty()) {
        evaluator = std::make_unique<CommandLoss>(evaluator_cmd);
      } else {
        evaluator = std::make_unique<CapacityLoss>(net, scale);
      }
      const WidthGrid grid = make_grid(net, fractions);
      const CompressResult result = search == "brute"
                                        ? brute_force_compress(*evaluator, models, net, lam, grid)
                                        : greedy_compress(*evaluator, models, net, lam, grid, budget);
      for (std::size_t l = 0; l < net.size(); ++l) {
        out << "layer " << l << " " << to_string(net.layers[l].kind()) << ": out " << net.layers[l].out_width()
            << " -> " << result.network.layers[l].out_width() << "\n";
      }
      out << "time_before=" << ms(result.time_before) << " time_after=" << ms(result.time_after)
          << " ratio=" << pct(result.time_before > 0 ? result.time_after / result.time_before : 1.0) << "\n";
      out << "objective_before=" << fixed3(result.objective_before) << " objective_after="
          << fixed3(result.objective_after) << " lambda=" << lam << " evaluations=" << result.evaluations
          << (result.fell_back_to_input ? " fallback=input" : "") << "\n";
      if (!out_path.empty()) {
        NetworkSpec named = result.network;
        named.names = net.names;
        save_network_file(named, out_path);
      }
      if (!trace_path.empty()) write_text_file(trace_path, trace_to_json(result.trace).dump(2) + "\n");
    } else if (capacity->parsed()) {
      const CapacityLoss loss(load_network_file(reference_path), capacity_scale.value_or(1.0));
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", loss.loss(load_network_file(network_path)));
      out << buf << "\n";
    }
  } catch (const CLI::Error& e) {
    err << "error: usage: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "error: numeric: " << e.what() << "\n";
    return kNumericError;
  } catch (const DataError& e) {
    err << "error: data: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: data: " << e.what() << "\n";
    return kDataError;
  }
  return kOk;
}

}  // namespace latree::cli
