// Command-line front end: dataset generation, landscape exploration,
// disconnectivity graphs, conserved-weight analysis and ablation.

#include "lossmap/basinhop.hpp"
#include "lossmap/data.hpp"
#include "lossmap/interpret.hpp"
#include "lossmap/landscape.hpp"
#include "lossmap/saddle.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed for " + path);
}

struct DatasetSpec {
  // generator
  int samples = 10000;
  int tiles = 4;
  double noise = 0.0;
  // csv
  std::string csv_path;
  std::string label_col = "label";
  bool standardize_flag = false;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--samples", samples, "checkerboard sample count");
    cmd->add_option("--tiles", tiles, "checkerboard tiles per axis");
    cmd->add_option("--noise", noise, "checkerboard label noise in [0,1)");
    cmd->add_option("--csv", csv_path, "load dataset from CSV instead of generating");
    cmd->add_option("--label-col", label_col, "CSV label column (name, or index if numeric)");
    cmd->add_flag("--standardize", standardize_flag, "z-score the features");
  }

  lossmap::Dataset build(std::uint64_t root_seed) const {
    lossmap::Dataset ds;
    if (!csv_path.empty()) {
      lossmap::LabelColumn col;
      try {
        std::size_t pos = 0;
        int idx = std::stoi(label_col, &pos);
        col = pos == label_col.size() ? lossmap::LabelColumn{idx}
                                      : lossmap::LabelColumn{label_col};
      } catch (const std::exception&) {
        col = label_col;
      }
      ds = lossmap::load_csv(csv_path, col, true);
    } else {
      ds = lossmap::gen_checkerboard(samples, tiles, noise,
                                     lossmap::derive_seed(root_seed, "dataset"));
    }
    if (standardize_flag) ds = lossmap::standardize(ds);
    return ds;
  }
};

struct ArchSpec {
  std::vector<int> hidden = {5};

  void add_options(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "hidden layer widths");
  }

  lossmap::Architecture build(const lossmap::Dataset& ds) const {
    lossmap::Architecture arch;
    arch.input_dim = static_cast<int>(ds.dim());
    arch.hidden = hidden;
    arch.output_dim = std::max(2, ds.n_classes());
    arch.validate();
    return arch;
  }
};

std::pair<int, int> parse_group_label(const std::string& label) {
  const auto us = label.find('_');
  if (us == std::string::npos)
    throw std::invalid_argument("group label must look like LEVEL_NODE, e.g. 25_7");
  return {std::stoi(label.substr(0, us)), std::stoi(label.substr(us + 1))};
}

void print_summary(const json& j, bool as_json) {
  if (as_json) {
    std::cout << j.dump() << "\n";
    return;
  }
  for (const auto& [k, v] : j.items()) std::cout << k << ": " << v.dump() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"loss-landscape mapping and conserved-weight analysis"};
  app.require_subcommand(1);
  app.set_config("--config", "", "config file (TOML/INI); flags override config keys");
  app.allow_config_extras(CLI::config_extras_mode::ignore_all);

  std::uint64_t seed = 0;
  std::string out_dir = ".";
  int workers = 1;
  bool as_json = false;
  app.add_option("--seed", seed, "root seed; all randomness derives from it")
      ->capture_default_str();
  app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  app.add_option("--workers", workers, "basin-hopping walker count");
  app.add_flag("--json", as_json, "machine-parsable JSON summary on stdout");

  // dataset checkerboard
  auto* cmd_dataset = app.add_subcommand("dataset", "generate or convert datasets");
  auto* cmd_cb = cmd_dataset->add_subcommand("checkerboard", "synthetic checkerboard CSV");
  int cb_samples = 10000, cb_tiles = 4;
  double cb_noise = 0.0;
  std::string cb_out = "checkerboard.csv";
  cmd_cb->add_option("--samples", cb_samples)->capture_default_str();
  cmd_cb->add_option("--tiles", cb_tiles)->capture_default_str();
  cmd_cb->add_option("--noise", cb_noise)->capture_default_str();
  cmd_cb->add_option("--out", cb_out)->capture_default_str();
  cmd_dataset->require_subcommand(1);

  // explore
  auto* cmd_explore = app.add_subcommand("explore", "basin hopping + landscape connection");
  DatasetSpec ex_data;
  ArchSpec ex_arch;
  ex_data.add_options(cmd_explore);
  ex_arch.add_options(cmd_explore);
  lossmap::BasinHopConfig hop_cfg;
  // pipeline default differs from the library primitive: hops need to clear
  // basin walls on this landscape
  hop_cfg.perturbation_scale = 2.0;
  hop_cfg.min_cfg.max_iters = 4000;
  lossmap::BandConfig band_cfg;
  std::string ex_db = "landscape.json";
  int connect_budget_factor = 10;
  bool resume = false;
  cmd_explore->add_option("--steps", hop_cfg.n_steps, "basin-hopping steps")
      ->capture_default_str();
  cmd_explore->add_option("--perturbation", hop_cfg.perturbation_scale)
      ->capture_default_str();
  cmd_explore->add_option("--temperature", hop_cfg.metropolis_temperature)
      ->capture_default_str();
  hop_cfg.min_cfg.l2_penalty = 1e-4;  // keeps minima finite; see README
  cmd_explore->add_option("--grad-tol", hop_cfg.min_cfg.grad_tol)->capture_default_str();
  cmd_explore->add_option("--l2", hop_cfg.min_cfg.l2_penalty, "ridge penalty on the loss")
      ->capture_default_str();
  cmd_explore->add_option("--band-images", band_cfg.n_images)->capture_default_str();
  cmd_explore->add_option("--band-iters", band_cfg.max_band_iters)->capture_default_str();
  cmd_explore->add_option("--connect-budget-factor", connect_budget_factor,
                          "TS attempts = factor * minima count")
      ->capture_default_str();
  cmd_explore->add_option("--db", ex_db, "database output file")->capture_default_str();
  cmd_explore->add_flag("--resume", resume, "skip work if the run already finished");

  // graph
  auto* cmd_graph = app.add_subcommand("graph", "build and emit the disconnectivity graph");
  std::string g_db = "landscape.json", g_out = "graph";
  int g_levels = 25;
  std::vector<std::string> g_formats = {"dot"};
  cmd_graph->add_option("--db", g_db)->capture_default_str();
  cmd_graph->add_option("--levels", g_levels)->capture_default_str();
  cmd_graph->add_option("--format", g_formats, "dot, svg and/or json")
      ->capture_default_str();
  cmd_graph->add_option("--out", g_out, "output file prefix")->capture_default_str();

  // analyze
  auto* cmd_analyze = app.add_subcommand("analyze", "conserved weights for a graph group");
  std::string a_db = "landscape.json", a_group, a_out = "conserved.json";
  int a_levels = 25;
  double a_n = 0.01;
  cmd_analyze->add_option("--db", a_db)->capture_default_str();
  cmd_analyze->add_option("--group", a_group, "group label LEVEL_NODE")->required();
  cmd_analyze->add_option("--levels", a_levels)->capture_default_str();
  cmd_analyze->add_option("--n", a_n, "sigma threshold")->capture_default_str();
  cmd_analyze->add_option("--out", a_out)->capture_default_str();

  // ablate
  auto* cmd_ablate = app.add_subcommand("ablate", "permutation-ablation AUC experiment");
  DatasetSpec ab_data;
  ab_data.add_options(cmd_ablate);
  std::string ab_db = "landscape.json", ab_group, ab_out = "ablation.json";
  int ab_levels = 25, ab_trials = 20;
  double ab_n = 0.01, ab_l2 = 1e-4;
  cmd_ablate->add_option("--db", ab_db)->capture_default_str();
  cmd_ablate->add_option("--l2", ab_l2, "ridge penalty the database was built with")
      ->capture_default_str();
  cmd_ablate->add_option("--group", ab_group, "group label LEVEL_NODE; default = global-minimum group");
  cmd_ablate->add_option("--levels", ab_levels)->capture_default_str();
  cmd_ablate->add_option("--n", ab_n, "sigma threshold")->capture_default_str();
  cmd_ablate->add_option("--trials", ab_trials)->capture_default_str();
  cmd_ablate->add_option("--out", ab_out)->capture_default_str();

  // global flags may appear after the subcommand name
  for (auto* sc : {cmd_dataset, cmd_cb, cmd_explore, cmd_graph, cmd_analyze, cmd_ablate})
    sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage/config error
  }

  fs::create_directories(out_dir);
  auto out_path = [&](const std::string& name) {
    return (fs::path(out_dir) / name).string();
  };

  if (cmd_cb->parsed()) {
    auto ds = lossmap::gen_checkerboard(cb_samples, cb_tiles, cb_noise,
                                        lossmap::derive_seed(seed, "dataset"));
    lossmap::save_csv(ds, out_path(cb_out));
    print_summary({{"command", "dataset"},
                   {"rows", ds.size()},
                   {"out", out_path(cb_out)}},
                  as_json);
    return 0;
  }

  if (cmd_explore->parsed()) {
    auto ds = ex_data.build(seed);
    auto arch = ex_arch.build(ds);
    const auto db_path = out_path(ex_db);
    const auto done_path = db_path + ".done";
    const auto fp =
        lossmap::landscape_fingerprint(arch, ds, hop_cfg.min_cfg.l2_penalty);

    lossmap::LandscapeDatabase db(arch, fp);
    if (resume && fs::exists(db_path)) {
      db = lossmap::load_database(db_path, fp);
      if (fs::exists(done_path)) {
        const auto best = db.minimum(db.global_minimum_id());
        print_summary({{"command", "explore"},
                       {"resumed", true},
                       {"minima", db.minima().size()},
                       {"transition_states", db.transition_states().size()},
                       {"best_loss", best.loss_value},
                       {"best_auc", lossmap::model_auc(arch, best.params, ds)},
                       {"db", db_path}},
                      as_json);
        return 0;
      }
    }

    hop_cfg.seed = lossmap::derive_seed(seed, "basin-hop");
    const int per_walker = std::max(1, hop_cfg.n_steps / std::max(1, workers));
    for (int w = 0; w < std::max(1, workers); ++w) {
      lossmap::BasinHopConfig wcfg = hop_cfg;
      wcfg.n_steps = per_walker;
      wcfg.seed = lossmap::derive_seed(hop_cfg.seed, "walker-" + std::to_string(w));
      lossmap::basin_hop(arch, ds, wcfg, db);
      lossmap::save_database(db, db_path);  // partial results survive interrupts
    }

    const int budget = connect_budget_factor * static_cast<int>(db.minima().size());
    auto stats = lossmap::connect_landscape(arch, ds, db, budget, band_cfg,
                                            hop_cfg.min_cfg, std::cerr);
    lossmap::save_database(db, db_path);
    write_atomic(done_path, "done\n");

    const auto best = db.minimum(db.global_minimum_id());
    print_summary({{"command", "explore"},
                   {"minima", db.minima().size()},
                   {"transition_states", db.transition_states().size()},
                   {"components", stats.final_components},
                   {"ts_attempts", stats.attempts},
                   {"best_loss", best.loss_value},
                   {"best_auc", lossmap::model_auc(arch, best.params, ds)},
                   {"db", db_path}},
                  as_json);
    return 0;
  }

  if (cmd_graph->parsed()) {
    auto db = lossmap::load_database(g_db);
    auto graph = lossmap::build_disconnectivity(db, g_levels);
    json files = json::array();
    for (const auto& fmt : g_formats) {
      const auto path = out_path(g_out + "." + fmt);
      write_atomic(path, lossmap::emit_graph(graph, db, fmt));
      files.push_back(path);
    }
    if (!as_json) {
      for (const auto& n : graph.nodes)
        if (n.members.size() > 1 || n.level == graph.n_levels)
          std::cout << n.label() << " members=" << n.members.size() << "\n";
    }
    print_summary({{"command", "graph"},
                   {"levels", graph.n_levels},
                   {"nodes", graph.nodes.size()},
                   {"files", files}},
                  as_json);
    return 0;
  }

  if (cmd_analyze->parsed()) {
    auto db = lossmap::load_database(a_db);
    auto graph = lossmap::build_disconnectivity(db, a_levels);
    auto [level, index] = parse_group_label(a_group);
    lossmap::ConservedWeightReport rep;
    try {
      rep = lossmap::conserved_weights(db, graph, level, index, a_n);
    } catch (const std::invalid_argument&) {
      std::cerr << "unknown group " << a_group << "; available groups:\n";
      for (const auto& n : graph.nodes)
        if (n.members.size() > 1) std::cerr << "  " << n.label() << "\n";
      throw;
    }
    auto relevance = lossmap::input_relevance(rep, db.arch());

    json j = lossmap::report_to_json(rep);
    j["input_relevance"] = json::array();
    for (const auto& r : relevance) {
      json edges = json::array();
      for (const auto& e : r.edges)
        edges.push_back({{"from", e.from_node}, {"to", e.to_node}});
      j["input_relevance"].push_back(
          {{"input", r.input_node}, {"count", r.edges.size()}, {"edges", edges}});
    }
    write_atomic(out_path(a_out), j.dump(2) + "\n");

    if (!as_json) {
      if (rep.trivially_conserved)
        std::cout << "warning: single-member group; every weight is trivially conserved\n";
      std::printf("%-8s %-6s %-6s %-6s %12s %12s\n", "layer", "from", "to", "bias",
                  "mean", "sigma");
      for (const auto& e : rep.conserved)
        std::printf("%-8d %-6d %-6d %-6s %12.6g %12.6g\n", e.edge.layer,
                    e.edge.from_node, e.edge.to_node, e.edge.is_bias ? "yes" : "no",
                    e.mean, e.sigma);
    }
    print_summary({{"command", "analyze"},
                   {"group", rep.group_label},
                   {"members", rep.member_count},
                   {"conserved", rep.conserved.size()},
                   {"trivially_conserved", rep.trivially_conserved},
                   {"out", out_path(a_out)}},
                  as_json);
    return 0;
  }

  if (cmd_ablate->parsed()) {
    auto ds = ab_data.build(seed);
    auto db = lossmap::load_database(ab_db);
    auto graph = lossmap::build_disconnectivity(db, ab_levels);

    int level = 0, index = 0;
    if (!ab_group.empty()) {
      std::tie(level, index) = parse_group_label(ab_group);
    } else {
      std::tie(level, index) = lossmap::select_ablation_group(db, graph, ab_n);
    }
    auto rep = lossmap::conserved_weights(db, graph, level, index, ab_n);
    if (rep.conserved.empty())
      throw std::runtime_error("conserved set is empty; try a larger n");
    auto abl = lossmap::ablation_experiment(db.arch(), ds, db, rep, ab_trials,
                                            lossmap::derive_seed(seed, "ablation"),
                                            ab_l2);
    json j = lossmap::report_to_json(abl);
    j["group"] = rep.group_label;
    write_atomic(out_path(ab_out), j.dump(2) + "\n");

    print_summary({{"command", "ablate"},
                   {"group", rep.group_label},
                   {"targets", abl.target_set.size()},
                   {"baseline_auc", abl.baseline_auc},
                   {"ablated_mean_auc", abl.ablated.mean},
                   {"control_mean_auc", abl.control.mean},
                   {"out", out_path(ab_out)}},
                  as_json);
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
