#pragma once

#include "lossmap/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <vector>

namespace lossmap {

struct ConservedEntry {
  EdgeIndex edge;
  int flat = 0;
  double mean = 0.0;
  double sigma = 0.0;
};

struct ConservedWeightReport {
  std::string group_label;
  int member_count = 0;
  double sigma_threshold = 0.01;
  std::vector<ConservedEntry> conserved;  // ascending sigma, ties by flat index
  bool trivially_conserved = false;       // single-member group, sigma = 0 everywhere
  std::vector<int> member_ids;
  int best_member_id = 0;  // lowest loss among members
};

// Per-coordinate population standard deviation across the canonical parameter
// vectors of a graph group's member minima; coordinates with sigma < n are
// conserved.
inline ConservedWeightReport conserved_weights(const LandscapeDatabase& db,
                                               const DisconnectivityGraph& graph,
                                               int level, int node_index, double n) {
  if (n <= 0.0) throw std::invalid_argument("conserved_weights: n must be positive");
  const DGNode* node = graph.find(level, node_index);
  if (!node) {
    std::ostringstream msg;
    msg << "conserved_weights: unknown group " << level << "_" << node_index;
    throw std::invalid_argument(msg.str());
  }

  ConservedWeightReport rep;
  rep.group_label = node->label();
  rep.member_count = static_cast<int>(node->members.size());
  rep.sigma_threshold = n;
  rep.member_ids = node->members;
  rep.trivially_conserved = rep.member_count == 1;

  double best_loss = std::numeric_limits<double>::infinity();
  for (int id : node->members) {
    const auto& m = db.minimum(id);
    if (m.loss_value < best_loss) {
      best_loss = m.loss_value;
      rep.best_member_id = id;
    }
  }

  const int p = db.arch().parameter_count();
  const double count = static_cast<double>(rep.member_count);
  for (int i = 0; i < p; ++i) {
    double mean = 0.0;
    for (int id : node->members) mean += db.minimum(id).params[i];
    mean /= count;
    double var = 0.0;
    for (int id : node->members) {
      const double d = db.minimum(id).params[i] - mean;
      var += d * d;
    }
    const double sigma = std::sqrt(var / count);
    if (sigma < n)
      rep.conserved.push_back({flat_to_edge(db.arch(), i), i, mean, sigma});
  }
  std::stable_sort(rep.conserved.begin(), rep.conserved.end(),
                   [](const ConservedEntry& a, const ConservedEntry& b) {
                     if (a.sigma != b.sigma) return a.sigma < b.sigma;
                     return a.flat < b.flat;
                   });
  return rep;
}

struct InputRelevance {
  int input_node = 0;  // 0-based
  std::vector<EdgeIndex> edges;
};

// Conserved first-layer non-bias edges grouped by their input node,
// descending edge count.
inline std::vector<InputRelevance> input_relevance(const ConservedWeightReport& rep,
                                                   const Architecture& arch) {
  std::map<int, std::vector<EdgeIndex>> by_input;
  for (const auto& e : rep.conserved) {
    if (e.edge.layer == 1 && !e.edge.is_bias) by_input[e.edge.from_node].push_back(e.edge);
  }
  (void)arch;
  std::vector<InputRelevance> out;
  for (auto& [node, edges] : by_input) out.push_back({node, std::move(edges)});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.edges.size() != b.edges.size()) return a.edges.size() > b.edges.size();
    return a.input_node < b.input_node;
  });
  return out;
}

// Default ablation group: walk the nodes containing the global minimum from
// deepest to shallowest and take the first whose conserved set is usable —
// at least two targets (a shuffle needs that many) and at most half the
// parameters (the norm-matched control needs a disjoint set of the same
// size). Singleton groups mark every weight conserved, so they never
// qualify; falls back to the deepest multi-member node containing the global
// minimum, then to its deepest singleton. Returns {level, index}.
inline std::pair<int, int> select_ablation_group(const LandscapeDatabase& db,
                                                 const DisconnectivityGraph& graph,
                                                 double n) {
  const int gid = db.global_minimum_id();
  const int p = db.arch().parameter_count();
  int level = 0, index = 0;
  int fb_level = 0, fb_index = 0;
  bool fb_multi = false;
  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    const auto& node = *it;
    if (!std::binary_search(node.members.begin(), node.members.end(), gid)) continue;
    if (fb_level == 0 || (!fb_multi && node.members.size() >= 2)) {
      fb_level = node.level;
      fb_index = node.index;
      fb_multi = node.members.size() >= 2;
    }
    if (node.members.size() < 2) continue;
    auto probe = conserved_weights(db, graph, node.level, node.index, n);
    const auto c = probe.conserved.size();
    if (c >= 2 && c <= static_cast<std::size_t>(p) - c) {
      level = node.level;
      index = node.index;
      break;
    }
  }
  if (level == 0) {
    level = fb_level;
    index = fb_index;
  }
  return {level, index};
}

enum class AblationMode { shuffle, perturb };

// shuffle: apply a uniformly random non-identity permutation to the values at
// the target coordinates. perturb: add a random direction supported on the
// target coordinates, scaled to the requested norm.
inline std::pair<Vec, double> ablate(const Vec& params, const std::vector<int>& target,
                                     AblationMode mode, Rng& rng,
                                     double perturb_norm = 0.0) {
  Vec out = params;
  if (mode == AblationMode::shuffle) {
    if (target.size() < 2)
      throw std::invalid_argument("ablate: shuffle needs at least 2 targets");
    std::vector<int> perm(target.size());
    std::iota(perm.begin(), perm.end(), 0);
    auto is_identity = [&] {
      for (std::size_t i = 0; i < perm.size(); ++i)
        if (perm[i] != static_cast<int>(i)) return false;
      return true;
    };
    do {
      std::shuffle(perm.begin(), perm.end(), rng);
    } while (is_identity());
    for (std::size_t i = 0; i < target.size(); ++i)
      out[target[i]] = params[target[perm[i]]];
  } else {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec dir = Vec::Zero(params.size());
    for (int idx : target) dir[idx] = gauss(rng);
    const double n = dir.norm();
    if (n > 0.0 && perturb_norm > 0.0) out += dir * (perturb_norm / n);
  }
  return {out, (out - params).norm()};
}

struct AblationStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double stddev = 0.0;

  static AblationStats from(const std::vector<double>& xs) {
    AblationStats s;
    if (xs.empty()) return s;
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    // compensated (Kahan) accumulation keeps aggregation order-independent
    double sum = 0.0, c = 0.0;
    for (double x : xs) {
      double y = x - c;
      double t = sum + y;
      c = (t - sum) - y;
      sum = t;
    }
    s.mean = sum / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
  }
};

struct AblationReport {
  std::vector<int> target_set;
  std::string mode = "shuffle-vs-norm-matched-perturb";
  double baseline_auc = 0.0;
  AblationStats ablated;
  AblationStats control;
  std::vector<double> ablated_aucs;
  std::vector<double> control_aucs;
  int trials = 0;
  std::uint64_t seed = 0;
};

// Per trial: shuffle the conserved target set and record the AUC; then
// perturb a disjoint random coordinate set of the same cardinality by the
// same L2 magnitude and record the control AUC.
inline AblationReport ablation_experiment(const Architecture& arch, const Dataset& ds,
                                          const LandscapeDatabase& db,
                                          const ConservedWeightReport& rep, int trials,
                                          std::uint64_t seed, double l2_penalty = 0.0) {
  db.check_fingerprint(landscape_fingerprint(arch, ds, l2_penalty));
  if (rep.conserved.empty())
    throw std::invalid_argument("ablation: conserved set is empty");

  AblationReport out;
  for (const auto& e : rep.conserved) out.target_set.push_back(e.flat);
  out.trials = trials;
  out.seed = seed;

  const Vec& base = db.minimum(rep.best_member_id).params;
  out.baseline_auc = model_auc(arch, base, ds);

  const int p = arch.parameter_count();
  std::vector<int> pool;
  {
    std::set<int> targets(out.target_set.begin(), out.target_set.end());
    for (int i = 0; i < p; ++i)
      if (!targets.count(i)) pool.push_back(i);
  }
  if (pool.size() < out.target_set.size())
    throw std::invalid_argument("ablation: not enough non-target coordinates for controls");

  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, "ablation-trial-" + std::to_string(t)));
    auto [shuffled, norm] = ablate(base, out.target_set, AblationMode::shuffle, rng);
    out.ablated_aucs.push_back(model_auc(arch, shuffled, ds));

    std::vector<int> control = pool;
    std::shuffle(control.begin(), control.end(), rng);
    control.resize(out.target_set.size());
    auto [perturbed, cn] =
        ablate(base, control, AblationMode::perturb, rng, norm);
    (void)cn;
    out.control_aucs.push_back(model_auc(arch, perturbed, ds));
  }
  out.ablated = AblationStats::from(out.ablated_aucs);
  out.control = AblationStats::from(out.control_aucs);
  return out;
}

inline nlohmann::json report_to_json(const ConservedWeightReport& rep) {
  nlohmann::json j;
  j["group"] = rep.group_label;
  j["member_count"] = rep.member_count;
  j["members"] = rep.member_ids;
  j["n"] = rep.sigma_threshold;
  j["trivially_conserved"] = rep.trivially_conserved;
  j["conserved"] = nlohmann::json::array();
  for (const auto& e : rep.conserved) {
    j["conserved"].push_back({{"edge",
                               {{"layer", e.edge.layer},
                                {"from", e.edge.from_node},
                                {"to", e.edge.to_node},
                                {"is_bias", e.edge.is_bias}}},
                              {"flat", e.flat},
                              {"mean", e.mean},
                              {"sigma", e.sigma}});
  }
  return j;
}

inline nlohmann::json report_to_json(const AblationReport& rep) {
  nlohmann::json j;
  j["target_set"] = rep.target_set;
  j["mode"] = rep.mode;
  j["baseline_auc"] = rep.baseline_auc;
  j["trials"] = rep.trials;
  j["seed"] = rep.seed;
  auto stats = [](const AblationStats& s) {
    return nlohmann::json{
        {"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"stddev", s.stddev}};
  };
  j["ablated"] = stats(rep.ablated);
  j["control"] = stats(rep.control);
  j["ablated_aucs"] = rep.ablated_aucs;
  j["control_aucs"] = rep.control_aucs;
  return j;
}

}  // namespace lossmap
