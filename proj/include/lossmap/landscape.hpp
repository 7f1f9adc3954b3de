#pragma once

#include "lossmap/model.hpp"
#include "lossmap/symmetry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lossmap {

struct Minimum {
  int id = 0;
  Vec params;  // canonical orbit representative
  double loss_value = 0.0;
  double grad_norm = 0.0;
  int discovery_count = 1;
  std::optional<double> min_hessian_eigenvalue;
};

struct TransitionState {
  int id = 0;
  Vec params;
  double loss_value = 0.0;
  double grad_norm = 0.0;
  double negative_eigenvalue = 0.0;
  int min_a = 0;
  int min_b = 0;
};

inline constexpr double kOrbitDedupTol = 1e-4;
inline constexpr const char* kLossTag = "mean-softmax-cross-entropy";
inline constexpr int kDatabaseVersion = 1;

inline std::uint64_t landscape_fingerprint(const Architecture& arch,
                                           const Dataset& ds,
                                           double l2_penalty = 0.0) {
  std::uint64_t h = fnv1a(kLossTag);
  h = fnv1a(&arch.input_dim, sizeof(int), h);
  h = fnv1a(arch.hidden.data(), sizeof(int) * arch.hidden.size(), h);
  h = fnv1a(&arch.output_dim, sizeof(int), h);
  if (l2_penalty != 0.0) h = fnv1a(&l2_penalty, sizeof(double), h);
  const std::uint64_t dd = ds.digest();
  return fnv1a(&dd, sizeof(dd), h);
}

// Deduplicated store of minima and transition states. Mutation is
// single-writer; snapshots may be read concurrently.
class LandscapeDatabase {
 public:
  LandscapeDatabase() = default;
  LandscapeDatabase(Architecture arch, std::uint64_t fingerprint)
      : arch_(std::move(arch)), fingerprint_(fingerprint) {}
  LandscapeDatabase(const Architecture& arch, const Dataset& ds,
                    double l2_penalty = 0.0)
      : arch_(arch), fingerprint_(landscape_fingerprint(arch, ds, l2_penalty)) {}

  const Architecture& arch() const { return arch_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  const std::vector<Minimum>& minima() const { return minima_; }
  const std::vector<TransitionState>& transition_states() const { return ts_; }

  void check_fingerprint(std::uint64_t expected) const {
    if (fingerprint_ != expected)
      throw std::runtime_error("landscape database: fingerprint mismatch");
  }

  const Minimum& minimum(int id) const {
    for (const auto& m : minima_)
      if (m.id == id) return m;
    throw std::invalid_argument("landscape database: unknown minimum id " +
                                std::to_string(id));
  }

  // Canonicalizes and merges into an orbit-equivalent entry when one exists.
  std::pair<int, bool> insert_minimum(const Vec& params, double loss_value,
                                      double grad_norm,
                                      std::optional<double> min_eig = {}) {
    Vec canon = canonicalize(arch_, params);
    for (auto& m : minima_) {
      if (are_equivalent(arch_, m.params, canon, kOrbitDedupTol)) {
        ++m.discovery_count;
        if (min_eig && !m.min_hessian_eigenvalue) m.min_hessian_eigenvalue = min_eig;
        return {m.id, false};
      }
    }
    Minimum m;
    m.id = next_min_id_++;
    m.params = std::move(canon);
    m.loss_value = loss_value;
    m.grad_norm = grad_norm;
    m.min_hessian_eigenvalue = min_eig;
    minima_.push_back(std::move(m));
    return {minima_.back().id, true};
  }

  std::pair<int, bool> insert_transition_state(const Vec& params, double loss_value,
                                               double grad_norm, double neg_eig,
                                               int min_a, int min_b) {
    minimum(min_a);
    minimum(min_b);
    const auto lo = std::min(min_a, min_b);
    const auto hi = std::max(min_a, min_b);
    Vec canon = canonicalize(arch_, params);
    for (const auto& t : ts_) {
      if (std::min(t.min_a, t.min_b) == lo && std::max(t.min_a, t.min_b) == hi &&
          are_equivalent(arch_, t.params, canon, kOrbitDedupTol))
        return {t.id, false};
    }
    TransitionState t;
    t.id = next_ts_id_++;
    t.params = std::move(canon);
    t.loss_value = loss_value;
    t.grad_norm = grad_norm;
    t.negative_eigenvalue = neg_eig;
    t.min_a = min_a;
    t.min_b = min_b;
    ts_.push_back(std::move(t));
    return {ts_.back().id, true};
  }

  int global_minimum_id() const {
    if (minima_.empty())
      throw std::runtime_error("landscape database: no minima");
    const Minimum* best = &minima_.front();
    for (const auto& m : minima_) {
      if (m.loss_value < best->loss_value ||
          (m.loss_value == best->loss_value && m.id < best->id))
        best = &m;
    }
    return best->id;
  }

  // restore without re-canonicalizing (load path)
  void restore(std::vector<Minimum> minima, std::vector<TransitionState> ts) {
    minima_ = std::move(minima);
    ts_ = std::move(ts);
    next_min_id_ = 1;
    for (const auto& m : minima_) next_min_id_ = std::max(next_min_id_, m.id + 1);
    next_ts_id_ = 1;
    for (const auto& t : ts_) next_ts_id_ = std::max(next_ts_id_, t.id + 1);
  }

 private:
  Architecture arch_;
  std::uint64_t fingerprint_ = 0;
  std::vector<Minimum> minima_;
  std::vector<TransitionState> ts_;
  int next_min_id_ = 1;
  int next_ts_id_ = 1;
};

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace detail

// Superbasins: connected components of the threshold graph over minima with
// loss <= epsilon, joined by transition states with loss <= epsilon.
inline std::vector<std::vector<int>> superbasins_at(const LandscapeDatabase& db,
                                                    double epsilon) {
  std::vector<int> ids;
  std::map<int, int> pos;
  for (const auto& m : db.minima()) {
    if (m.loss_value <= epsilon) {
      pos[m.id] = static_cast<int>(ids.size());
      ids.push_back(m.id);
    }
  }
  detail::UnionFind uf(static_cast<int>(ids.size()));
  for (const auto& t : db.transition_states()) {
    if (t.loss_value <= epsilon && pos.count(t.min_a) && pos.count(t.min_b))
      uf.unite(pos[t.min_a], pos[t.min_b]);
  }
  std::map<int, std::vector<int>> comps;
  for (std::size_t i = 0; i < ids.size(); ++i)
    comps[uf.find(static_cast<int>(i))].push_back(ids[i]);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : comps) {
    std::sort(members.begin(), members.end());
    out.push_back(std::move(members));
  }
  return out;
}

// Components over all minima (epsilon = infinity).
inline std::vector<std::vector<int>> connected_components(const LandscapeDatabase& db) {
  return superbasins_at(db, std::numeric_limits<double>::infinity());
}

struct DGNode {
  int level = 0;  // 1 = highest energy level
  int index = 0;  // 1-based within the level, ascending best member loss
  std::vector<int> members;
  int parent = -1;  // position in DisconnectivityGraph::nodes, -1 for level 1
  double best_loss = 0.0;

  std::string label() const {
    return std::to_string(level) + "_" + std::to_string(index);
  }
};

struct DisconnectivityGraph {
  int n_levels = 0;
  double e_top = 0.0;
  double e_bottom = 0.0;
  double delta = 0.0;
  std::vector<DGNode> nodes;

  double threshold(int level) const { return e_top - (level - 1) * delta; }

  const DGNode* find(int level, int index) const {
    for (const auto& n : nodes)
      if (n.level == level && n.index == index) return &n;
    return nullptr;
  }
};

inline DisconnectivityGraph build_disconnectivity(const LandscapeDatabase& db,
                                                  int n_levels) {
  if (db.minima().empty())
    throw std::invalid_argument("disconnectivity: empty database");
  if (n_levels < 2)
    throw std::invalid_argument("disconnectivity: n_levels >= 2");

  double e_bottom = std::numeric_limits<double>::infinity();
  double e_max = -std::numeric_limits<double>::infinity();
  for (const auto& m : db.minima()) {
    e_bottom = std::min(e_bottom, m.loss_value);
    e_max = std::max(e_max, m.loss_value);
  }
  for (const auto& t : db.transition_states()) e_max = std::max(e_max, t.loss_value);

  DisconnectivityGraph g;
  g.n_levels = n_levels;
  g.e_bottom = e_bottom;
  g.e_top = e_max + 1e-12;
  g.delta = (g.e_top - g.e_bottom) / n_levels;

  std::vector<int> prev_level_start;  // node positions of the previous level
  int prev_begin = 0, prev_end = 0;
  for (int level = 1; level <= n_levels; ++level) {
    auto basins = superbasins_at(db, g.threshold(level));
    // order nodes by ascending best member loss
    std::vector<std::pair<double, std::vector<int>>> keyed;
    for (auto& b : basins) {
      double best = std::numeric_limits<double>::infinity();
      for (int id : b) best = std::min(best, db.minimum(id).loss_value);
      keyed.emplace_back(best, std::move(b));
    }
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second < b.second;
    });
    const int begin = static_cast<int>(g.nodes.size());
    int index = 1;
    for (auto& [best, members] : keyed) {
      DGNode node;
      node.level = level;
      node.index = index++;
      node.members = std::move(members);
      node.best_loss = best;
      if (level > 1) {
        for (int p = prev_begin; p < prev_end; ++p) {
          const auto& pm = g.nodes[p].members;
          if (std::includes(pm.begin(), pm.end(), node.members.begin(),
                            node.members.end())) {
            node.parent = p;
            break;
          }
        }
        if (node.parent < 0)
          throw std::logic_error("disconnectivity: node without parent");
      }
      g.nodes.push_back(std::move(node));
    }
    prev_begin = begin;
    prev_end = static_cast<int>(g.nodes.size());
  }
  return g;
}

inline std::string emit_graph_dot(const DisconnectivityGraph& g,
                                  const LandscapeDatabase& db) {
  std::string out = "graph disconnectivity {\n  node [shape=box];\n";
  char buf[128];
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    std::snprintf(buf, sizeof(buf), "  n%zu [label=\"%s\"];\n", i, n.label().c_str());
    out += buf;
    if (n.parent >= 0) {
      std::snprintf(buf, sizeof(buf), "  n%d -- n%zu;\n", n.parent, i);
      out += buf;
    }
  }
  // leaf stems: each minimum hangs off its deepest containing node
  for (const auto& m : db.minima()) {
    int deepest = -1;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      const auto& mem = g.nodes[i].members;
      if (std::binary_search(mem.begin(), mem.end(), m.id)) deepest = static_cast<int>(i);
    }
    if (deepest < 0) continue;
    std::snprintf(buf, sizeof(buf),
                  "  m%d [shape=point, label=\"\", xlabel=\"min %d @ %.6g\"];\n  "
                  "n%d -- m%d;\n",
                  m.id, m.id, m.loss_value, deepest, m.id);
    out += buf;
  }
  out += "}\n";
  return out;
}

inline nlohmann::json graph_to_json(const DisconnectivityGraph& g) {
  nlohmann::json j;
  j["levels"] = g.n_levels;
  j["e_top"] = g.e_top;
  j["e_bottom"] = g.e_bottom;
  j["delta"] = g.delta;
  j["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    nlohmann::json jn;
    jn["label"] = n.label();
    jn["level"] = n.level;
    jn["index"] = n.index;
    jn["parent"] = n.parent >= 0 ? g.nodes[n.parent].label() : "";
    jn["members"] = n.members;
    jn["y"] = g.threshold(n.level);
    j["nodes"].push_back(std::move(jn));
  }
  return j;
}

inline std::string emit_graph_json(const DisconnectivityGraph& g) {
  return graph_to_json(g).dump(2) + "\n";
}

inline std::string emit_graph_svg(const DisconnectivityGraph& g,
                                  const LandscapeDatabase& db) {
  // x slots per minimum from an in-order walk of the deepest level
  std::map<int, double> min_x;
  {
    double x = 0.0;
    for (const auto& n : g.nodes) {
      if (n.level != g.n_levels) continue;
      std::vector<int> members = n.members;
      std::sort(members.begin(), members.end(), [&](int a, int b) {
        const double la = db.minimum(a).loss_value;
        const double lb = db.minimum(b).loss_value;
        if (la != lb) return la < lb;
        return a < b;
      });
      for (int id : members) min_x[id] = x++;
    }
    // minima above the deepest threshold still need slots
    for (const auto& m : db.minima())
      if (!min_x.count(m.id)) min_x[m.id] = x++;
  }

  const double width = 80.0 * std::max<std::size_t>(1, min_x.size()) + 80.0;
  const double height = 600.0;
  const double top_pad = 40.0, bottom_pad = 40.0, left_pad = 60.0;
  double lo = g.e_bottom, hi = g.e_top;
  if (hi - lo < 1e-12) hi = lo + 1.0;
  auto ypix = [&](double loss) {
    return top_pad + (hi - loss) / (hi - lo) * (height - top_pad - bottom_pad);
  };
  auto xpix = [&](double slot) { return left_pad + 80.0 * slot + 40.0; };

  auto node_x = [&](const DGNode& n) {
    double s = 0.0;
    for (int id : n.members) s += min_x.at(id);
    return xpix(s / static_cast<double>(n.members.size()));
  };

  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" "
                "height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                width, height, width, height);
  out += buf;
  out += "<g stroke=\"black\" stroke-width=\"1.5\" fill=\"none\">\n";
  for (const auto& n : g.nodes) {
    const double x = node_x(n);
    const double y0 = ypix(g.threshold(n.level));
    const double y1 = n.level < g.n_levels ? ypix(g.threshold(n.level + 1))
                                           : ypix(n.best_loss);
    std::snprintf(buf, sizeof(buf), "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>\n",
                  x, y0, x, std::max(y0, y1));
    out += buf;
    if (n.parent >= 0) {
      const double px = node_x(g.nodes[n.parent]);
      std::snprintf(buf, sizeof(buf),
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>\n", px, y0,
                    x, y0);
      out += buf;
    }
  }
  // leaf stems down to each minimum's loss
  for (const auto& n : g.nodes) {
    if (n.level != g.n_levels) continue;
    for (int id : n.members) {
      const double x = xpix(min_x.at(id));
      const double y0 = ypix(g.threshold(n.level));
      const double y1 = ypix(db.minimum(id).loss_value);
      std::snprintf(buf, sizeof(buf),
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>\n",
                    node_x(n), y0, x, y0);
      out += buf;
      std::snprintf(buf, sizeof(buf),
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>\n", x, y0,
                    x, y1);
      out += buf;
    }
  }
  out += "</g>\n<g font-family=\"sans-serif\" font-size=\"10\" fill=\"black\">\n";
  for (const auto& n : g.nodes) {
    if (n.members.size() < 2 && n.level != 1) continue;
    std::snprintf(buf, sizeof(buf), "<text x=\"%.2f\" y=\"%.2f\">%s</text>\n",
                  node_x(n) + 3.0, ypix(g.threshold(n.level)) - 2.0, n.label().c_str());
    out += buf;
  }
  out += "</g>\n</svg>\n";
  return out;
}

inline std::string emit_graph(const DisconnectivityGraph& g,
                              const LandscapeDatabase& db,
                              const std::string& format) {
  if (format == "dot") return emit_graph_dot(g, db);
  if (format == "json") return emit_graph_json(g);
  if (format == "svg") return emit_graph_svg(g, db);
  throw std::invalid_argument("emit_graph: unknown format '" + format + "'");
}

namespace detail {

inline nlohmann::json params_to_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(double_to_hex(v[i]));
  return a;
}

inline Vec params_from_json(const nlohmann::json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = hex_to_double(a[i].get<std::string>());
  return v;
}

}  // namespace detail

inline nlohmann::json database_to_json(const LandscapeDatabase& db) {
  nlohmann::json j;
  j["version"] = kDatabaseVersion;
  j["fingerprint"] = db.fingerprint();
  j["loss"] = kLossTag;
  j["arch"] = {{"input_dim", db.arch().input_dim},
               {"hidden", db.arch().hidden},
               {"output_dim", db.arch().output_dim}};
  j["minima"] = nlohmann::json::array();
  for (const auto& m : db.minima()) {
    nlohmann::json jm;
    jm["id"] = m.id;
    jm["loss"] = double_to_hex(m.loss_value);
    jm["grad_norm"] = double_to_hex(m.grad_norm);
    jm["params"] = detail::params_to_json(m.params);
    jm["discovery_count"] = m.discovery_count;
    if (m.min_hessian_eigenvalue)
      jm["min_hessian_eig"] = double_to_hex(*m.min_hessian_eigenvalue);
    j["minima"].push_back(std::move(jm));
  }
  j["transition_states"] = nlohmann::json::array();
  for (const auto& t : db.transition_states()) {
    nlohmann::json jt;
    jt["id"] = t.id;
    jt["loss"] = double_to_hex(t.loss_value);
    jt["grad_norm"] = double_to_hex(t.grad_norm);
    jt["neg_eig"] = double_to_hex(t.negative_eigenvalue);
    jt["min_a"] = t.min_a;
    jt["min_b"] = t.min_b;
    jt["params"] = detail::params_to_json(t.params);
    j["transition_states"].push_back(std::move(jt));
  }
  return j;
}

inline LandscapeDatabase database_from_json(const nlohmann::json& j,
                                            std::optional<std::uint64_t> expect_fp = {}) {
  if (!j.contains("version") || j["version"].get<int>() != kDatabaseVersion)
    throw std::runtime_error("landscape database: unsupported version");
  Architecture arch;
  arch.input_dim = j["arch"]["input_dim"].get<int>();
  arch.hidden = j["arch"]["hidden"].get<std::vector<int>>();
  arch.output_dim = j["arch"]["output_dim"].get<int>();
  const auto fp = j["fingerprint"].get<std::uint64_t>();
  if (expect_fp && *expect_fp != fp)
    throw std::runtime_error("landscape database: fingerprint mismatch on load");
  LandscapeDatabase db(arch, fp);
  std::vector<Minimum> minima;
  for (const auto& jm : j["minima"]) {
    Minimum m;
    m.id = jm["id"].get<int>();
    m.loss_value = hex_to_double(jm["loss"].get<std::string>());
    m.grad_norm = hex_to_double(jm["grad_norm"].get<std::string>());
    m.params = detail::params_from_json(jm["params"]);
    m.discovery_count = jm["discovery_count"].get<int>();
    if (jm.contains("min_hessian_eig"))
      m.min_hessian_eigenvalue = hex_to_double(jm["min_hessian_eig"].get<std::string>());
    minima.push_back(std::move(m));
  }
  std::vector<TransitionState> ts;
  for (const auto& jt : j["transition_states"]) {
    TransitionState t;
    t.id = jt["id"].get<int>();
    t.loss_value = hex_to_double(jt["loss"].get<std::string>());
    t.grad_norm = hex_to_double(jt["grad_norm"].get<std::string>());
    t.negative_eigenvalue = hex_to_double(jt["neg_eig"].get<std::string>());
    t.min_a = jt["min_a"].get<int>();
    t.min_b = jt["min_b"].get<int>();
    t.params = detail::params_from_json(jt["params"]);
    ts.push_back(std::move(t));
  }
  db.restore(std::move(minima), std::move(ts));
  return db;
}

inline void save_database(const LandscapeDatabase& db, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("save: cannot write " + tmp);
    out << database_to_json(db).dump(2) << '\n';
    if (!out) throw std::runtime_error("save: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("save: rename failed for " + path);
}

inline LandscapeDatabase load_database(const std::string& path,
                                       std::optional<std::uint64_t> expect_fp = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load: malformed database file " + path + ": " + e.what());
  }
  return database_from_json(j, expect_fp);
}

}  // namespace lossmap
