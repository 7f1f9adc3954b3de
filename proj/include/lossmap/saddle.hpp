#pragma once

#include "lossmap/landscape.hpp"
#include "lossmap/optim.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <concepts>
#include <iostream>
#include <set>
#include <vector>

namespace lossmap {

inline constexpr double kTsGradTol = 1e-5;
inline constexpr double kEigTol = 1e-6;
inline constexpr double kQuenchDisplacement = 1e-3;

struct BandConfig {
  int n_images = 15;
  double spring_constant = 1.0;
  double band_grad_tol = 1e-3;
  int max_band_iters = 500;

  void validate() const {
    if (n_images < 3) throw std::invalid_argument("band: n_images >= 3");
    if (spring_constant <= 0.0 || band_grad_tol <= 0.0 || max_band_iters < 1)
      throw std::invalid_argument("band: config values must be positive");
  }
};

struct TsCandidate {
  Vec params;
  double loss = 0.0;
  bool band_converged = true;
};

// Nudged elastic band between two endpoints, one climbing image. fg is the
// usual value-plus-gradient functor. Returns interior images that are local
// maxima along the relaxed chain, highest loss first.
template <class FG>
  requires std::invocable<FG&, const Vec&, Vec&>
std::vector<TsCandidate> band_search(FG&& fg, const Vec& end_a, const Vec& end_b,
                                     const BandConfig& cfg = {}) {
  cfg.validate();
  if (end_a.size() != end_b.size())
    throw std::invalid_argument("band: endpoint size mismatch");
  if ((end_a - end_b).lpNorm<Eigen::Infinity>() == 0.0)
    throw std::invalid_argument("band: identical endpoints");

  const int n = cfg.n_images;
  std::vector<Vec> images(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    images[i] = (1.0 - t) * end_a + t * end_b;
  }

  std::vector<double> losses(n);
  std::vector<Vec> grads(n, Vec(end_a.size()));
  auto evaluate = [&]() {
    for (int i = 0; i < n; ++i) losses[i] = fg(images[i], grads[i]);
  };
  evaluate();

  bool converged = false;
  double step = 0.05;
  std::vector<Vec> forces(n);
  for (int iter = 0; iter < cfg.max_band_iters && !converged; ++iter) {
    // climbing image = interior image of highest loss
    int climb = 1;
    for (int i = 2; i < n - 1; ++i)
      if (losses[i] > losses[climb]) climb = i;

    double fmax = 0.0;
    for (int i = 1; i < n - 1; ++i) {
      // tangent toward the higher-energy neighbour
      Vec tplus = images[i + 1] - images[i];
      Vec tminus = images[i] - images[i - 1];
      Vec tangent = losses[i + 1] > losses[i - 1] ? tplus : tminus;
      const double tn = tangent.norm();
      if (tn > 0.0) tangent /= tn;

      const double g_par = grads[i].dot(tangent);
      if (i == climb) {
        // full force with the parallel component inverted
        forces[i] = -(grads[i] - 2.0 * g_par * tangent);
      } else {
        const double spring = cfg.spring_constant * (tplus.norm() - tminus.norm());
        forces[i] = -(grads[i] - g_par * tangent) + spring * tangent;
      }
      fmax = std::max(fmax, forces[i].lpNorm<Eigen::Infinity>());
    }
    if (fmax <= cfg.band_grad_tol) {
      converged = true;
      break;
    }

    std::vector<Vec> backup = images;
    auto old = losses;
    for (int i = 1; i < n - 1; ++i) images[i] += step * forces[i];
    evaluate();
    double sum_new = 0.0, sum_old = 0.0;
    for (int i = 1; i < n - 1; ++i) {
      sum_new += losses[i];
      sum_old += old[i];
    }
    if (sum_new > sum_old + 1e-12 && step > 1e-6) {
      images = std::move(backup);
      losses = old;
      evaluate();
      step *= 0.5;
    } else {
      step = std::min(step * 1.1, 0.5);
    }
  }

  std::vector<TsCandidate> out;
  for (int i = 1; i < n - 1; ++i) {
    if (losses[i] >= losses[i - 1] && losses[i] >= losses[i + 1])
      out.push_back({images[i], losses[i], converged});
  }
  std::sort(out.begin(), out.end(),
            [](const TsCandidate& a, const TsCandidate& b) { return a.loss > b.loss; });
  return out;
}

inline std::vector<TsCandidate> band_search(const Architecture& arch, const Dataset& ds,
                                            const Minimum& min_a, const Minimum& min_b,
                                            const BandConfig& cfg = {},
                                            double l2_penalty = 0.0) {
  return band_search(ModelObjective{&arch, &ds, l2_penalty}, min_a.params,
                     min_b.params, cfg);
}

struct RefineResult {
  bool ok = false;
  Vec params;
  double loss = 0.0;
  double grad_norm = 0.0;
  double negative_eigenvalue = 0.0;
  Vec downhill_a;  // quench endpoints from +/- displacement along the soft mode
  Vec downhill_b;
  std::string diagnostic;
};

// Eigenvector following: step uphill along the lowest Hessian mode, Newton
// downhill in the orthogonal complement, trust-radius capped.
template <class FG, class HessFn>
  requires std::invocable<FG&, const Vec&, Vec&> && std::invocable<HessFn&, const Vec&>
RefineResult refine_ts(FG&& fg, HessFn&& hess, Vec candidate, int max_iters = 300) {
  if (!candidate.allFinite())
    throw std::invalid_argument("refine_ts: non-finite candidate");

  RefineResult res;
  const double trust = 0.2;
  Vec g(candidate.size());
  double f = fg(candidate, g);

  Eigen::SelfAdjointEigenSolver<Mat> es;
  for (int iter = 0; iter < max_iters; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= kTsGradTol) {
      es.compute(hess(candidate));
      const Vec& evals = es.eigenvalues();
      int n_neg = 0;
      for (Eigen::Index i = 0; i < evals.size(); ++i)
        if (evals[i] < -kEigTol) ++n_neg;
      if (n_neg != 1) {
        res.diagnostic = "converged to index-" + std::to_string(n_neg) +
                         " point; spectrum head: " + std::to_string(evals[0]) + ", " +
                         std::to_string(evals[std::min<Eigen::Index>(1, evals.size() - 1)]);
        return res;
      }
      res.ok = true;
      res.params = candidate;
      res.loss = f;
      res.grad_norm = g.lpNorm<Eigen::Infinity>();
      res.negative_eigenvalue = evals[0];
      res.downhill_a = candidate + kQuenchDisplacement * es.eigenvectors().col(0);
      res.downhill_b = candidate - kQuenchDisplacement * es.eigenvectors().col(0);
      return res;
    }

    es.compute(hess(candidate));
    const Vec& evals = es.eigenvalues();
    const Mat& evecs = es.eigenvectors();
    Vec coeff = evecs.transpose() * g;
    Vec step = Vec::Zero(candidate.size());
    // Eigenvalue floor keeps near-degenerate modes from exploding the Newton
    // step; the trust radius below handles the rest. A large floor stalls
    // progress along soft modes, so keep it small.
    constexpr double floor = 1e-3;
    // lowest mode: move uphill (toward the saddle along the soft direction)
    step += coeff[0] / std::max(std::abs(evals[0]), floor) * evecs.col(0);
    for (Eigen::Index i = 1; i < evals.size(); ++i)
      step -= coeff[i] / std::max(std::abs(evals[i]), floor) * evecs.col(i);
    const double sn = step.norm();
    if (sn > trust) step *= trust / sn;
    candidate += step;
    f = fg(candidate, g);
    if (!std::isfinite(f)) {
      res.diagnostic = "non-finite loss during refinement";
      return res;
    }
  }
  res.diagnostic = "iteration cap reached";
  return res;
}

inline RefineResult refine_ts(const Architecture& arch, const Dataset& ds,
                              const Vec& candidate, int max_iters = 300,
                              double l2_penalty = 0.0) {
  return refine_ts(ModelObjective{&arch, &ds, l2_penalty},
                   [&](const Vec& x) { return hessian(arch, x, ds, l2_penalty); },
                   candidate, max_iters);
}

struct ConnectStats {
  int attempts = 0;
  int successes = 0;
  int new_ts = 0;
  int new_minima = 0;
  int final_components = 0;
};

// Greedy nearest-pair-across-components connection: band search plus
// refinement until one component remains or the budget is spent.
inline ConnectStats connect_landscape(const Architecture& arch, const Dataset& ds,
                                      LandscapeDatabase& db, int budget,
                                      const BandConfig& band_cfg = {},
                                      const MinimizeConfig& min_cfg = {},
                                      std::ostream& log = std::cout) {
  db.check_fingerprint(landscape_fingerprint(arch, ds, min_cfg.l2_penalty));
  ConnectStats stats;
  std::set<std::pair<int, int>> attempted;
  // failed attempts per component pair (components keyed by smallest member id),
  // so one stubborn pair of clusters cannot soak up the whole budget
  std::map<std::pair<int, int>, int> comp_attempts;

  while (stats.attempts < budget) {
    auto comps = connected_components(db);
    stats.final_components = static_cast<int>(comps.size());
    if (comps.size() <= 1) break;

    // closest canonical-coordinate pair spanning two components, among the
    // component pairs attempted least so far
    int best_a = -1, best_b = -1;
    int best_tries = std::numeric_limits<int>::max();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t ca = 0; ca < comps.size(); ++ca) {
      for (std::size_t cb = ca + 1; cb < comps.size(); ++cb) {
        const auto ckey = std::minmax(comps[ca].front(), comps[cb].front());
        auto it = comp_attempts.find(ckey);
        const int tries = it == comp_attempts.end() ? 0 : it->second;
        if (tries > best_tries) continue;
        for (int ia : comps[ca]) {
          for (int ib : comps[cb]) {
            auto key = std::minmax(ia, ib);
            if (attempted.count(key)) continue;
            const double d =
                (db.minimum(ia).params - db.minimum(ib).params).norm();
            if (tries < best_tries || d < best_d) {
              best_tries = tries;
              best_d = d;
              best_a = key.first;
              best_b = key.second;
            }
          }
        }
      }
    }
    if (best_a < 0) break;  // every cross-component pair already attempted
    attempted.insert({best_a, best_b});
    ++stats.attempts;
    {
      auto comps_now = connected_components(db);
      int root_a = -1, root_b = -1;
      for (const auto& c : comps_now) {
        if (std::binary_search(c.begin(), c.end(), best_a)) root_a = c.front();
        if (std::binary_search(c.begin(), c.end(), best_b)) root_b = c.front();
      }
      ++comp_attempts[std::minmax(root_a, root_b)];
    }

    bool ok = false;
    double barrier = std::numeric_limits<double>::quiet_NaN();
    auto candidates = band_search(arch, ds, db.minimum(best_a), db.minimum(best_b),
                                  band_cfg, min_cfg.l2_penalty);
    for (const auto& cand : candidates) {
      auto ref = refine_ts(arch, ds, cand.params, 300, min_cfg.l2_penalty);
      if (!ref.ok) continue;
      // Record endpoints in the frame the saddle is *stored* in: the database
      // canonicalizes transition-state params, and downhill trajectories from
      // a 1e-3 displacement are chaotic enough that quenching in a symmetry-
      // related frame can land in a different (equivalent-loss) basin. Quench
      // from the canonical representative so re-verification of the stored
      // point reproduces the recorded endpoints exactly.
      const Vec ts_canon = canonicalize(arch, ref.params);
      Eigen::SelfAdjointEigenSolver<Mat> es(
          hessian(arch, ts_canon, ds, min_cfg.l2_penalty));
      const Vec dir = es.eigenvectors().col(0);
      auto qa = minimize(arch, ds, ts_canon + kQuenchDisplacement * dir, min_cfg);
      auto qb = minimize(arch, ds, ts_canon - kQuenchDisplacement * dir, min_cfg);
      if (!qa.converged || !qb.converged) continue;
      if (ref.loss < std::max(qa.loss, qb.loss) - 1e-9) continue;
      auto [id_a, new_a] = db.insert_minimum(qa.params, qa.loss, qa.grad_norm);
      auto [id_b, new_b] = db.insert_minimum(qb.params, qb.loss, qb.grad_norm);
      stats.new_minima += static_cast<int>(new_a) + static_cast<int>(new_b);
      if (id_a == id_b) continue;  // both sides fell into the same basin
      auto [ts_id, fresh] = db.insert_transition_state(
          ts_canon, ref.loss, ref.grad_norm, ref.negative_eigenvalue, id_a, id_b);
      (void)ts_id;
      if (fresh) ++stats.new_ts;
      ok = true;
      barrier = ref.loss - std::max(db.minimum(id_a).loss_value,
                                    db.minimum(id_b).loss_value);
    }
    if (ok) ++stats.successes;
    log << "TS-ATTEMPT pair=" << best_a << "," << best_b
        << " outcome=" << (ok ? "ok" : "fail") << " barrier=" << barrier << "\n";
  }
  stats.final_components = static_cast<int>(connected_components(db).size());
  return stats;
}

}  // namespace lossmap
