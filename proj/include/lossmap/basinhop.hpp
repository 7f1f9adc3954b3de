#pragma once

#include "lossmap/landscape.hpp"
#include "lossmap/optim.hpp"

#include <random>

namespace lossmap {

struct BasinHopConfig {
  int n_steps = 2000;
  double perturbation_scale = 0.8;       // per-coordinate uniform half-width
  double metropolis_temperature = 0.05;  // loss units
  std::uint64_t seed = 0;
  MinimizeConfig min_cfg;

  void validate() const {
    if (n_steps < 0 || perturbation_scale <= 0.0 || metropolis_temperature <= 0.0)
      throw std::invalid_argument("basin hop: config values must be positive");
  }
};

struct HopRecord {
  double proposed_loss = 0.0;
  double anchor_loss = 0.0;
  bool converged = false;
  bool accepted = false;
};

// Perturb -> quench -> Metropolis accept on minimized losses. The anchor is
// the last accepted minimum. Every converged quench is canonicalized and
// deduplicated into the database.
inline std::vector<HopRecord> basin_hop(const Architecture& arch, const Dataset& ds,
                                        const BasinHopConfig& cfg,
                                        LandscapeDatabase& db,
                                        std::optional<Vec> start = {}) {
  cfg.validate();
  db.check_fingerprint(landscape_fingerprint(arch, ds, cfg.min_cfg.l2_penalty));

  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int p = arch.parameter_count();

  Vec anchor;
  if (start) {
    anchor = *start;
  } else {
    anchor.resize(p);
    for (int i = 0; i < p; ++i) anchor[i] = 2.0 * unit(rng) - 1.0;
  }

  auto quench = [&](const Vec& from) { return minimize(arch, ds, from, cfg.min_cfg); };

  MinimizeResult cur = quench(anchor);
  if (cur.converged)
    db.insert_minimum(cur.params, cur.loss, cur.grad_norm);
  Vec anchor_params = cur.params;
  double anchor_loss = cur.loss;

  std::vector<HopRecord> history;
  history.reserve(cfg.n_steps);
  int stalled = 0;
  for (int step = 0; step < cfg.n_steps; ++step) {
    // Runaway plateaus (weights growing without bound under cross-entropy)
    // can trap the walker where no quench converges; redraw the anchor after
    // a run of unconverged quenches.
    if (stalled >= 5) {
      for (int i = 0; i < p; ++i) anchor_params[i] = 2.0 * unit(rng) - 1.0;
      MinimizeResult re = quench(anchor_params);
      if (re.converged) db.insert_minimum(re.params, re.loss, re.grad_norm);
      anchor_params = re.params;
      anchor_loss = re.loss;
      stalled = 0;
    }
    Vec trial = anchor_params;
    for (int i = 0; i < p; ++i)
      trial[i] += cfg.perturbation_scale * (2.0 * unit(rng) - 1.0);
    MinimizeResult prop = quench(trial);
    stalled = prop.converged ? 0 : stalled + 1;

    HopRecord rec;
    rec.proposed_loss = prop.loss;
    rec.anchor_loss = anchor_loss;
    rec.converged = prop.converged;
    if (prop.converged) db.insert_minimum(prop.params, prop.loss, prop.grad_norm);

    // acceptance is on minimized losses; storage alone is gated on convergence
    const double delta = prop.loss - anchor_loss;
    const double u = unit(rng);
    rec.accepted = delta <= 0.0 || u < std::exp(-delta / cfg.metropolis_temperature);
    if (rec.accepted) {
      anchor_params = prop.params;
      anchor_loss = prop.loss;
    }
    history.push_back(rec);
  }
  return history;
}

}  // namespace lossmap
