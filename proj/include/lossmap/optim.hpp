#pragma once

#include "lossmap/model.hpp"

#include <cmath>
#include <concepts>
#include <deque>
#include <functional>
#include <limits>

namespace lossmap {

struct MinimizeConfig {
  double grad_tol = 1e-6;  // max-norm
  int max_iters = 2000;
  int history_size = 10;
  double initial_step = 1.0;
  // Unpenalized cross-entropy has runaway directions where the gradient
  // vanishes only because every unit saturates as the weights grow without
  // bound. The ridge term keeps minima finite and isolated; the cap catches
  // outright divergence (the quench stops and reports converged=false).
  double l2_penalty = 0.0;
  double param_cap = 1e6;
  // Newton-polish converged quenches (model overload only). A couple of dense
  // Newton steps shrink the position scatter from grad_tol / softest-curvature
  // down to machine level, which keeps orbit deduplication reliable.
  bool polish = true;
};

struct MinimizeResult {
  Vec params;
  double loss = 0.0;
  double grad_norm = 0.0;  // max-norm
  bool converged = false;
  int iterations = 0;
};

namespace detail {

// Strong Wolfe line search (bracket + zoom), c1 = 1e-4, c2 = 0.9.
// fg(x, grad) returns the value and fills the gradient.
template <class FG>
double wolfe_line_search(FG&& fg, const Vec& x, const Vec& dir, double f0,
                         const Vec& g0, double alpha_init, Vec& x_out, double& f_out,
                         Vec& g_out) {
  constexpr double c1 = 1e-4;
  constexpr double c2 = 0.9;
  constexpr int max_evals = 40;
  const double dphi0 = g0.dot(dir);
  if (dphi0 >= 0.0) return 0.0;  // not a descent direction

  auto phi = [&](double a, double& dphi, Vec& g) {
    x_out = x + a * dir;
    double f = fg(x_out, g);
    dphi = g.dot(dir);
    return f;
  };

  auto zoom = [&](double lo, double f_lo, double dphi_lo, double hi, double f_hi) {
    Vec g(x.size());
    for (int it = 0; it < max_evals; ++it) {
      // quadratic interpolation with bisection fallback
      double a = lo - 0.5 * dphi_lo * (hi - lo) * (hi - lo) /
                          (f_hi - f_lo - dphi_lo * (hi - lo));
      const double lo_b = std::min(lo, hi), hi_b = std::max(lo, hi);
      if (!std::isfinite(a) || a <= lo_b + 0.1 * (hi_b - lo_b) ||
          a >= hi_b - 0.1 * (hi_b - lo_b))
        a = 0.5 * (lo + hi);
      double dphi_a;
      double f_a = phi(a, dphi_a, g);
      if (f_a > f0 + c1 * a * dphi0 || f_a >= f_lo) {
        hi = a;
        f_hi = f_a;
      } else {
        if (std::abs(dphi_a) <= -c2 * dphi0) {
          f_out = f_a;
          g_out = g;
          return a;
        }
        if (dphi_a * (hi - lo) >= 0.0) {
          hi = lo;
          f_hi = f_lo;
        }
        lo = a;
        f_lo = f_a;
        dphi_lo = dphi_a;
      }
      if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
    }
    // fall back to the low point of the bracket
    double dphi_lo2;
    f_out = phi(lo, dphi_lo2, g);
    g_out = g;
    return lo;
  };

  double a_prev = 0.0, f_prev = f0, dphi_prev = dphi0;
  double a = alpha_init;
  Vec g(x.size());
  for (int it = 0; it < max_evals; ++it) {
    double dphi_a;
    double f_a = phi(a, dphi_a, g);
    if (f_a > f0 + c1 * a * dphi0 || (it > 0 && f_a >= f_prev))
      return zoom(a_prev, f_prev, dphi_prev, a, f_a);
    if (std::abs(dphi_a) <= -c2 * dphi0) {
      f_out = f_a;
      g_out = g;
      return a;
    }
    if (dphi_a >= 0.0) return zoom(a, f_a, dphi_a, a_prev, f_prev);
    a_prev = a;
    f_prev = f_a;
    dphi_prev = dphi_a;
    a *= 2.0;
  }
  f_out = f_prev;
  double d;
  f_out = phi(a_prev, d, g);
  g_out = g;
  return a_prev;
}

}  // namespace detail

// Limited-memory quasi-Newton minimization. fg(x, grad) -> value.
template <class FG>
  requires std::invocable<FG&, const Vec&, Vec&>
MinimizeResult minimize(FG&& fg, Vec start, const MinimizeConfig& cfg = {}) {
  if (!start.allFinite())
    throw std::invalid_argument("minimize: non-finite start point");
  if (cfg.grad_tol <= 0.0 || cfg.max_iters < 1)
    throw std::invalid_argument("minimize: bad config");

  MinimizeResult res;
  Vec x = std::move(start);
  Vec g(x.size());
  double f = fg(x, g);
  if (!std::isfinite(f))
    throw std::runtime_error("minimize: non-finite loss at start");

  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;

  bool runaway = false;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    res.iterations = iter;
    if (x.lpNorm<Eigen::Infinity>() > cfg.param_cap) {
      runaway = true;
      break;
    }
    if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      res.converged = true;
      break;
    }

    // two-loop recursion
    Vec q = -g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const auto& s = s_hist.back();
      const auto& y = y_hist.back();
      q *= s.dot(y) / y.dot(y);
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vec dir = q;
    if (dir.dot(g) >= 0.0) dir = -g;  // reset on loss of descent

    const double alpha0 =
        s_hist.empty() ? std::min(cfg.initial_step, 1.0 / std::max(1.0, g.norm()))
                       : cfg.initial_step;
    Vec x_new(x.size()), g_new(x.size());
    double f_new;
    const double step =
        detail::wolfe_line_search(fg, x, dir, f, g, alpha0, x_new, f_new, g_new);
    if (step <= 0.0 || !std::isfinite(f_new) || f_new > f) {
      // line search failed; gradient direction one more time before giving up
      if ((dir + g).norm() < 1e-300) break;
      Vec gd = -g;
      const double step2 = detail::wolfe_line_search(fg, x, gd, f, g, alpha0, x_new,
                                                     f_new, g_new);
      if (step2 <= 0.0 || !std::isfinite(f_new) || f_new > f) break;
    }

    Vec s = x_new - x;
    Vec y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.history_size) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(x_new);
    g = g_new;
    f = f_new;
  }

  res.params = std::move(x);
  res.loss = f;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  res.converged = !runaway && res.grad_norm <= cfg.grad_tol;
  return res;
}

// Adapter binding the classifier loss (plus optional ridge penalty) to the
// fg interface. The penalty is symmetric under hidden-unit permutations and
// sign flips, so it leaves the orbit structure intact.
struct ModelObjective {
  const Architecture* arch;
  const Dataset* dataset;
  double l2_penalty = 0.0;
  double operator()(const Vec& x, Vec& grad) const {
    double f = loss_and_gradient(*arch, x, *dataset, &grad);
    if (l2_penalty != 0.0) {
      f += l2_penalty * x.squaredNorm();
      grad += (2.0 * l2_penalty) * x;
    }
    return f;
  }
};

inline MinimizeResult minimize(const Architecture& arch, const Dataset& ds,
                               const Vec& start, const MinimizeConfig& cfg = {}) {
  ModelObjective obj{&arch, &ds, cfg.l2_penalty};
  auto res = minimize(obj, start, cfg);
  if (cfg.polish && res.converged &&
      arch.parameter_count() <= kHessianParameterCap) {
    Vec g(res.params.size());
    double f = obj(res.params, g);
    for (int it = 0; it < 3; ++it) {
      Mat h = hessian(arch, res.params, ds, cfg.l2_penalty);
      Vec xn = res.params - h.ldlt().solve(g);
      Vec gn(xn.size());
      if (!xn.allFinite()) break;
      const double fn = obj(xn, gn);
      if (!std::isfinite(fn) ||
          gn.lpNorm<Eigen::Infinity>() >= g.lpNorm<Eigen::Infinity>())
        break;
      res.params = xn;
      f = fn;
      g = gn;
    }
    res.loss = f;
    res.grad_norm = g.lpNorm<Eigen::Infinity>();
  }
  return res;
}

}  // namespace lossmap
