#pragma once

#include "lossmap/model.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

namespace lossmap {

// Hidden-unit permutation and sign-flip group. Output-layer permutations are
// excluded; they change which logit is which class.
struct GroupElement {
  // one entry per hidden layer: unit j moves to position perm[j], scaled by sign[j]
  std::vector<std::vector<int>> perms;
  std::vector<std::vector<int>> signs;  // entries in {-1, +1}

  static GroupElement identity(const Architecture& arch) {
    GroupElement g;
    for (int n : arch.hidden) {
      std::vector<int> p(n);
      std::iota(p.begin(), p.end(), 0);
      g.perms.push_back(std::move(p));
      g.signs.emplace_back(n, 1);
    }
    return g;
  }

  static GroupElement random(const Architecture& arch, Rng& rng) {
    GroupElement g = identity(arch);
    for (std::size_t l = 0; l < g.perms.size(); ++l) {
      std::shuffle(g.perms[l].begin(), g.perms[l].end(), rng);
      for (auto& s : g.signs[l]) s = (rng() & 1) ? 1 : -1;
    }
    return g;
  }

  GroupElement inverse() const {
    GroupElement g = *this;
    for (std::size_t l = 0; l < perms.size(); ++l) {
      for (std::size_t j = 0; j < perms[l].size(); ++j) {
        g.perms[l][perms[l][j]] = static_cast<int>(j);
        g.signs[l][perms[l][j]] = signs[l][j];
      }
    }
    return g;
  }
};

using BigInt = boost::multiprecision::cpp_int;

// |G| = prod over hidden layers of n_l! * 2^n_l
inline BigInt group_order(const Architecture& arch) {
  BigInt order = 1;
  for (int n : arch.hidden) {
    BigInt f = 1;
    for (int k = 2; k <= n; ++k) f *= k;
    order *= f << n;
  }
  return order;
}

inline Vec apply_symmetry(const Architecture& arch, const Vec& params,
                          const GroupElement& g) {
  detail::check_params(arch, params);
  const int H = static_cast<int>(arch.hidden.size());
  if (static_cast<int>(g.perms.size()) != H ||
      static_cast<int>(g.signs.size()) != H)
    throw std::invalid_argument("group element: shape mismatch with architecture");

  std::vector<detail::LayerView> layers;
  for (int l = 1; l <= H + 1; ++l)
    layers.push_back(detail::layer_view(arch, params, l));

  for (int l = 0; l < H; ++l) {
    const auto& perm = g.perms[l];
    const auto& sign = g.signs[l];
    const int n = arch.hidden[l];
    if (static_cast<int>(perm.size()) != n || static_cast<int>(sign.size()) != n)
      throw std::invalid_argument("group element: layer width mismatch");

    Mat w = layers[l].weights;
    Vec b = layers[l].bias;
    Mat w_next = layers[l + 1].weights;
    for (int j = 0; j < n; ++j) {
      const double s = static_cast<double>(sign[j]);
      layers[l].weights.col(perm[j]) = s * w.col(j);
      layers[l].bias[perm[j]] = s * b[j];
      layers[l + 1].weights.row(perm[j]) = s * w_next.row(j);
    }
  }

  Vec out(params.size());
  for (int l = 1; l <= H + 1; ++l)
    detail::write_layer(arch, out, l, layers[l - 1].weights, layers[l - 1].bias);
  return out;
}

namespace detail {

// Sign rule: make the largest-magnitude incoming weight positive (ties go to
// the earliest index); all-zero incoming vectors fall back to the bias, then
// the outgoing weights, then +1.
inline int canonical_sign(const Vec& incoming, double bias, const Vec& outgoing) {
  int best = -1;
  double best_abs = 0.0;
  for (Eigen::Index i = 0; i < incoming.size(); ++i) {
    if (std::abs(incoming[i]) > best_abs) {
      best_abs = std::abs(incoming[i]);
      best = static_cast<int>(i);
    }
  }
  if (best >= 0) return incoming[best] > 0.0 ? 1 : -1;
  if (bias != 0.0) return bias > 0.0 ? 1 : -1;
  for (Eigen::Index i = 0; i < outgoing.size(); ++i) {
    if (outgoing[i] != 0.0) return outgoing[i] > 0.0 ? 1 : -1;
  }
  return 1;
}

}  // namespace detail

// Deterministic orbit representative: per hidden layer, fix unit signs, then
// sort units by descending norm of the signed incoming-weights-plus-bias
// vector, ties broken lexicographically. Layers are processed from the input
// side so the sign/permutation applied to layer l is reflected in layer l+1
// before that layer is canonicalized.
inline Vec canonicalize(const Architecture& arch, const Vec& params) {
  detail::check_params(arch, params);
  Vec p = params;
  const int H = static_cast<int>(arch.hidden.size());
  for (int l = 0; l < H; ++l) {
    const int n = arch.hidden[l];
    auto here = detail::layer_view(arch, p, l + 1);
    auto next = detail::layer_view(arch, p, l + 2);

    GroupElement g = GroupElement::identity(arch);
    for (int j = 0; j < n; ++j)
      g.signs[l][j] = detail::canonical_sign(here.weights.col(j), here.bias[j],
                                             next.weights.row(j).transpose());

    // keys: signed incoming weights + bias per unit; the signed outgoing row
    // is appended as a final tie-break so identical twin units still order
    // deterministically
    const Eigen::Index in_len = here.weights.rows() + 1;
    std::vector<Vec> keys(n);
    for (int j = 0; j < n; ++j) {
      Vec k(in_len + next.weights.cols());
      k.head(here.weights.rows()) = g.signs[l][j] * here.weights.col(j);
      k[here.weights.rows()] = g.signs[l][j] * here.bias[j];
      k.tail(next.weights.cols()) = g.signs[l][j] * next.weights.row(j).transpose();
      keys[j] = std::move(k);
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double na = keys[a].head(in_len).norm();
      const double nb = keys[b].head(in_len).norm();
      if (na != nb) return na > nb;
      return std::lexicographical_compare(keys[a].data(), keys[a].data() + keys[a].size(),
                                          keys[b].data(), keys[b].data() + keys[b].size());
    });
    for (int pos = 0; pos < n; ++pos) g.perms[l][order[pos]] = pos;
    p = apply_symmetry(arch, p, g);
  }
  return p;
}

// All |G| group elements; only sensible for small hidden layers.
inline std::vector<GroupElement> enumerate_group(const Architecture& arch) {
  std::vector<GroupElement> elems = {GroupElement::identity(arch)};
  for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
    const int n = arch.hidden[l];
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> layer_elems;
    do {
      for (int mask = 0; mask < (1 << n); ++mask) {
        std::vector<int> sign(n);
        for (int j = 0; j < n; ++j) sign[j] = (mask >> j) & 1 ? -1 : 1;
        layer_elems.emplace_back(perm, sign);
      }
    } while (std::next_permutation(perm.begin(), perm.end()));

    std::vector<GroupElement> expanded;
    expanded.reserve(elems.size() * layer_elems.size());
    for (const auto& base : elems) {
      for (const auto& [pm, sg] : layer_elems) {
        GroupElement g = base;
        g.perms[l] = pm;
        g.signs[l] = sg;
        expanded.push_back(std::move(g));
      }
    }
    elems = std::move(expanded);
  }
  return elems;
}

inline bool are_equivalent(const Architecture& arch, const Vec& p1, const Vec& p2,
                           double tol) {
  if (tol <= 0.0) throw std::invalid_argument("are_equivalent: tol must be positive");
  Vec c1 = canonicalize(arch, p1);
  Vec c2 = canonicalize(arch, p2);
  const double dist = (c1 - c2).lpNorm<Eigen::Infinity>();
  if (dist <= tol) return true;
  // Near-tie instability in the sort can make canonical forms of equivalent
  // points diverge; fall back to explicit enumeration for small groups.
  if (dist < 10.0 * tol && arch.hidden.size() == 1 && arch.hidden[0] <= 6) {
    for (const auto& g : enumerate_group(arch)) {
      if ((apply_symmetry(arch, p2, g) - p1).lpNorm<Eigen::Infinity>() <= tol)
        return true;
    }
  }
  return false;
}

}  // namespace lossmap
