#include "lossmap/model.hpp"
#include "lossmap/symmetry.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

using namespace lossmap;

namespace {

Vec random_params(const Architecture& arch, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec p(arch.parameter_count());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = u(rng);
  return p;
}

Dataset make_dataset(const Mat& x, std::vector<int> labels) {
  Dataset ds;
  ds.features = x;
  ds.labels = std::move(labels);
  return ds;
}

// Slow, scalar reimplementation of the forward pass: explicit loops, no
// shared code with the library beyond the parameter layout contract.
std::vector<double> oracle_forward(const Architecture& arch, const Vec& params,
                                   const std::vector<double>& x) {
  std::vector<double> a = x;
  int off = 0;
  for (int l = 1; l <= static_cast<int>(arch.hidden.size()) + 1; ++l) {
    const int fan_in = static_cast<int>(a.size());
    const int units = l <= static_cast<int>(arch.hidden.size())
                          ? arch.hidden[l - 1]
                          : arch.output_dim;
    std::vector<double> z(units);
    for (int j = 0; j < units; ++j) {
      double s = 0.0;
      for (int i = 0; i < fan_in; ++i) s += params[off + j * (fan_in + 1) + i] * a[i];
      s += params[off + j * (fan_in + 1) + fan_in];
      z[j] = s;
    }
    off += units * (fan_in + 1);
    if (l <= static_cast<int>(arch.hidden.size())) {
      for (double& v : z) v = std::tanh(v);
      a = z;
    } else {
      a = z;
    }
  }
  double zmax = *std::max_element(a.begin(), a.end());
  double sum = 0.0;
  for (double v : a) sum += std::exp(v - zmax);
  std::vector<double> p(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) p[k] = std::exp(a[k] - zmax) / sum;
  return p;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  Architecture a{2, {5}, 2};
  CHECK(a.parameter_count() == (2 + 1) * 5 + (5 + 1) * 2);  // 27
  Architecture b{29, {3}, 2};
  CHECK(b.parameter_count() == (29 + 1) * 3 + (3 + 1) * 2);  // 98
  Architecture c{4, {3, 2}, 2};
  CHECK(c.parameter_count() == (4 + 1) * 3 + (3 + 1) * 2 + (2 + 1) * 2);
}

TEST_CASE("architecture validation rejects bad dimensions") {
  CHECK_THROWS_AS((Architecture{0, {5}, 2}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((Architecture{2, {5}, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((Architecture{2, {0}, 2}.validate()), std::invalid_argument);
}

TEST_CASE("edge index round trip is a bijection") {
  Architecture arch{3, {4, 2}, 2};
  for (int flat = 0; flat < arch.parameter_count(); ++flat) {
    EdgeIndex e = flat_to_edge(arch, flat);
    CHECK(edge_to_flat(arch, e) == flat);
  }
  CHECK_THROWS_AS(flat_to_edge(arch, -1), std::invalid_argument);
  CHECK_THROWS_AS(flat_to_edge(arch, arch.parameter_count()), std::invalid_argument);
  CHECK_THROWS_AS(edge_to_flat(arch, EdgeIndex{1, 3, 0, false}), std::invalid_argument);
}

TEST_CASE("zero parameters give uniform probabilities") {
  Architecture arch{2, {5}, 2};
  Vec p = Vec::Zero(arch.parameter_count());
  Mat x(3, 2);
  x << 0.1, 0.9, -2.0, 4.0, 0.0, 0.0;
  Mat probs = forward(arch, p, x);
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < probs.cols(); ++j)
      CHECK(probs(i, j) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("forward matches a scalar reimplementation") {
  Architecture arch{2, {5}, 2};
  Vec p = random_params(arch, 42);
  Mat x(4, 2);
  x << 0.3, 0.7, -1.2, 0.4, 2.0, -0.5, 0.0, 1.0;
  Mat probs = forward(arch, p, x);
  for (Eigen::Index i = 0; i < 4; ++i) {
    auto want = oracle_forward(arch, p, {x(i, 0), x(i, 1)});
    CHECK(probs(i, 0) == Catch::Approx(want[0]).margin(1e-12));
    CHECK(probs(i, 1) == Catch::Approx(want[1]).margin(1e-12));
  }
}

TEST_CASE("forward on a deeper net matches the scalar oracle") {
  Architecture arch{3, {4, 3}, 2};
  Vec p = random_params(arch, 7, 1.5);
  Mat x(2, 3);
  x << 0.5, -0.25, 1.0, -1.0, 2.0, 0.125;
  Mat probs = forward(arch, p, x);
  for (Eigen::Index i = 0; i < 2; ++i) {
    auto want = oracle_forward(arch, p, {x(i, 0), x(i, 1), x(i, 2)});
    CHECK(probs(i, 0) == Catch::Approx(want[0]).margin(1e-12));
    CHECK(probs(i, 1) == Catch::Approx(want[1]).margin(1e-12));
  }
}

TEST_CASE("probability rows sum to one") {
  Architecture arch{2, {5}, 3};
  Vec p = random_params(arch, 9, 20.0);  // large weights stress stability
  Mat x(5, 2);
  x << 10, -10, 1e3, 1e3, 0, 0, -5, 2, 3.5, -0.1;
  Mat probs = forward(arch, p, x);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    CHECK(probs.row(i).sum() == Catch::Approx(1.0).margin(1e-12));
    CHECK(probs.row(i).minCoeff() >= 0.0);
  }
}

TEST_CASE("forward rejects malformed inputs") {
  Architecture arch{2, {5}, 2};
  Vec p = Vec::Zero(arch.parameter_count());
  Mat bad_dim(1, 3);
  bad_dim.setZero();
  CHECK_THROWS_AS(forward(arch, p, bad_dim), std::invalid_argument);
  Vec short_p = Vec::Zero(5);
  Mat x = Mat::Zero(1, 2);
  CHECK_THROWS_AS(forward(arch, short_p, x), std::invalid_argument);
  Vec nan_p = p;
  nan_p[0] = std::nan("");
  CHECK_THROWS_AS(forward(arch, nan_p, x), std::invalid_argument);
}

TEST_CASE("zero parameters on a balanced dataset give ln 2") {
  Architecture arch{2, {5}, 2};
  Vec p = Vec::Zero(arch.parameter_count());
  Mat x(4, 2);
  x << 0, 0, 1, 0, 0, 1, 1, 1;
  auto ds = make_dataset(x, {0, 1, 0, 1});
  CHECK(loss(arch, p, ds) == Catch::Approx(std::log(2.0)).margin(1e-9));
}

TEST_CASE("loss matches per-example hand evaluation") {
  Architecture arch{2, {5}, 2};
  Vec p = random_params(arch, 314);
  Mat x(4, 2);
  x << 0.25, 0.5, 0.9, 0.1, -0.3, 0.8, 0.6, -0.6;
  std::vector<int> y{0, 1, 1, 0};
  auto ds = make_dataset(x, y);
  double want = 0.0;
  for (int i = 0; i < 4; ++i) {
    auto probs = oracle_forward(arch, p, {x(i, 0), x(i, 1)});
    want += -std::log(probs[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])]);
  }
  want /= 4.0;
  CHECK(loss(arch, p, ds) == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("loss rejects bad datasets") {
  Architecture arch{2, {5}, 2};
  Vec p = Vec::Zero(arch.parameter_count());
  Dataset empty;
  empty.features = Mat::Zero(0, 2);
  CHECK_THROWS(loss(arch, p, empty));
  Mat x = Mat::Zero(2, 2);
  auto bad_label = make_dataset(x, {0, 5});
  CHECK_THROWS_AS(loss(arch, p, bad_label), std::invalid_argument);
}

TEST_CASE("analytic gradient matches central differences") {
  Architecture arch{2, {5}, 2};
  Rng rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    Vec p = random_params(arch, 1000 + rep);
    Mat x(6, 2);
    std::vector<int> y(6);
    for (int i = 0; i < 6; ++i) {
      x(i, 0) = u(rng);
      x(i, 1) = u(rng);
      y[static_cast<std::size_t>(i)] = i % 2;
    }
    auto ds = make_dataset(x, y);
    Vec g = gradient(arch, p, ds);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double h = 1e-5;
      Vec pp = p, pm = p;
      pp[k] += h;
      pm[k] -= h;
      const double fd = (loss(arch, pp, ds) - loss(arch, pm, ds)) / (2 * h);
      const double denom = std::max(1.0, std::abs(fd));
      CHECK(std::abs(g[k] - fd) / denom < 1e-5);
    }
  }
}

TEST_CASE("zero parameters on a balanced dataset zero the output-bias gradient") {
  Architecture arch{2, {3}, 2};
  Mat x(4, 2);
  x << 0.5, 0.5, -0.5, -0.5, 0.25, -0.75, -0.25, 0.75;
  auto ds = make_dataset(x, {0, 1, 0, 1});  // balanced labels
  Vec g = gradient(arch, Vec::Zero(arch.parameter_count()), ds);
  for (int j = 0; j < 2; ++j) {
    const int flat = edge_to_flat(arch, EdgeIndex{2, 0, j, true});
    CHECK(std::abs(g[flat]) < 1e-12);
  }
}

TEST_CASE("forward and loss are invariant under the symmetry group") {
  Architecture arch{2, {5}, 2};
  Vec p = random_params(arch, 5);
  Mat x(3, 2);
  x << 0.2, 0.8, -0.4, 0.3, 0.9, -0.9;
  auto ds = make_dataset(x, {0, 1, 1});
  Mat probs = forward(arch, p, x);
  const double base_loss = loss(arch, p, ds);
  const double base_gnorm = gradient(arch, p, ds).norm();
  Rng rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    auto g = GroupElement::random(arch, rng);
    Vec q = apply_symmetry(arch, p, g);
    Mat probs2 = forward(arch, q, x);
    CHECK((probs - probs2).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(std::abs(loss(arch, q, ds) - base_loss) < 1e-10);
    CHECK(std::abs(gradient(arch, q, ds).norm() - base_gnorm) < 1e-10);
  }
}

TEST_CASE("finite-difference hessian recovers a quadratic") {
  // test hook: gradient of 0.5 * lambda * ||x||^2 is lambda * x
  const double lambda = 2.5;
  Vec x0(4);
  x0 << 0.3, -1.0, 2.0, 0.0;
  Mat h = fd_hessian([&](const Vec& v) { return Vec(lambda * v); }, x0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(h(i, j) == Catch::Approx(i == j ? lambda : 0.0).margin(1e-8));
}

TEST_CASE("hessian is symmetric and PSD at a strict quadratic minimum") {
  Architecture arch{2, {2}, 2};
  Vec p = random_params(arch, 21, 0.5);
  Mat x(4, 2);
  x << 0.1, 0.2, 0.8, 0.9, 0.3, 0.7, 0.6, 0.4;
  auto ds = make_dataset(x, {0, 1, 1, 0});
  Mat h = hessian(arch, p, ds);
  CHECK((h - h.transpose()).lpNorm<Eigen::Infinity>() == 0.0);  // symmetrized
  // with the ridge term the Hessian picks up +2*lambda on the diagonal
  Mat hr = hessian(arch, p, ds, 0.1);
  CHECK((hr - h).diagonal().minCoeff() == Catch::Approx(0.2).margin(1e-12));
}

TEST_CASE("hessian refuses oversized parameter vectors") {
  Architecture arch{60, {10}, 2};  // 632 parameters > 512 cap
  REQUIRE(arch.parameter_count() > kHessianParameterCap);
  Vec p = Vec::Zero(arch.parameter_count());
  Dataset ds;
  ds.features = Mat::Zero(2, 60);
  ds.labels = {0, 1};
  CHECK_THROWS_AS(hessian(arch, p, ds), std::invalid_argument);
}

TEST_CASE("auc on the worked examples") {
  CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  CHECK(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == Catch::Approx(0.75).margin(1e-15));
}

TEST_CASE("auc rejects degenerate label vectors") {
  CHECK_THROWS_AS(auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(auc({0.1, 0.2}, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(auc({0.1}, {0, 1}), std::invalid_argument);
}

TEST_CASE("auc equals brute-force pairwise counting") {
  Rng rng(12345);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> len(2, 12);
  std::uniform_int_distribution<int> quant(1, 4);  // forces score ties
  for (int rep = 0; rep < 500; ++rep) {
    const int n = len(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] =
          std::floor(u(rng) * 4 * quant(rng)) / 4.0;
      y[static_cast<std::size_t>(i)] = coin(rng);
      pos += y[static_cast<std::size_t>(i)];
    }
    if (pos == 0 || pos == n) continue;
    double wins = 0.0;
    int pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (y[static_cast<std::size_t>(i)] != 1 || y[static_cast<std::size_t>(j)] != 0)
          continue;
        ++pairs;
        if (s[static_cast<std::size_t>(i)] > s[static_cast<std::size_t>(j)])
          wins += 1.0;
        else if (s[static_cast<std::size_t>(i)] == s[static_cast<std::size_t>(j)])
          wins += 0.5;
      }
    CHECK(auc(s, y) == Catch::Approx(wins / pairs).margin(1e-12));
  }
}

TEST_CASE("model_auc scores by class-1 probability") {
  Architecture arch{1, {1}, 2};
  // single hidden unit, identity-ish mapping: larger x -> larger P(class 1)
  Vec p(arch.parameter_count());
  p << 1.0, 0.0,        // hidden: w=1 b=0
      -1.0, 0.0,        // output 0: w=-1 b=0
      1.0, 0.0;         // output 1: w=+1 b=0
  Mat x(4, 1);
  x << -2.0, -1.0, 1.0, 2.0;
  auto ds = make_dataset(x, {0, 0, 1, 1});
  CHECK(model_auc(arch, p, ds) == 1.0);
}
