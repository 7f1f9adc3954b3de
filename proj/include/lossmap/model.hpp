#pragma once

#include "lossmap/common.hpp"
#include "lossmap/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace lossmap {

// Feed-forward classifier: tanh hidden layers, softmax output, mean
// cross-entropy loss. Parameters are stored flat, layer-major; per unit the
// incoming weights come first, then the bias.
struct Architecture {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 2;

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("architecture: input_dim >= 1");
    if (output_dim < 2) throw std::invalid_argument("architecture: output_dim >= 2");
    for (int n : hidden)
      if (n < 1) throw std::invalid_argument("architecture: hidden width >= 1");
  }

  // Weight layers are numbered 1..H+1; layer H+1 is the output layer.
  int n_weight_layers() const { return static_cast<int>(hidden.size()) + 1; }

  int layer_units(int layer) const {
    return layer <= static_cast<int>(hidden.size()) ? hidden[layer - 1] : output_dim;
  }

  int layer_fan_in(int layer) const {
    return layer == 1 ? input_dim : layer_units(layer - 1);
  }

  int layer_offset(int layer) const {
    int off = 0;
    for (int l = 1; l < layer; ++l)
      off += (layer_fan_in(l) + 1) * layer_units(l);
    return off;
  }

  int parameter_count() const {
    return layer_offset(n_weight_layers() + 1);
  }

  bool operator==(const Architecture&) const = default;
};

struct EdgeIndex {
  int layer = 1;      // 1..H+1
  int from_node = 0;  // 0-based node in the previous layer; ignored for biases
  int to_node = 0;    // 0-based node in `layer`
  bool is_bias = false;

  bool operator==(const EdgeIndex&) const = default;
};

inline int edge_to_flat(const Architecture& arch, const EdgeIndex& e) {
  if (e.layer < 1 || e.layer > arch.n_weight_layers())
    throw std::invalid_argument("edge: layer out of range");
  const int fan_in = arch.layer_fan_in(e.layer);
  if (e.to_node < 0 || e.to_node >= arch.layer_units(e.layer))
    throw std::invalid_argument("edge: to_node out of range");
  if (!e.is_bias && (e.from_node < 0 || e.from_node >= fan_in))
    throw std::invalid_argument("edge: from_node out of range");
  return arch.layer_offset(e.layer) + e.to_node * (fan_in + 1) +
         (e.is_bias ? fan_in : e.from_node);
}

inline EdgeIndex flat_to_edge(const Architecture& arch, int flat) {
  if (flat < 0 || flat >= arch.parameter_count())
    throw std::invalid_argument("edge: flat index out of range");
  for (int l = 1; l <= arch.n_weight_layers(); ++l) {
    const int fan_in = arch.layer_fan_in(l);
    const int span = (fan_in + 1) * arch.layer_units(l);
    const int off = arch.layer_offset(l);
    if (flat < off + span) {
      int rel = flat - off;
      EdgeIndex e;
      e.layer = l;
      e.to_node = rel / (fan_in + 1);
      int k = rel % (fan_in + 1);
      e.is_bias = (k == fan_in);
      e.from_node = e.is_bias ? 0 : k;
      return e;
    }
  }
  throw std::logic_error("flat_to_edge: unreachable");
}

namespace detail {

// View of one layer's parameters as a (fan_in x units) weight matrix plus bias.
struct LayerView {
  Mat weights;  // fan_in x units
  Vec bias;     // units
};

inline LayerView layer_view(const Architecture& arch, const Vec& params, int layer) {
  const int fan_in = arch.layer_fan_in(layer);
  const int units = arch.layer_units(layer);
  const int off = arch.layer_offset(layer);
  LayerView v;
  v.weights.resize(fan_in, units);
  v.bias.resize(units);
  for (int j = 0; j < units; ++j) {
    const int base = off + j * (fan_in + 1);
    for (int i = 0; i < fan_in; ++i) v.weights(i, j) = params[base + i];
    v.bias[j] = params[base + fan_in];
  }
  return v;
}

inline void write_layer(const Architecture& arch, Vec& params, int layer,
                        const Mat& weights, const Vec& bias) {
  const int fan_in = arch.layer_fan_in(layer);
  const int units = arch.layer_units(layer);
  const int off = arch.layer_offset(layer);
  for (int j = 0; j < units; ++j) {
    const int base = off + j * (fan_in + 1);
    for (int i = 0; i < fan_in; ++i) params[base + i] = weights(i, j);
    params[base + fan_in] = bias[j];
  }
}

inline void check_params(const Architecture& arch, const Vec& params) {
  if (params.size() != arch.parameter_count())
    throw std::invalid_argument("params: length mismatch with architecture");
  if (!params.allFinite())
    throw std::invalid_argument("params: non-finite entry");
}

}  // namespace detail

inline Mat forward(const Architecture& arch, const Vec& params, const Mat& inputs) {
  detail::check_params(arch, params);
  if (inputs.cols() != arch.input_dim)
    throw std::invalid_argument("forward: input dimension mismatch");
  if (!inputs.allFinite())
    throw std::invalid_argument("forward: non-finite input");

  Mat a = inputs;
  const int H = static_cast<int>(arch.hidden.size());
  for (int l = 1; l <= H; ++l) {
    auto v = detail::layer_view(arch, params, l);
    a = ((a * v.weights).rowwise() + v.bias.transpose()).array().tanh().matrix();
  }
  auto out = detail::layer_view(arch, params, H + 1);
  Mat z = (a * out.weights).rowwise() + out.bias.transpose();
  // row-max subtraction keeps the softmax stable
  Vec rmax = z.rowwise().maxCoeff();
  Mat e = (z.colwise() - rmax).array().exp();
  Vec sums = e.rowwise().sum();
  return e.array().colwise() / sums.array();
}

// Loss plus analytic backpropagation gradient in one pass.
inline double loss_and_gradient(const Architecture& arch, const Vec& params,
                                const Dataset& ds, Vec* grad_out) {
  detail::check_params(arch, params);
  ds.validate();
  if (ds.size() == 0) throw std::invalid_argument("loss: empty dataset");
  if (ds.dim() != arch.input_dim)
    throw std::invalid_argument("loss: dataset dimension mismatch");
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (ds.labels[i] >= arch.output_dim)
      throw std::invalid_argument("loss: label out of range at index " +
                                  std::to_string(i));

  const int H = static_cast<int>(arch.hidden.size());
  const auto N = ds.size();
  std::vector<Mat> activations;  // activations[l] is the input to layer l+1
  activations.reserve(H + 1);
  activations.push_back(ds.features);
  std::vector<detail::LayerView> views;
  views.reserve(H + 1);
  for (int l = 1; l <= H; ++l) {
    views.push_back(detail::layer_view(arch, params, l));
    const auto& v = views.back();
    activations.push_back(
        ((activations.back() * v.weights).rowwise() + v.bias.transpose())
            .array().tanh().matrix());
  }
  views.push_back(detail::layer_view(arch, params, H + 1));
  const auto& out = views.back();
  Mat z = (activations.back() * out.weights).rowwise() + out.bias.transpose();

  // mean of log-sum-exp(z) - z[label]
  Vec rmax = z.rowwise().maxCoeff();
  Mat shifted = z.colwise() - rmax;
  Mat e = shifted.array().exp();
  Vec sums = e.rowwise().sum();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    double li = std::log(sums[i]) - shifted(i, ds.labels[i]);
    if (!std::isfinite(li))
      throw std::runtime_error("loss: non-finite value at example " + std::to_string(i));
    loss += li;
  }
  loss /= static_cast<double>(N);

  if (grad_out) {
    Vec& g = *grad_out;
    g.setZero(arch.parameter_count());
    Mat probs = e.array().colwise() / sums.array();
    Mat delta = probs;  // (P - onehot) / N
    for (Eigen::Index i = 0; i < N; ++i) delta(i, ds.labels[i]) -= 1.0;
    delta /= static_cast<double>(N);
    for (int l = H + 1; l >= 1; --l) {
      Mat dw = activations[l - 1].transpose() * delta;
      Vec db = delta.colwise().sum();
      const int fan_in = arch.layer_fan_in(l);
      const int off = arch.layer_offset(l);
      for (int j = 0; j < arch.layer_units(l); ++j) {
        const int base = off + j * (fan_in + 1);
        for (int i = 0; i < fan_in; ++i) g[base + i] = dw(i, j);
        g[base + fan_in] = db[j];
      }
      if (l > 1) {
        Mat da = delta * views[l - 1].weights.transpose();
        delta = da.array() * (1.0 - activations[l - 1].array().square());
      }
    }
  }
  return loss;
}

inline double loss(const Architecture& arch, const Vec& params, const Dataset& ds) {
  return loss_and_gradient(arch, params, ds, nullptr);
}

inline Vec gradient(const Architecture& arch, const Vec& params, const Dataset& ds) {
  Vec g;
  loss_and_gradient(arch, params, ds, &g);
  return g;
}

// Central finite differences of an arbitrary gradient function, symmetrized.
// Step is 1e-5 * max(1, |x_i|) per component.
template <class GradFn>
Mat fd_hessian(GradFn&& grad, const Vec& x) {
  const auto p = x.size();
  Mat h(p, p);
  Vec xp = x, xm = x;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double step = 1e-5 * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + step;
    xm[i] = x[i] - step;
    Vec gp = grad(xp);
    Vec gm = grad(xm);
    h.col(i) = (gp - gm) / (2.0 * step);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return 0.5 * (h + h.transpose());
}

inline constexpr int kHessianParameterCap = 512;

inline Mat hessian(const Architecture& arch, const Vec& params, const Dataset& ds,
                   double l2_penalty = 0.0) {
  if (arch.parameter_count() > kHessianParameterCap)
    throw std::invalid_argument(
        "hessian: parameter count exceeds dense cap; an iterative eigensolver "
        "would be required");
  Mat h = fd_hessian([&](const Vec& p) { return gradient(arch, p, ds); }, params);
  if (l2_penalty != 0.0) h.diagonal().array() += 2.0 * l2_penalty;
  return h;
}

// Mann-Whitney AUC with ties counted as half, via average ranks.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: size mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += (y == 1);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Score used throughout: predicted probability of class 1.
inline double model_auc(const Architecture& arch, const Vec& params, const Dataset& ds) {
  Mat probs = forward(arch, params, ds.features);
  std::vector<double> scores(static_cast<std::size_t>(ds.size()));
  for (Eigen::Index i = 0; i < ds.size(); ++i) scores[i] = probs(i, 1);
  return auc(scores, ds.labels);
}

}  // namespace lossmap
