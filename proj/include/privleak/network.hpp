#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "privleak/kernels.hpp"
#include "privleak/rng.hpp"
#include "privleak/spec.hpp"
#include "privleak/tensor.hpp"

namespace privleak {

/// Flat parameter (or gradient) vector addressed through a ParamLayout.
template <typename Scalar>
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), values_(Vec<Scalar>::Zero(layout_->total())) {}
  ParamSet(std::shared_ptr<const ParamLayout> layout, Vec<Scalar> values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (values_.size() != layout_->total())
      throw ShapeError("parameter vector has " + std::to_string(values_.size()) + " values, layout expects " +
                       std::to_string(layout_->total()));
  }

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
  Index size() const { return values_.size(); }

  Vec<Scalar>& values() { return values_; }
  const Vec<Scalar>& values() const { return values_; }

  Eigen::Map<Vec<Scalar>> view(std::string_view name) {
    const auto& e = layout_->find(name);
    return {values_.data() + e.offset, e.size()};
  }
  Eigen::Map<const Vec<Scalar>> view(std::string_view name) const {
    const auto& e = layout_->find(name);
    return {values_.data() + e.offset, e.size()};
  }
  Tensor<Scalar> tensor(std::string_view name) const {
    const auto& e = layout_->find(name);
    return Tensor<Scalar>(e.shape, values_.segment(e.offset, e.size()));
  }

  bool same_layout(const ParamSet& other) const {
    return layout_ == other.layout_ || (layout_ && other.layout_ && layout_->entries().size() ==
                                        other.layout_->entries().size() && layout_->total() == other.layout_->total());
  }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Vec<Scalar> values_;
};

template <typename Scalar>
struct Network {
  NetworkSpec spec;
  ParamSet<Scalar> params;
  std::uint64_t seed = 0;

  const ParamLayout& layout() const { return params.layout(); }

  template <typename To>
  Network<To> cast() const {
    return {spec, ParamSet<To>(params.layout_ptr(), params.values().template cast<To>()), seed};
  }
};

/// He-uniform for weight layers whose next non-dropout layer is a ReLU,
/// Glorot-uniform otherwise; zero biases. Weights are drawn in double so a
/// float and a double network built from one seed agree up to rounding.
template <typename Scalar>
Network<Scalar> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  auto layout = std::make_shared<const ParamLayout>(spec);
  Network<Scalar> net{spec, ParamSet<Scalar>(layout), seed};
  Rng rng(seed);
  const auto shapes = infer_shapes(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& p = layout->layer(i);
    if (!p) continue;
    std::size_t next = i + 1;
    while (next < spec.layers.size() && spec.layers[next].kind == LayerKind::dropout) ++next;
    const bool relu_follows = next < spec.layers.size() && spec.layers[next].kind == LayerKind::relu;

    const LayerSpec& l = spec.layers[i];
    double fan_in = static_cast<double>(p->rows);
    double fan_out = static_cast<double>(p->cols);
    if (l.kind == LayerKind::conv2d) fan_out *= static_cast<double>(l.kernel * l.kernel);
    const double limit = relu_follows ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = net.params.values().segment(p->weight_offset, p->rows * p->cols);
    for (Index k = 0; k < w.size(); ++k) w[k] = static_cast<Scalar>(dist(rng));
  }
  return net;
}

enum class Mode { train, eval, mc };

/// Inverted dropout: y = x * mask / (1 - p) with mask ~ Bernoulli(1 - p).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> dropout_apply(const Tensor<Scalar>& x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate " + std::to_string(p) + " is outside [0,1)");
  Tensor<Scalar> mask(x.shape());
  std::bernoulli_distribution keep(1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? Scalar(1) : Scalar(0);
  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - p));
  Tensor<Scalar> y(x.shape(), (x.data().array() * mask.data().array() * scale).matrix());
  return {std::move(y), std::move(mask)};
}

template <typename Scalar>
struct LayerCache {
  Tensor<Scalar> input;
  Tensor<Scalar> mask;
  RowMat<Scalar> cols;
  std::vector<Index> argmax;
};

/// Everything backward() needs from one forward pass.
template <typename Scalar>
struct ForwardTrace {
  Mode mode = Mode::eval;
  const ParamLayout* layout = nullptr;
  std::vector<LayerCache<Scalar>> layers;
  Tensor<Scalar> output;

  Index batch() const { return output.rank() ? output.dim(0) : 0; }
};

namespace detail {

inline kernels::Window window_for(const LayerSpec& l, const Shape& in) {
  return {in[0], in[1], in[2], l.kernel, l.stride};
}

inline Shape batched(Index batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace detail

/// Runs the network on a [B, ...input_shape] batch. In train and mc modes
/// dropout layers draw fresh masks from `rng`; eval mode is deterministic.
template <typename Scalar>
ForwardTrace<Scalar> forward(const Network<Scalar>& net, const Tensor<Scalar>& batch, Mode mode, Rng& rng) {
  const auto& spec = net.spec;
  const auto shapes = infer_shapes(spec);
  if (batch.rank() != static_cast<Index>(spec.input_shape.size()) + 1 ||
      !std::equal(spec.input_shape.begin(), spec.input_shape.end(), batch.shape().begin() + 1))
    throw ShapeError("batch shape " + to_string(batch.shape()) + " does not match input shape " +
                     to_string(spec.input_shape) + " of '" + spec.name + "'");
  const Index n = batch.dim(0);

  ForwardTrace<Scalar> trace;
  trace.mode = mode;
  trace.layout = &net.layout();
  trace.layers.resize(spec.layers.size());

  Tensor<Scalar> x = batch;
  const auto& theta = net.params.values();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    auto& cache = trace.layers[i];
    const Shape out_shape = detail::batched(n, shapes[i + 1]);
    Tensor<Scalar> y;
    switch (l.kind) {
      case LayerKind::conv2d: {
        const auto& p = *net.layout().layer(i);
        const auto w = detail::window_for(l, shapes[i]);
        cache.cols = kernels::im2col(x, w);
        Eigen::Map<const RowMat<Scalar>> weight(theta.data() + p.weight_offset, p.rows, p.cols);
        Eigen::Map<const Vec<Scalar>> bias(theta.data() + p.bias_offset, p.cols);
        y = Tensor<Scalar>(out_shape);
        Eigen::Map<RowMat<Scalar>> out(y.ptr(), cache.cols.rows(), p.cols);
        out.noalias() = cache.cols * weight;
        out.rowwise() += bias.transpose();
        break;
      }
      case LayerKind::dense: {
        const auto& p = *net.layout().layer(i);
        Eigen::Map<const RowMat<Scalar>> weight(theta.data() + p.weight_offset, p.rows, p.cols);
        Eigen::Map<const Vec<Scalar>> bias(theta.data() + p.bias_offset, p.cols);
        y = Tensor<Scalar>(out_shape);
        auto out = y.rows();
        out.noalias() = x.rows() * weight;
        out.rowwise() += bias.transpose();
        break;
      }
      case LayerKind::maxpool2d:
        y = kernels::maxpool_forward(x, detail::window_for(l, shapes[i]), cache.argmax);
        break;
      case LayerKind::avgpool2d:
        y = kernels::avgpool_forward(x, detail::window_for(l, shapes[i]));
        break;
      case LayerKind::relu:
        y = Tensor<Scalar>(out_shape, x.data().cwiseMax(Scalar(0)));
        break;
      case LayerKind::tanh:
        y = Tensor<Scalar>(out_shape, x.data().array().tanh().matrix());
        break;
      case LayerKind::sigmoid:
        y = Tensor<Scalar>(out_shape, (Scalar(1) / (Scalar(1) + (-x.data().array()).exp())).matrix());
        break;
      case LayerKind::softmax: {
        y = x;
        auto rows = y.rows();
        kernels::softmax_rows(rows);
        break;
      }
      case LayerKind::dropout:
        if (mode == Mode::eval) {
          y = x;
        } else {
          auto [out, mask] = dropout_apply(x, l.rate, rng);
          y = std::move(out);
          cache.mask = std::move(mask);
        }
        break;
      case LayerKind::flatten:
        y = x.reshaped(out_shape);
        break;
    }
    if (!y.all_finite())
      throw NumericError("non-finite activation at layer " + std::to_string(i) + " (" +
                         std::string(to_string(l.kind)) + ") of '" + spec.name + "'");
    cache.input = std::move(x);
    x = std::move(y);
  }
  trace.output = std::move(x);
  return trace;
}

namespace detail {

/// Shared backward sweep. With `per_example` set, row i receives the gradient
/// of example i's own loss; otherwise `mean` receives the batch-mean gradient.
template <typename Scalar>
void backprop(const Network<Scalar>& net, const ForwardTrace<Scalar>& trace, std::span<const int> labels,
              Vec<Scalar>* mean, RowMat<Scalar>* per_example) {
  const auto& spec = net.spec;
  if (trace.layout != &net.layout() || trace.layers.size() != spec.layers.size())
    throw ShapeError("forward trace does not belong to network '" + spec.name + "'");
  const Index n = trace.batch();
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(n));

  const LayerKind head = spec.layers.back().kind;
  const Index classes = trace.output.row_size();
  RowMat<Scalar> target = RowMat<Scalar>::Zero(n, classes);
  for (Index b = 0; b < n; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (head == LayerKind::softmax) {
      if (y < 0 || y >= classes)
        throw ConfigError("label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
      target(b, y) = Scalar(1);
    } else {
      if (y != 0 && y != 1) throw ConfigError("binary label must be 0 or 1, got " + std::to_string(y));
      target(b, 0) = static_cast<Scalar>(y);
    }
  }

  // Softmax + cross-entropy and sigmoid + binary cross-entropy share the
  // logit gradient (p - y).
  Tensor<Scalar> g(trace.output.shape());
  g.rows() = trace.output.rows() - target;
  if (mean) {
    g.data() /= static_cast<Scalar>(n);
    *mean = Vec<Scalar>::Zero(net.layout().total());
  } else {
    *per_example = RowMat<Scalar>::Zero(n, net.layout().total());
  }

  const auto& theta = net.params.values();
  const auto shapes = infer_shapes(spec);
  for (std::size_t i = spec.layers.size() - 1; i-- > 0;) {
    const LayerSpec& l = spec.layers[i];
    const auto& cache = trace.layers[i];
    const bool need_dx = i > 0;
    switch (l.kind) {
      case LayerKind::dense: {
        const auto& p = *net.layout().layer(i);
        Eigen::Map<const RowMat<Scalar>> weight(theta.data() + p.weight_offset, p.rows, p.cols);
        const auto x = cache.input.rows();
        const auto gy = g.rows();
        if (mean) {
          Eigen::Map<RowMat<Scalar>> dw(mean->data() + p.weight_offset, p.rows, p.cols);
          dw.noalias() = x.transpose() * gy;
          mean->segment(p.bias_offset, p.cols) = gy.colwise().sum().transpose();
        } else {
          for (Index b = 0; b < n; ++b) {
            Eigen::Map<RowMat<Scalar>> dw(per_example->row(b).data() + p.weight_offset, p.rows, p.cols);
            dw.noalias() = x.row(b).transpose() * gy.row(b);
            per_example->row(b).segment(p.bias_offset, p.cols) = gy.row(b);
          }
        }
        if (need_dx) {
          Tensor<Scalar> dx(cache.input.shape());
          dx.rows().noalias() = gy * weight.transpose();
          g = std::move(dx);
        }
        break;
      }
      case LayerKind::conv2d: {
        const auto& p = *net.layout().layer(i);
        Eigen::Map<const RowMat<Scalar>> weight(theta.data() + p.weight_offset, p.rows, p.cols);
        Eigen::Map<const RowMat<Scalar>> gy(g.ptr(), cache.cols.rows(), p.cols);
        if (mean) {
          Eigen::Map<RowMat<Scalar>> dw(mean->data() + p.weight_offset, p.rows, p.cols);
          dw.noalias() = cache.cols.transpose() * gy;
          mean->segment(p.bias_offset, p.cols) = gy.colwise().sum().transpose();
        } else {
          const Index positions = cache.cols.rows() / n;
          for (Index b = 0; b < n; ++b) {
            Eigen::Map<RowMat<Scalar>> dw(per_example->row(b).data() + p.weight_offset, p.rows, p.cols);
            dw.noalias() =
                cache.cols.middleRows(b * positions, positions).transpose() * gy.middleRows(b * positions, positions);
            per_example->row(b).segment(p.bias_offset, p.cols) =
                gy.middleRows(b * positions, positions).colwise().sum();
          }
        }
        if (need_dx) {
          RowMat<Scalar> dcols = gy * weight.transpose();
          g = kernels::col2im(dcols, window_for(l, shapes[i]), n);
        }
        break;
      }
      case LayerKind::maxpool2d:
        if (need_dx) g = kernels::maxpool_backward(g, cache.argmax, cache.input.shape());
        break;
      case LayerKind::avgpool2d:
        if (need_dx) g = kernels::avgpool_backward(g, window_for(l, shapes[i]), cache.input.shape());
        break;
      case LayerKind::relu:
        g.data() = (cache.input.data().array() > Scalar(0)).select(g.data(), Scalar(0));
        break;
      case LayerKind::tanh:
        g.data().array() *= Scalar(1) - cache.input.data().array().tanh().square();
        break;
      case LayerKind::dropout:
        if (trace.mode != Mode::eval)
          g.data().array() *= cache.mask.data().array() * static_cast<Scalar>(1.0 / (1.0 - l.rate));
        break;
      case LayerKind::flatten:
        g = g.reshaped(cache.input.shape());
        break;
      case LayerKind::softmax:
      case LayerKind::sigmoid:
        throw ShapeError("probability head in a non-final position of '" + spec.name + "'");
    }
  }
}

}  // namespace detail

/// Gradient of the batch-mean loss (cross-entropy for softmax heads, binary
/// cross-entropy for sigmoid heads), reusing the trace's dropout masks.
template <typename Scalar>
ParamSet<Scalar> backward(const Network<Scalar>& net, const ForwardTrace<Scalar>& trace,
                          std::span<const int> labels) {
  Vec<Scalar> grad;
  detail::backprop<Scalar>(net, trace, labels, &grad, nullptr);
  return ParamSet<Scalar>(net.params.layout_ptr(), std::move(grad));
}

/// Row i holds the flat gradient of example i's own loss (not divided by B).
template <typename Scalar>
RowMat<Scalar> per_example_gradients(const Network<Scalar>& net, const ForwardTrace<Scalar>& trace,
                                     std::span<const int> labels) {
  RowMat<Scalar> grads;
  detail::backprop<Scalar>(net, trace, labels, nullptr, &grads);
  return grads;
}

/// Mean of -log p[label] with p clamped to at least 1e-12.
template <typename Scalar>
double cross_entropy(const Tensor<Scalar>& probs, std::span<const int> labels) {
  const Index n = probs.dim(0), classes = probs.row_size();
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("label count does not match batch");
  double total = 0.0;
  for (Index b = 0; b < n; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes)
      throw ConfigError("label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
    total -= std::log(std::max(static_cast<double>(probs.rows()(b, y)), 1e-12));
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

template <typename Scalar>
double binary_cross_entropy(const Tensor<Scalar>& probs, std::span<const int> labels) {
  const Index n = probs.dim(0);
  if (static_cast<Index>(labels.size()) != n || probs.row_size() != 1)
    throw ShapeError("binary cross-entropy needs [B,1] probabilities and B labels");
  double total = 0.0;
  for (Index b = 0; b < n; ++b) {
    const double p = probs[b];
    total -= labels[static_cast<std::size_t>(b)] ? std::log(std::max(p, 1e-12)) : std::log(std::max(1.0 - p, 1e-12));
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

/// Loss matching the network's head.
template <typename Scalar>
double loss(const Network<Scalar>& net, const Tensor<Scalar>& probs, std::span<const int> labels) {
  return net.spec.layers.back().kind == LayerKind::sigmoid ? binary_cross_entropy(probs, labels)
                                                            : cross_entropy(probs, labels);
}

/// Eval-mode probabilities for any number of rows, processed in chunks.
template <typename Scalar>
Tensor<Scalar> predict(const Network<Scalar>& net, const Tensor<Scalar>& inputs, Index chunk = 500) {
  Rng unused(0);
  const Index n = inputs.dim(0);
  Tensor<Scalar> out({n, output_dim(net.spec)});
  for (Index begin = 0; begin < n; begin += chunk) {
    const Index count = std::min(chunk, n - begin);
    auto trace = forward(net, slice_rows(inputs, begin, count), Mode::eval, unused);
    out.rows().middleRows(begin, count) = trace.output.rows();
  }
  return out;
}

template <typename Scalar>
double accuracy(const Tensor<Scalar>& probs, std::span<const int> labels) {
  const auto rows = probs.rows();
  Index correct = 0;
  for (Index b = 0; b < rows.rows(); ++b) {
    Index arg = 0;
    rows.row(b).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(b)];
  }
  return rows.rows() ? static_cast<double>(correct) / static_cast<double>(rows.rows()) : 0.0;
}

template <typename Scalar>
struct McPrediction {
  Tensor<Scalar> mean_probs;
  Vec<Scalar> confidence;
  Vec<Scalar> entropy;
};

/// Monte Carlo dropout: average of T mc-mode passes, with per-row max
/// probability and predictive entropy.
template <typename Scalar>
McPrediction<Scalar> mc_predict(const Network<Scalar>& net, const Tensor<Scalar>& batch, int samples, Rng& rng) {
  if (samples < 1) throw ConfigError("mc_predict needs at least one sample, got " + std::to_string(samples));
  Eigen::MatrixXd sum;
  for (int t = 0; t < samples; ++t) {
    auto trace = forward(net, batch, Mode::mc, rng);
    const Eigen::MatrixXd p = trace.output.rows().template cast<double>();
    if (t == 0)
      sum = p;
    else
      sum += p;
  }
  sum /= static_cast<double>(samples);

  McPrediction<Scalar> out;
  out.mean_probs = Tensor<Scalar>({sum.rows(), sum.cols()});
  out.mean_probs.rows() = sum.cast<Scalar>();
  out.confidence = sum.rowwise().maxCoeff().cast<Scalar>();
  out.entropy.resize(sum.rows());
  for (Index r = 0; r < sum.rows(); ++r) {
    double h = 0.0;
    for (Index c = 0; c < sum.cols(); ++c)
      if (sum(r, c) > 0.0) h -= sum(r, c) * std::log(sum(r, c));
    out.entropy[r] = static_cast<Scalar>(std::max(h, 0.0));
  }
  return out;
}

}  // namespace privleak
