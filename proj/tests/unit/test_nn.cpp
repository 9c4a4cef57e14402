#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "privleak/checkpoint.hpp"
#include "privleak/network.hpp"

using namespace privleak;

namespace {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(u(rng));
  return t;
}

// Direct sliding-window convolution over NHWC input and [k,k,c,f] weights.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Vec<double>& b, Index stride) {
  const Index n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const Index k = w.dim(0), f = w.dim(3);
  const Index oh = (h - k) / stride + 1, ow = (wd - k) / stride + 1;
  Tensor<double> y({n, oh, ow, f});
  for (Index s = 0; s < n; ++s)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index fo = 0; fo < f; ++fo) {
          double acc = b[fo];
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx)
              for (Index ci = 0; ci < c; ++ci)
                acc += x[((s * h + oy * stride + ky) * wd + ox * stride + kx) * c + ci] *
                       w[((ky * k + kx) * c + ci) * f + fo];
          y[((s * oh + oy) * ow + ox) * f + fo] = acc;
        }
  return y;
}

Tensor<double> pool_oracle(const Tensor<double>& x, Index k, bool max) {
  const Index n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const Index oh = (h - k) / k + 1, ow = (wd - k) / k + 1;
  Tensor<double> y({n, oh, ow, c});
  for (Index s = 0; s < n; ++s)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index ci = 0; ci < c; ++ci) {
          double acc = max ? -1e300 : 0.0;
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              const double v = x[((s * h + oy * k + ky) * wd + ox * k + kx) * c + ci];
              acc = max ? std::max(acc, v) : acc + v;
            }
          y[((s * oh + oy) * ow + ox) * c + ci] = max ? acc : acc / static_cast<double>(k * k);
        }
  return y;
}

// Mean loss at fixed dropout masks: a fresh rng with the same seed replays
// the same Bernoulli draws because mask sampling ignores activation values.
double loss_at(const Network<double>& net, const Tensor<double>& x, const std::vector<int>& labels, Mode mode,
               std::uint64_t mask_seed) {
  Rng rng(mask_seed);
  auto trace = forward(net, x, mode, rng);
  return loss(net, trace.output, labels);
}

double max_relative_error(const Network<double>& net, const Tensor<double>& x, const std::vector<int>& labels,
                          Mode mode, std::uint64_t mask_seed) {
  Rng rng(mask_seed);
  auto trace = forward(net, x, mode, rng);
  const auto analytic = backward(net, trace, labels);

  const double h = 1e-3;
  Network<double> probe = net;
  Vec<double> numeric(net.params.size());
  for (Index k = 0; k < net.params.size(); ++k) {
    const double keep = probe.params.values()[k];
    probe.params.values()[k] = keep + h;
    const double up = loss_at(probe, x, labels, mode, mask_seed);
    probe.params.values()[k] = keep - h;
    const double down = loss_at(probe, x, labels, mode, mask_seed);
    probe.params.values()[k] = keep;
    numeric[k] = (up - down) / (2 * h);
  }
  // Relative error per parameter tensor, in the Euclidean norm.
  double worst = 0.0;
  for (const auto& e : net.layout().entries()) {
    const auto a = analytic.values().segment(e.offset, e.size());
    const auto n = numeric.segment(e.offset, e.size());
    const double scale = std::max({a.norm(), n.norm(), 1e-12});
    worst = std::max(worst, (a - n).norm() / scale);
  }
  return worst;
}

// Distance of the evaluation point from the nearest kink: ReLU inputs from 0
// and maxpool winners from their runner-up. Central differences only measure
// the gradient where this exceeds the step's effect.
double kink_margin(const Network<double>& net, const ForwardTrace<double>& trace) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
    const auto& l = net.spec.layers[i];
    const auto& x = trace.layers[i].input;
    if (l.kind == LayerKind::relu) margin = std::min(margin, x.data().cwiseAbs().minCoeff());
    if (l.kind != LayerKind::maxpool2d) continue;
    const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3), k = l.kernel;
    for (Index s = 0; s < n; ++s)
      for (Index oy = 0; oy + k <= h; oy += k)
        for (Index ox = 0; ox + k <= w; ox += k)
          for (Index ch = 0; ch < c; ++ch) {
            std::vector<double> v;
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) v.push_back(x[((s * h + oy + ky) * w + ox + kx) * c + ch]);
            std::sort(v.rbegin(), v.rend());
            margin = std::min(margin, v[0] - v[1]);
          }
  }
  return margin;
}

NetworkSpec random_small_spec(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 3);
  const int kind = pick(rng);
  NetworkSpec spec;
  spec.name = "gradcheck";
  switch (kind) {
    case 0:  // 2-layer MLP
      spec.input_shape = {5};
      spec.layers = {LayerSpec::dense(7), LayerSpec::tanh(), LayerSpec::dense(4), LayerSpec::softmax()};
      break;
    case 1:  // conv + maxpool
      spec.input_shape = {6, 6, 2};
      spec.layers = {LayerSpec::conv2d(3, 3), LayerSpec::tanh(), LayerSpec::maxpool2d(2), LayerSpec::flatten(),
                     LayerSpec::dense(5), LayerSpec::softmax()};
      break;
    case 2:  // strided conv + avgpool + relu + dropout
      spec.input_shape = {7, 7, 1};
      spec.layers = {LayerSpec::dropout(0.3),  LayerSpec::conv2d(4, 3, 2), LayerSpec::relu(),
                     LayerSpec::avgpool2d(3),  LayerSpec::flatten(),       LayerSpec::dropout(0.5),
                     LayerSpec::dense(3),      LayerSpec::softmax()};
      break;
    default:  // sigmoid head
      spec.input_shape = {6};
      spec.layers = {LayerSpec::dense(8), LayerSpec::tanh(), LayerSpec::dense(8),
                     LayerSpec::tanh(),   LayerSpec::dense(1), LayerSpec::sigmoid()};
      break;
  }
  return spec;
}

}  // namespace

TEST_CASE("build_network is deterministic and shapes follow the spec") {
  const auto spec = lenet5({32, 32, 3}, false);
  const auto a = build_network<float>(spec, 7);
  const auto b = build_network<float>(spec, 7);
  CHECK(a.params.values() == b.params.values());
  CHECK(build_network<float>(spec, 8).params.values() != a.params.values());
  CHECK(output_dim(spec) == 10);
  CHECK(infer_shapes(spec).back() == Shape{10});

  NetworkSpec tiny{"tiny", {4}, {LayerSpec::dense(3), LayerSpec::softmax()}};
  const auto net = build_network<double>(tiny, 1);
  CHECK(net.params.tensor("dense0.weight").shape() == Shape{4, 3});
  const auto bias = net.params.tensor("dense0.bias");
  CHECK(bias.shape() == Shape{3});
  CHECK(bias.data().isZero(0.0));
}

TEST_CASE("shape-chain errors are descriptive") {
  NetworkSpec bad{"bad", {4, 4, 1}, {LayerSpec::conv2d(2, 5), LayerSpec::flatten(), LayerSpec::dense(10),
                                     LayerSpec::softmax()}};
  CHECK_THROWS_WITH_AS(build_network<float>(bad, 0), doctest::Contains("kernel 5 does not fit"), ShapeError);

  NetworkSpec no_flatten{"nf", {4, 4, 1}, {LayerSpec::dense(10), LayerSpec::softmax()}};
  CHECK_THROWS_AS(build_network<float>(no_flatten, 0), ShapeError);

  NetworkSpec inner_softmax{"is", {4}, {LayerSpec::softmax(), LayerSpec::dense(2), LayerSpec::softmax()}};
  CHECK_THROWS_WITH_AS(validate(inner_softmax), doctest::Contains("final layer"), ShapeError);

  NetworkSpec rate{"r", {4}, {LayerSpec::dropout(1.0), LayerSpec::dense(2), LayerSpec::softmax()}};
  CHECK_THROWS_AS(validate(rate), ShapeError);
}

TEST_CASE("zero weights give a uniform softmax") {
  auto net = build_network<float>(lenet5({32, 32, 1}, false), 3);
  net.params.values().setZero();
  Rng rng(0);
  auto trace = forward(net, random_tensor<float>({4, 32, 32, 1}, 9, 0.0, 1.0), Mode::eval, rng);
  for (Index i = 0; i < trace.output.size(); ++i) CHECK(trace.output[i] == doctest::Approx(0.1).epsilon(1e-7));
}

TEST_CASE("1x1 identity convolution reproduces its input") {
  NetworkSpec spec{"id", {2, 2, 1}, {LayerSpec::conv2d(1, 1), LayerSpec::flatten(), LayerSpec::dense(10),
                                     LayerSpec::softmax()}};
  auto net = build_network<double>(spec, 0);
  net.params.view("conv2d0.weight")[0] = 1.0;
  net.params.view("conv2d0.bias")[0] = 0.0;
  const auto x = random_tensor<double>({1, 2, 2, 1}, 4);
  Rng rng(0);
  auto trace = forward(net, x, Mode::eval, rng);
  // Input of the flatten layer is the conv output.
  CHECK(trace.layers[1].input.data() == x.data());
}

TEST_CASE("conv and pools match brute-force sliding windows") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x5 = random_tensor<double>({2, 5, 5, 2}, seed);
    NetworkSpec conv{"c", {5, 5, 2}, {LayerSpec::conv2d(3, 3), LayerSpec::flatten(), LayerSpec::dense(2),
                                      LayerSpec::softmax()}};
    auto net = build_network<double>(conv, seed);
    net.params.view("conv2d0.bias") = random_tensor<double>({3}, seed + 100).data();
    Rng rng(0);
    const auto trace = forward(net, x5, Mode::eval, rng);
    const auto expected = conv_oracle(x5, net.params.tensor("conv2d0.weight"), net.params.view("conv2d0.bias"), 1);
    CHECK((trace.layers[1].input.data() - expected.data()).cwiseAbs().maxCoeff() <= 1e-6);

    const auto x6 = random_tensor<double>({2, 6, 6, 3}, seed + 50);
    NetworkSpec strided{"s", {6, 6, 3}, {LayerSpec::conv2d(4, 2, 2), LayerSpec::flatten(), LayerSpec::dense(2),
                                         LayerSpec::softmax()}};
    auto snet = build_network<double>(strided, seed);
    const auto strace = forward(snet, x6, Mode::eval, rng);
    const auto sexp = conv_oracle(x6, snet.params.tensor("conv2d0.weight"), snet.params.view("conv2d0.bias"), 2);
    CHECK((strace.layers[1].input.data() - sexp.data()).cwiseAbs().maxCoeff() <= 1e-6);

    std::vector<Index> argmax;
    const auto mx = kernels::maxpool_forward(x6, {6, 6, 3, 2, 2}, argmax);
    CHECK((mx.data() - pool_oracle(x6, 2, true).data()).cwiseAbs().maxCoeff() <= 1e-6);
    const auto av = kernels::avgpool_forward(x6, {6, 6, 3, 3, 3});
    CHECK((av.data() - pool_oracle(x6, 3, false).data()).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("softmax rows are normalised in every mode") {
  const auto net = build_network<float>(lenet5({32, 32, 3}, true), 11);
  const auto x = random_tensor<float>({6, 32, 32, 3}, 12, 0.0, 1.0);
  for (Mode mode : {Mode::train, Mode::eval, Mode::mc}) {
    Rng rng(5);
    const auto trace = forward(net, x, mode, rng);
    const auto sums = trace.output.rows().rowwise().sum();
    for (Index r = 0; r < sums.size(); ++r) CHECK(std::abs(sums[r] - 1.0f) <= 1e-5f);
    CHECK((trace.output.data().array() >= 0.0f).all());
    for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
      const bool masked = mode != Mode::eval && net.spec.layers[i].kind == LayerKind::dropout;
      CHECK((trace.layers[i].mask.size() > 0) == masked);
    }
  }
}

TEST_CASE("eval mode ignores the rng") {
  const auto net = build_network<float>(lenet5({32, 32, 1}, true), 2);
  const auto x = random_tensor<float>({3, 32, 32, 1}, 1, 0.0, 1.0);
  Rng a(1), b(999);
  CHECK(forward(net, x, Mode::eval, a).output == forward(net, x, Mode::eval, b).output);
}

TEST_CASE("non-finite activations abort the pass") {
  auto net = build_network<float>(attack_mlp(), 0);
  net.params.values()[0] = std::numeric_limits<float>::quiet_NaN();
  Rng rng(0);
  CHECK_THROWS_AS(forward(net, random_tensor<float>({2, 10}, 0), Mode::eval, rng), NumericError);
}

TEST_CASE("cross-entropy reference values") {
  Tensor<double> onehot({1, 10});
  onehot[4] = 1.0;
  CHECK(cross_entropy(onehot, std::vector<int>{4}) == 0.0);
  CHECK(cross_entropy(Tensor<double>::constant({2, 10}, 0.1), std::vector<int>{0, 9}) ==
        doctest::Approx(std::log(10.0)));
  CHECK(cross_entropy(Tensor<double>::constant({1, 2}, 0.5), std::vector<int>{0}) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK_THROWS_AS(cross_entropy(onehot, std::vector<int>{10}), ConfigError);
  // Clamp keeps a zero-probability label finite.
  CHECK(cross_entropy(onehot, std::vector<int>{3}) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("exact one-hot predictions give zero gradients") {
  NetworkSpec spec{"onehot", {3}, {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(10), LayerSpec::softmax()}};
  auto net = build_network<double>(spec, 4);
  net.params.view("dense2.weight").setZero();
  auto bias = net.params.view("dense2.bias");
  bias.setZero();
  bias[6] = 1000.0;
  Rng rng(0);
  const auto trace = forward(net, random_tensor<double>({3, 3}, 2), Mode::eval, rng);
  const auto g = backward(net, trace, std::vector<int>{6, 6, 6});
  CHECK(g.values().isZero(0.0));
}

TEST_CASE("dense gradient equals X^T (P - Y) / B") {
  NetworkSpec spec{"dense", {3}, {LayerSpec::dense(4), LayerSpec::softmax()}};
  const auto net = build_network<double>(spec, 17);
  Tensor<double> x({2, 3}, (Vec<double>(6) << 0.5, -1.0, 2.0, 1.5, 0.25, -0.75).finished());
  const std::vector<int> labels{1, 3};
  Rng rng(0);
  const auto trace = forward(net, x, Mode::eval, rng);
  const auto g = backward(net, trace, labels);

  RowMat<double> y = RowMat<double>::Zero(2, 4);
  y(0, 1) = 1.0;
  y(1, 3) = 1.0;
  const RowMat<double> delta = trace.output.rows() - y;
  const RowMat<double> expected = x.rows().transpose() * delta / 2.0;
  const RowMat<double> got = Eigen::Map<const RowMat<double>>(g.view("dense0.weight").data(), 3, 4);
  CHECK((got - expected).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((g.view("dense0.bias") - delta.colwise().sum().transpose() / 2.0).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("backward matches central finite differences on random nets") {
  Rng meta(2024);
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const auto spec = random_small_spec(meta);
    const auto net = build_network<double>(spec, seed);
    const Index batch = 3;
    Shape in{batch};
    in.insert(in.end(), spec.input_shape.begin(), spec.input_shape.end());
    const Mode mode = has_dropout(spec) ? Mode::train : Mode::eval;
    const std::uint64_t mask_seed = seed * 31 + 7;
    Tensor<double> x;
    for (std::uint64_t draw = 0;; ++draw) {
      x = random_tensor<double>(in, seed * 1000 + draw);
      Rng rng(mask_seed);
      if (kink_margin(net, forward(net, x, mode, rng)) > 1e-2) break;
    }
    std::vector<int> labels;
    const Index classes = output_dim(spec);
    for (Index b = 0; b < batch; ++b) labels.push_back(static_cast<int>((seed + b) % (classes == 1 ? 2 : classes)));
    const double err = max_relative_error(net, x, labels, mode, mask_seed);
    CAPTURE(spec.layers.size());
    CAPTURE(seed);
    CHECK(err < 1e-4);
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("per-example gradients average to the batch gradient") {
  const auto net = build_network<double>(lenet5({32, 32, 1}, true), 5);
  const auto x = random_tensor<double>({4, 32, 32, 1}, 6, 0.0, 1.0);
  const std::vector<int> labels{0, 3, 3, 9};
  Rng rng(8);
  const auto trace = forward(net, x, Mode::train, rng);
  const auto mean = backward(net, trace, labels);
  const auto rows = per_example_gradients(net, trace, labels);
  CHECK(rows.rows() == 4);
  const Vec<double> avg = rows.colwise().mean().transpose();
  CHECK((avg - mean.values()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("backward rejects a trace from another network") {
  const auto a = build_network<double>(attack_mlp(), 1);
  const auto b = build_network<double>(attack_mlp(), 2);
  Rng rng(0);
  const auto trace = forward(a, random_tensor<double>({2, 10}, 3), Mode::eval, rng);
  CHECK_THROWS_AS(backward(b, trace, std::vector<int>{0, 1}), ShapeError);
  CHECK_THROWS_AS(backward(a, trace, std::vector<int>{0}), ShapeError);
}

TEST_CASE("inverted dropout") {
  const auto x = random_tensor<float>({3, 4}, 1);
  Rng rng(1);
  auto [y0, m0] = dropout_apply(x, 0.0, rng);
  CHECK(y0 == x);
  CHECK((m0.data().array() == 1.0f).all());

  Rng a(42), b(42);
  CHECK(dropout_apply(x, 0.5, a).second == dropout_apply(x, 0.5, b).second);

  CHECK_THROWS_AS(dropout_apply(x, 1.0, rng), ConfigError);

  // Expectation preserved: 1e5 scalar draws of x = 0.8.
  const Index n = 100000;
  const auto big = Tensor<double>::constant({n}, 0.8);
  Rng r(7);
  const auto y = dropout_apply(big, 0.5, r).first.data();
  const double mean = y.mean();
  const double std_err = std::sqrt((y.array() - mean).square().sum() / (n - 1)) / std::sqrt(double(n));
  CHECK(std::abs(mean - 0.8) <= 0.02 * 0.8);
  CHECK(std::abs(mean - 0.8) <= 3 * std_err);
}

TEST_CASE("mc_predict") {
  const auto x = random_tensor<float>({5, 32, 32, 1}, 3, 0.0, 1.0);
  Rng rng(0);

  auto zero_rate = lenet5({32, 32, 1}, true, 0.0, 0.0);
  const auto still = build_network<float>(zero_rate, 1);
  const auto eval = forward(still, x, Mode::eval, rng).output;
  for (int t : {1, 3, 7}) CHECK(mc_predict(still, x, t, rng).mean_probs == eval);

  const auto net = build_network<float>(lenet5({32, 32, 1}, true), 1);
  Rng a(99), b(99);
  const auto one = mc_predict(net, x, 1, a);
  CHECK(one.mean_probs == forward(net, x, Mode::mc, b).output);

  Rng c(3);
  const auto many = mc_predict(net, x, 16, c);
  for (Index r = 0; r < 5; ++r) {
    CHECK(std::abs(many.mean_probs.rows().row(r).sum() - 1.0f) <= 1e-5f);
    CHECK(many.entropy[r] >= 0.0f);
    CHECK(many.entropy[r] <= std::log(10.0f) + 1e-5f);
    CHECK(many.confidence[r] == many.mean_probs.rows().row(r).maxCoeff());
  }
  CHECK_THROWS_AS(mc_predict(net, x, 0, c), ConfigError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const auto net = build_network<float>(lenet5({32, 32, 3}, true), 77);
  std::stringstream buf;
  write_checkpoint(buf, net);
  const auto back = read_checkpoint(buf);
  CHECK(back.spec == net.spec);
  CHECK(back.seed == net.seed);
  CHECK(back.params.values() == net.params.values());
  const auto x = random_tensor<float>({2, 32, 32, 3}, 1, 0.0, 1.0);
  Rng r1(0), r2(0);
  CHECK(forward(net, x, Mode::eval, r1).output == forward(back, x, Mode::eval, r2).output);

  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "NNCP");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version, little-endian

  std::string corrupt = bytes;
  corrupt[0] = 'X';
  std::stringstream bad(corrupt);
  CHECK_THROWS_AS(read_checkpoint(bad), FormatError);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);

  std::string future = bytes;
  future[4] = 2;
  std::stringstream vers(future);
  CHECK_THROWS_AS(read_checkpoint(vers), SchemaError);
}
