#include "privleak/spec.hpp"

#include <array>
#include <utility>

namespace privleak {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 10> kKindNames{{
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::maxpool2d, "maxpool2d"},
    {LayerKind::avgpool2d, "avgpool2d"},
    {LayerKind::dense, "dense"},
    {LayerKind::relu, "relu"},
    {LayerKind::tanh, "tanh"},
    {LayerKind::sigmoid, "sigmoid"},
    {LayerKind::softmax, "softmax"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::flatten, "flatten"},
}};

std::string layer_label(const NetworkSpec& spec, std::size_t i) {
  return "layer " + std::to_string(i) + " (" + std::string(to_string(spec.layers[i].kind)) + ") of '" +
         spec.name + "'";
}

Index pooled_extent(Index extent, Index kernel, Index stride) { return (extent - kernel) / stride + 1; }

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv2d(Index filters, Index kernel, Index stride) {
  LayerSpec l{LayerKind::conv2d};
  l.filters = filters;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::maxpool2d(Index kernel) {
  LayerSpec l{LayerKind::maxpool2d};
  l.kernel = kernel;
  l.stride = kernel;
  return l;
}

LayerSpec LayerSpec::avgpool2d(Index kernel) {
  LayerSpec l{LayerKind::avgpool2d};
  l.kernel = kernel;
  l.stride = kernel;
  return l;
}

LayerSpec LayerSpec::dense(Index units) {
  LayerSpec l{LayerKind::dense};
  l.units = units;
  return l;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec l{LayerKind::dropout};
  l.rate = rate;
  return l;
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.input_shape.empty()) throw ShapeError("network '" + spec.name + "' has an empty input shape");
  for (Index e : spec.input_shape)
    if (e <= 0) throw ShapeError("network '" + spec.name + "' input shape " + to_string(spec.input_shape) +
                                 " has a non-positive extent");

  std::vector<Shape> shapes{spec.input_shape};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape& in = shapes.back();
    Shape out = in;
    auto require_image = [&] {
      if (in.size() != 3)
        throw ShapeError(layer_label(spec, i) + " needs an (H,W,C) input, got " + to_string(in));
    };
    switch (l.kind) {
      case LayerKind::conv2d: {
        require_image();
        if (l.filters <= 0 || l.kernel <= 0 || l.stride <= 0)
          throw ShapeError(layer_label(spec, i) + " needs positive filters, kernel and stride");
        if (l.kernel > in[0] || l.kernel > in[1])
          throw ShapeError(layer_label(spec, i) + " kernel " + std::to_string(l.kernel) +
                           " does not fit input " + to_string(in));
        out = {pooled_extent(in[0], l.kernel, l.stride), pooled_extent(in[1], l.kernel, l.stride), l.filters};
        break;
      }
      case LayerKind::maxpool2d:
      case LayerKind::avgpool2d: {
        require_image();
        if (l.kernel <= 0 || l.stride <= 0)
          throw ShapeError(layer_label(spec, i) + " needs a positive kernel and stride");
        if (l.kernel > in[0] || l.kernel > in[1])
          throw ShapeError(layer_label(spec, i) + " window " + std::to_string(l.kernel) +
                           " does not fit input " + to_string(in));
        out = {pooled_extent(in[0], l.kernel, l.stride), pooled_extent(in[1], l.kernel, l.stride), in[2]};
        break;
      }
      case LayerKind::dense:
        if (in.size() != 1)
          throw ShapeError(layer_label(spec, i) + " needs a flat input, got " + to_string(in) +
                           " (insert a flatten layer)");
        if (l.units <= 0) throw ShapeError(layer_label(spec, i) + " needs positive units");
        out = {l.units};
        break;
      case LayerKind::flatten:
        out = {numel(in)};
        break;
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0))
          throw ShapeError(layer_label(spec, i) + " rate " + std::to_string(l.rate) + " is outside [0,1)");
        break;
      case LayerKind::softmax:
      case LayerKind::sigmoid:
        if (i + 1 != spec.layers.size())
          throw ShapeError(layer_label(spec, i) + " may only appear as the final layer");
        if (in.size() != 1) throw ShapeError(layer_label(spec, i) + " needs a flat input");
        if (l.kind == LayerKind::sigmoid && in[0] != 1)
          throw ShapeError(layer_label(spec, i) + " head must have exactly one unit");
        break;
      case LayerKind::relu:
      case LayerKind::tanh:
        break;
    }
    shapes.push_back(std::move(out));
  }
  return shapes;
}

void validate(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw ShapeError("network '" + spec.name + "' has no layers");
  const LayerKind head = spec.layers.back().kind;
  if (head != LayerKind::softmax && head != LayerKind::sigmoid)
    throw ShapeError("network '" + spec.name + "' must end in a softmax or sigmoid layer");
  infer_shapes(spec);
}

Index output_dim(const NetworkSpec& spec) { return numel(infer_shapes(spec).back()); }

bool has_dropout(const NetworkSpec& spec) {
  for (const auto& l : spec.layers)
    if (l.kind == LayerKind::dropout && l.rate > 0.0) return true;
  return false;
}

NetworkSpec lenet5(const Shape& input_shape, bool with_dropout, double rate, double input_rate, Index classes) {
  NetworkSpec spec{with_dropout ? "lenet5_dropout" : "lenet5", input_shape, {}};
  auto& L = spec.layers;
  auto drop = [&](double r) {
    if (with_dropout) L.push_back(LayerSpec::dropout(r));
  };
  drop(input_rate);
  L.push_back(LayerSpec::conv2d(6, 5));
  L.push_back(LayerSpec::relu());
  L.push_back(LayerSpec::maxpool2d(2));
  drop(rate);
  L.push_back(LayerSpec::conv2d(16, 5));
  L.push_back(LayerSpec::relu());
  L.push_back(LayerSpec::maxpool2d(2));
  L.push_back(LayerSpec::flatten());
  drop(rate);
  L.push_back(LayerSpec::dense(120));
  L.push_back(LayerSpec::relu());
  drop(rate);
  L.push_back(LayerSpec::dense(84));
  L.push_back(LayerSpec::relu());
  drop(rate);
  L.push_back(LayerSpec::dense(classes));
  L.push_back(LayerSpec::softmax());
  validate(spec);
  return spec;
}

NetworkSpec vgg_shadow(const Shape& input_shape, Index classes) {
  NetworkSpec spec{"vgg_shadow", input_shape, {}};
  auto& L = spec.layers;
  for (Index filters : {32, 64}) {
    L.push_back(LayerSpec::conv2d(filters, 3));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::conv2d(filters, 3));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::maxpool2d(2));
  }
  L.push_back(LayerSpec::flatten());
  L.push_back(LayerSpec::dense(128));
  L.push_back(LayerSpec::relu());
  L.push_back(LayerSpec::dense(classes));
  L.push_back(LayerSpec::softmax());
  validate(spec);
  return spec;
}

NetworkSpec attack_mlp(Index input_dim, Index hidden) {
  NetworkSpec spec{"attack_mlp",
                   {input_dim},
                   {LayerSpec::dense(hidden), LayerSpec::tanh(), LayerSpec::dense(hidden), LayerSpec::tanh(),
                    LayerSpec::dense(1), LayerSpec::sigmoid()}};
  validate(spec);
  return spec;
}

void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::conv2d:
      j["filters"] = l.filters;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::dense:
      j["units"] = l.units;
      break;
    case LayerKind::dropout:
      j["rate"] = l.rate;
      break;
    default:
      break;
  }
}

void from_json(const nlohmann::json& j, LayerSpec& l) {
  l = LayerSpec{layer_kind_from_string(j.at("kind").get<std::string>())};
  l.filters = j.value("filters", Index{0});
  l.kernel = j.value("kernel", Index{0});
  l.stride = j.value("stride", Index{1});
  l.units = j.value("units", Index{0});
  l.rate = j.value("rate", 0.0);
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
  j = nlohmann::json{{"name", spec.name}, {"input_shape", spec.input_shape}, {"layers", spec.layers}};
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
  spec.name = j.at("name").get<std::string>();
  spec.input_shape = j.at("input_shape").get<Shape>();
  spec.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

ParamLayout::ParamLayout(const NetworkSpec& spec) {
  const auto shapes = infer_shapes(spec);
  layers_.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.has_params()) continue;
    const Shape& in = shapes[i];
    const std::string prefix = std::string(to_string(l.kind)) + std::to_string(i);
    LayerParams p;
    Shape weight_shape;
    if (l.kind == LayerKind::conv2d) {
      weight_shape = {l.kernel, l.kernel, in[2], l.filters};
      p.rows = l.kernel * l.kernel * in[2];
      p.cols = l.filters;
    } else {
      weight_shape = {in[0], l.units};
      p.rows = in[0];
      p.cols = l.units;
    }
    p.weight_offset = total_;
    entries_.push_back({prefix + ".weight", weight_shape, total_});
    total_ += p.rows * p.cols;
    p.bias_offset = total_;
    entries_.push_back({prefix + ".bias", {p.cols}, total_});
    total_ += p.cols;
    layers_[i] = p;
  }
}

const ParamEntry& ParamLayout::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ShapeError("no parameter named '" + std::string(name) + "'");
}

}  // namespace privleak
