#pragma once

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "privleak/tensor.hpp"

namespace privleak {

enum class LayerKind { conv2d, maxpool2d, avgpool2d, dense, relu, tanh, sigmoid, softmax, dropout, flatten };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// One entry of a declarative layer list. Only the fields relevant to `kind`
/// are meaningful; convolutions and pools use "valid" padding.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  Index filters = 0;
  Index kernel = 0;
  Index stride = 1;
  Index units = 0;
  double rate = 0.0;

  static LayerSpec conv2d(Index filters, Index kernel, Index stride = 1);
  static LayerSpec maxpool2d(Index kernel);
  static LayerSpec avgpool2d(Index kernel);
  static LayerSpec dense(Index units);
  static LayerSpec dropout(double rate);
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec tanh() { return {LayerKind::tanh}; }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid}; }
  static LayerSpec softmax() { return {LayerKind::softmax}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }

  bool has_params() const { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Input shape is (H, W, C) for images or (D) for feature vectors. The last
/// layer is the probability head: softmax over classes, or a single sigmoid
/// unit for binary models.
struct NetworkSpec {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Per-layer output shapes (without the batch axis); element 0 is the input.
/// Throws ShapeError naming the first layer that does not chain.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

/// Full static validation: shape chain, dropout rates, head placement.
void validate(const NetworkSpec& spec);

Index output_dim(const NetworkSpec& spec);
bool has_dropout(const NetworkSpec& spec);

/// Conv/pool/dense LeNet-5 with ReLU. With `with_dropout`, a dropout layer
/// precedes every weight layer: `input_rate` ahead of the first conv, `rate`
/// elsewhere.
NetworkSpec lenet5(const Shape& input_shape, bool with_dropout, double rate = 0.5, double input_rate = 0.2,
                   Index classes = 10);

/// Small VGG-style network: two 3x3 conv blocks (32 and 64 filters) then a
/// 128-unit dense layer.
NetworkSpec vgg_shadow(const Shape& input_shape, Index classes = 10);

/// Two tanh hidden layers and a single sigmoid output.
NetworkSpec attack_mlp(Index input_dim = 10, Index hidden = 64);

void to_json(nlohmann::json& j, const LayerSpec& layer);
void from_json(const nlohmann::json& j, LayerSpec& layer);
void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

struct ParamEntry {
  std::string name;
  Shape shape;
  Index offset = 0;
  Index size() const { return numel(shape); }
};

/// Weight and bias placement of one parameterized layer inside the flat
/// parameter vector. Weights are row-major [fan_in, fan_out] matrices: dense
/// layers [in, units], convolutions [k*k*c_in, filters] (i.e. [k,k,c_in,f]).
struct LayerParams {
  Index weight_offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index bias_offset = 0;
};

/// Parameter names, shapes and offsets; a pure function of the spec.
class ParamLayout {
 public:
  explicit ParamLayout(const NetworkSpec& spec);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  Index total() const { return total_; }
  const ParamEntry& find(std::string_view name) const;
  const std::optional<LayerParams>& layer(std::size_t i) const { return layers_.at(i); }

 private:
  std::vector<ParamEntry> entries_;
  std::vector<std::optional<LayerParams>> layers_;
  Index total_ = 0;
};

}  // namespace privleak
