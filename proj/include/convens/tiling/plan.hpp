#pragma once

#include "convens/nn/model.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace convens {

enum class TiledKind { Conv, Dense };

/// A conv or dense layer as the planner sees it.
struct TiledLayer {
  TiledKind kind = TiledKind::Dense;
  /// Conv: F (filters), C (input channels), kernel and output extents.
  Index filters = 0;
  Index channels = 0;
  Index kernel_w = 1;
  Index kernel_h = 1;
  Index out_w = 1;
  Index out_h = 1;
  /// Dense: L1 (inputs) and L2 (outputs).
  Index in_features = 0;
  Index out_features = 0;
  /// Position in the source Model, or -1.
  Index model_layer = -1;

  Index outputs() const { return kind == TiledKind::Conv ? filters : out_features; }
};

struct TilingRequest {
  /// C, channels (or features) of the network input.
  Index channels = 1;
  /// BS = BS_f * BS_p.
  Index batch_size = 1;
  Index batch_factor = 1;
  /// C_f; plays the role of f^0.
  Index channel_factor = 1;
  std::vector<TiledLayer> layers;
  /// f^i, one per layer.
  std::vector<Index> factors;
};

/// One tiled dimension: `factor` tiles of extent / factor.
struct FactoredAxis {
  std::string name;
  Index extent = 1;
  Index factor = 1;
  Index inner() const { return extent / factor; }
};

/// [outer...][inner...][trailing]... form of an array shape.
struct FactoredShape {
  std::vector<FactoredAxis> axes;
  std::vector<Index> trailing;

  std::string str() const;
  /// Number of tiles, the product of the outer factors.
  Index tiles() const;
  Shape outer() const;
  Shape inner() const;
  /// Extents before factoring.
  Shape original() const;
};

struct LayerTiling {
  /// 1-based position among the tiled layers.
  Index index = 1;
  TiledKind kind = TiledKind::Dense;
  Index model_layer = -1;
  /// f^{i-1} (C_f for the first layer) and f^i.
  Index in_factor = 1;
  Index out_factor = 1;
  FactoredShape weight;
  FactoredShape output;
  FactoredShape loss_grad;
  FactoredShape weight_grad;

  /// Independent partial products per pass: BS_f * f^i * f^{i-1}.
  Index lanes(Index batch_factor) const { return batch_factor * out_factor * in_factor; }
};

struct TilingPlan {
  TilingRequest request;
  std::vector<LayerTiling> layers;

  /// Configuration label such as "BS_f=2-F_f=1,1".
  std::string label() const;
};

/// Errors name the layer, the dimension and the offending factor.
TilingPlan plan_tiling(const TilingRequest& request);

/// Shape algebra and chaining checks; throws ConfigError describing the first violation.
void verify_plan(const TilingPlan& plan);

std::string plan_report_text(const TilingPlan& plan);
nlohmann::json plan_report_json(const TilingPlan& plan);

/// Request for the conv and dense layers of `model` at batch size `batch`.
template <typename Scalar>
TilingRequest tiling_request_from_model(const Model<Scalar>& model, Index batch, Index batch_factor,
                                        Index channel_factor, std::vector<Index> factors) {
  TilingRequest r;
  r.channels = model.input_shape().front();
  r.batch_size = batch;
  r.batch_factor = batch_factor;
  r.channel_factor = channel_factor;
  r.factors = std::move(factors);
  for (Index i = 0; i < model.layer_count(); ++i) {
    const auto& spec = model.layers()[static_cast<std::size_t>(i)];
    const Shape& in = model.layer_input_shape(i);
    const Shape& out = model.output_shape(i);
    TiledLayer t;
    t.model_layer = i;
    if (spec.kind == LayerKind::Conv2D) {
      t.kind = TiledKind::Conv;
      t.filters = spec.units;
      t.channels = in[0];
      t.kernel_h = spec.kernel_h;
      t.kernel_w = spec.kernel_w;
      t.out_h = out[1];
      t.out_w = out[2];
    } else if (spec.kind == LayerKind::Dense) {
      t.kind = TiledKind::Dense;
      t.in_features = in[0];
      t.out_features = spec.units;
    } else {
      continue;
    }
    r.layers.push_back(t);
  }
  return r;
}

}  // namespace convens
