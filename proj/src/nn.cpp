#include "convens/nn/layers.hpp"

#include <sstream>

namespace convens {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Index shape_product(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Activation: return "activation";
  }
  return "unknown";
}

std::string describe(const LayerSpec& spec) {
  std::ostringstream os;
  switch (spec.kind) {
    case LayerKind::Conv2D:
      os << "conv(" << spec.kernel_h << "x" << spec.kernel_w << ", " << spec.units;
      if (spec.stride_h != 1 || spec.stride_w != 1) os << ", stride " << spec.stride_h << "x" << spec.stride_w;
      os << ")";
      break;
    case LayerKind::MaxPool2D: os << "maxpool(" << spec.kernel_h << "x" << spec.kernel_w << ")"; break;
    case LayerKind::Dense: os << "dense(" << spec.units << ")"; break;
    case LayerKind::Flatten: os << "flatten"; break;
    case LayerKind::Activation: os << (spec.activation == ActivationKind::ReLU ? "relu" : "identity"); break;
  }
  return os.str();
}

namespace {

void require_rank(const LayerSpec& spec, const Shape& in, std::size_t rank) {
  if (in.size() != rank) {
    throw ShapeError(describe(spec) + " expects rank-" + std::to_string(rank) + " input, got " +
                     shape_string(in));
  }
}

void require_window(const LayerSpec& spec, const Shape& in) {
  require_rank(spec, in, 3);
  if (spec.kernel_h < 1 || spec.kernel_w < 1 || spec.stride_h < 1 || spec.stride_w < 1) {
    throw ShapeError(describe(spec) + ": kernel and stride must be positive");
  }
  if (spec.kernel_h > in[1] || spec.kernel_w > in[2]) {
    throw ShapeError(describe(spec) + ": kernel exceeds input " + shape_string(in));
  }
}

}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::Conv2D:
      require_window(spec, in);
      if (spec.units < 1) throw ShapeError("conv filters must be >= 1");
      return {spec.units, (in[1] - spec.kernel_h) / spec.stride_h + 1, (in[2] - spec.kernel_w) / spec.stride_w + 1};
    case LayerKind::MaxPool2D:
      require_window(spec, in);
      return {in[0], (in[1] - spec.kernel_h) / spec.stride_h + 1, (in[2] - spec.kernel_w) / spec.stride_w + 1};
    case LayerKind::Dense:
      require_rank(spec, in, 1);
      if (spec.units < 1) throw ShapeError("dense units must be >= 1");
      return {spec.units};
    case LayerKind::Flatten:
      return {shape_product(in)};
    case LayerKind::Activation:
      return in;
  }
  throw ShapeError("unknown layer kind");
}

Shape layer_weight_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::Conv2D: return {spec.units, in[0], spec.kernel_h, spec.kernel_w};
    case LayerKind::Dense: return {spec.units, in[0]};
    default: return {};
  }
}

Index layer_parameter_count(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::Conv2D: return spec.units * (in[0] * spec.kernel_h * spec.kernel_w + 1);
    case LayerKind::Dense: return in[0] * spec.units + spec.units;
    default: return 0;
  }
}

}  // namespace convens
