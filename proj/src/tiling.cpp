#include "convens/tiling/plan.hpp"

#include <sstream>

namespace convens {

namespace {

std::string kind_name(TiledKind k) { return k == TiledKind::Conv ? "conv" : "dense"; }

std::string layer_name(Index i, TiledKind k) { return "layer " + std::to_string(i) + " (" + kind_name(k) + ")"; }

void require_divides(const std::string& where, const std::string& factor_name, Index factor,
                     const std::string& dim_name, Index extent) {
  if (factor < 1) {
    throw ConfigError(where + ": factor " + factor_name + "=" + std::to_string(factor) + " must be >= 1");
  }
  if (extent < 1) throw ConfigError(where + ": dimension " + dim_name + " must be >= 1");
  if (extent % factor != 0) {
    throw ConfigError(where + ": factor " + factor_name + "=" + std::to_string(factor) + " does not divide " +
                      dim_name + "=" + std::to_string(extent));
  }
}

}  // namespace

std::string FactoredShape::str() const {
  std::ostringstream os;
  if (!axes.empty()) {
    os << '[';
    for (std::size_t a = 0; a < axes.size(); ++a) os << (a ? "," : "") << axes[a].factor;
    os << "][";
    for (std::size_t a = 0; a < axes.size(); ++a) os << (a ? "," : "") << axes[a].inner();
    os << ']';
  }
  for (Index t : trailing) os << '[' << t << ']';
  return os.str();
}

Index FactoredShape::tiles() const {
  Index n = 1;
  for (const auto& a : axes) n *= a.factor;
  return n;
}

Shape FactoredShape::outer() const {
  Shape s;
  for (const auto& a : axes) s.push_back(a.factor);
  return s;
}

Shape FactoredShape::inner() const {
  Shape s;
  for (const auto& a : axes) s.push_back(a.inner());
  return s;
}

Shape FactoredShape::original() const {
  Shape s;
  for (const auto& a : axes) s.push_back(a.extent);
  s.insert(s.end(), trailing.begin(), trailing.end());
  return s;
}

std::string TilingPlan::label() const {
  std::ostringstream os;
  os << "BS_f=" << request.batch_factor << "-F_f=";
  for (std::size_t i = 0; i < request.factors.size(); ++i) os << (i ? "," : "") << request.factors[i];
  if (request.channel_factor != 1) os << "-C_f=" << request.channel_factor;
  return os.str();
}

TilingPlan plan_tiling(const TilingRequest& request) {
  if (request.factors.size() != request.layers.size()) {
    throw ConfigError("tiling: " + std::to_string(request.layers.size()) + " layers but " +
                      std::to_string(request.factors.size()) + " factors");
  }
  require_divides("batch", "BS_f", request.batch_factor, "BS", request.batch_size);
  require_divides("input", "C_f", request.channel_factor, "C", request.channels);

  TilingPlan plan;
  plan.request = request;
  Index prev_factor = request.channel_factor;
  Index prev_extent = request.channels;
  TiledKind prev_kind = TiledKind::Conv;
  for (std::size_t k = 0; k < request.layers.size(); ++k) {
    const auto& l = request.layers[k];
    const Index i = static_cast<Index>(k) + 1;
    const Index f = request.factors[k];
    const std::string where = layer_name(i, l.kind);
    const std::string prev_name = i == 1 ? "C" : (prev_kind == TiledKind::Conv ? "F^" : "L2^") + std::to_string(i - 1);
    const std::string prev_factor_name = i == 1 ? "C_f" : "f^" + std::to_string(i - 1);

    LayerTiling t;
    t.index = i;
    t.kind = l.kind;
    t.model_layer = l.model_layer;
    t.in_factor = prev_factor;
    t.out_factor = f;
    const FactoredAxis batch_axis{"BS", request.batch_size, request.batch_factor};

    if (l.kind == TiledKind::Conv) {
      if (i > 1 && prev_kind == TiledKind::Dense) throw ConfigError(where + ": convolution after a dense layer");
      if (l.channels != prev_extent) {
        throw ConfigError(where + ": expects C=" + std::to_string(l.channels) + " input channels but receives " +
                          prev_name + "=" + std::to_string(prev_extent));
      }
      require_divides(where, "f^" + std::to_string(i), f, "F^" + std::to_string(i), l.filters);
      require_divides(where, prev_factor_name, prev_factor, prev_name, prev_extent);
      t.weight = {{{"F", l.filters, f}, {i == 1 ? "C" : "F_prev", prev_extent, prev_factor}},
                  {l.kernel_w, l.kernel_h}};
      t.output = {{batch_axis, {"F", l.filters, f}}, {l.out_w, l.out_h}};
    } else {
      if (i > 1 && prev_kind == TiledKind::Dense && l.in_features != prev_extent) {
        throw ConfigError(where + ": expects L1=" + std::to_string(l.in_features) + " inputs but receives " +
                          prev_name + "=" + std::to_string(prev_extent));
      }
      require_divides(where, prev_factor_name, prev_factor, "L1^" + std::to_string(i), l.in_features);
      require_divides(where, "f^" + std::to_string(i), f, "L2^" + std::to_string(i), l.out_features);
      t.weight = {{{"L1", l.in_features, prev_factor}, {"L2", l.out_features, f}}, {}};
      t.output = {{batch_axis, {"L2", l.out_features, f}}, {}};
    }
    // Backward arrays mirror the forward ones: the incoming loss has the
    // layout of the output and the gradient has the layout of the weight.
    t.loss_grad = t.output;
    t.weight_grad = t.weight;
    plan.layers.push_back(t);
    prev_factor = f;
    prev_extent = l.outputs();
    prev_kind = l.kind;
  }
  verify_plan(plan);
  return plan;
}

void verify_plan(const TilingPlan& plan) {
  const auto check_shape = [](const LayerTiling& t, const char* array, const FactoredShape& s) {
    for (const auto& a : s.axes) {
      if (a.factor < 1 || a.extent % a.factor != 0 || a.factor * a.inner() != a.extent) {
        throw ConfigError("layer " + std::to_string(t.index) + " " + array + ": axis " + a.name + " extent " +
                          std::to_string(a.extent) + " is not factor x inner (" + std::to_string(a.factor) + ")");
      }
    }
  };
  Index prev = plan.request.channel_factor;
  for (const auto& t : plan.layers) {
    check_shape(t, "w", t.weight);
    check_shape(t, "o", t.output);
    check_shape(t, "dL", t.loss_grad);
    check_shape(t, "gr", t.weight_grad);
    if (t.in_factor != prev) {
      throw ConfigError("layer " + std::to_string(t.index) + " consumes factor " + std::to_string(t.in_factor) +
                        " but the previous layer produces " + std::to_string(prev));
    }
    const Index w_in = t.kind == TiledKind::Conv ? t.weight.axes[1].factor : t.weight.axes[0].factor;
    const Index w_out = t.kind == TiledKind::Conv ? t.weight.axes[0].factor : t.weight.axes[1].factor;
    if (w_in != t.in_factor || w_out != t.out_factor || t.output.axes[1].factor != t.out_factor ||
        t.output.axes[0].factor != plan.request.batch_factor) {
      throw ConfigError("layer " + std::to_string(t.index) + ": factors disagree between w and o");
    }
    prev = t.out_factor;
  }
}

std::string plan_report_text(const TilingPlan& plan) {
  std::ostringstream os;
  const auto& r = plan.request;
  os << plan.label() << "\n";
  os << "BS=" << r.batch_size << " (BS_f=" << r.batch_factor << ", BS_p=" << r.batch_size / r.batch_factor
     << "), C=" << r.channels << " (C_f=" << r.channel_factor << ")\n";
  for (const auto& t : plan.layers) {
    os << "layer " << t.index << " " << kind_name(t.kind) << "  f=" << t.out_factor << "  lanes=" << t.lanes(r.batch_factor)
       << "\n";
    os << "  w  " << t.weight.str() << "  tiles=" << t.weight.tiles() << "\n";
    os << "  o  " << t.output.str() << "  tiles=" << t.output.tiles() << "\n";
    os << "  dL " << t.loss_grad.str() << "  tiles=" << t.loss_grad.tiles() << "\n";
    os << "  gr " << t.weight_grad.str() << "  tiles=" << t.weight_grad.tiles() << "\n";
  }
  return os.str();
}

nlohmann::json plan_report_json(const TilingPlan& plan) {
  using nlohmann::json;
  const auto& r = plan.request;
  const auto shape_json = [](const FactoredShape& s) {
    return json{{"dims", s.str()}, {"outer", s.outer()}, {"inner", s.inner()}, {"trailing", s.trailing},
                {"tiles", s.tiles()}};
  };
  json layers = json::array();
  for (const auto& t : plan.layers) {
    layers.push_back({{"index", t.index},
                      {"kind", kind_name(t.kind)},
                      {"model_layer", t.model_layer},
                      {"in_factor", t.in_factor},
                      {"out_factor", t.out_factor},
                      {"lanes", t.lanes(r.batch_factor)},
                      {"w", shape_json(t.weight)},
                      {"o", shape_json(t.output)},
                      {"dL", shape_json(t.loss_grad)},
                      {"gr", shape_json(t.weight_grad)}});
  }
  return json{{"label", plan.label()},
              {"batch_size", r.batch_size},
              {"batch_factor", r.batch_factor},
              {"channels", r.channels},
              {"channel_factor", r.channel_factor},
              {"factors", r.factors},
              {"layers", layers}};
}

}  // namespace convens
