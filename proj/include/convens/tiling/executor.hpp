#pragma once

#include "convens/nn/loss.hpp"
#include "convens/tiling/plan.hpp"

#include <string>
#include <vector>

namespace convens {

/// Audit of the duplicate-operate-aggregate dataflow: every tile is produced
/// once with a duplication count and must be read exactly that many times.
class TileStream {
 public:
  struct Entry {
    std::string label;
    Index duplicates = 0;
    Index reads = 0;
  };

  std::size_t produce(std::string label, Index duplicates) {
    entries_.push_back({std::move(label), duplicates, 0});
    return entries_.size() - 1;
  }

  void consume(std::size_t id) {
    auto& e = entries_.at(id);
    if (e.reads >= e.duplicates) throw NumericError("tile " + e.label + " read more often than duplicated");
    ++e.reads;
  }

  /// Throws naming the first tile whose reads differ from its duplicates.
  void verify() const {
    for (const auto& e : entries_) {
      if (e.reads != e.duplicates) {
        throw NumericError("tile " + e.label + " read " + std::to_string(e.reads) + " of " +
                           std::to_string(e.duplicates) + " times");
      }
    }
  }

  const std::vector<Entry>& entries() const { return entries_; }
  Index produced() const { return static_cast<Index>(entries_.size()); }
  Index consumed() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.reads;
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

/// M3 = M1 M2 as f partial products over the shared dimension, aggregated
/// with k ascending. Within a tile the sum runs over l ascending per (i, j).
template <typename Scalar>
RowMatrix<Scalar> tiled_matmul(const RowMatrix<Scalar>& m1, const RowMatrix<Scalar>& m2, Index f,
                               TileStream* stream = nullptr) {
  const Index x = m1.rows(), y = m1.cols(), z = m2.cols();
  if (m2.rows() != y) throw ShapeError("tiled_matmul: inner dimensions differ");
  if (f < 1 || y % f != 0) {
    throw ConfigError("tiled_matmul: factor " + std::to_string(f) + " does not divide Y=" + std::to_string(y));
  }
  const Index inner = y / f;
  TileStream local;
  TileStream& s = stream ? *stream : local;
  // Duplicate: each operand tile is read by exactly one partial product.
  std::vector<std::size_t> a_ids, b_ids;
  for (Index k = 0; k < f; ++k) {
    a_ids.push_back(s.produce("M1[" + std::to_string(k) + "]", 1));
    b_ids.push_back(s.produce("M2[" + std::to_string(k) + "]", 1));
  }
  // Operate.
  std::vector<RowMatrix<Scalar>> partial(static_cast<std::size_t>(f));
  std::vector<std::size_t> p_ids;
  for (Index k = 0; k < f; ++k) {
    s.consume(a_ids[static_cast<std::size_t>(k)]);
    s.consume(b_ids[static_cast<std::size_t>(k)]);
    auto& p = partial[static_cast<std::size_t>(k)];
    p.setZero(x, z);
    for (Index i = 0; i < x; ++i) {
      for (Index j = 0; j < z; ++j) {
        Scalar acc(0);
        for (Index l = 0; l < inner; ++l) acc += m1(i, k * inner + l) * m2(k * inner + l, j);
        p(i, j) = acc;
      }
    }
    p_ids.push_back(s.produce("P[" + std::to_string(k) + "]", 1));
  }
  // Aggregate.
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(x, z);
  for (Index k = 0; k < f; ++k) {
    s.consume(p_ids[static_cast<std::size_t>(k)]);
    out += partial[static_cast<std::size_t>(k)];
  }
  if (!stream) s.verify();
  return out;
}

namespace tiled {

struct Factors {
  Index batch = 1;
  Index out = 1;
  Index in = 1;
};

inline std::string tile_name(const char* array, Index layer, Index a, Index b) {
  return std::string(array) + std::to_string(layer) + "[" + std::to_string(a) + "," + std::to_string(b) + "]";
}

/// Dense forward with batch groups x output groups x input groups.
template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& in, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                             Factors fac, Index layer, TileStream& s) {
  const Index batch = in.rows(), n_in = w.dim(1), n_out = w.dim(0);
  const Index bp = batch / fac.batch, op = n_out / fac.out, ip = n_in / fac.in;
  const auto x = in.matrix();
  const auto wm = w.matrix();
  std::vector<std::size_t> x_ids, w_ids;
  for (Index bg = 0; bg < fac.batch; ++bg)
    for (Index ig = 0; ig < fac.in; ++ig) x_ids.push_back(s.produce(tile_name("x", layer, bg, ig), fac.out));
  for (Index og = 0; og < fac.out; ++og)
    for (Index ig = 0; ig < fac.in; ++ig) w_ids.push_back(s.produce(tile_name("w", layer, og, ig), fac.batch));
  Tensor<Scalar> out(Shape{batch, n_out});
  auto o = out.matrix();
  for (Index bg = 0; bg < fac.batch; ++bg) {
    for (Index og = 0; og < fac.out; ++og) {
      RowMatrix<Scalar> acc;
      for (Index ig = 0; ig < fac.in; ++ig) {
        s.consume(x_ids[static_cast<std::size_t>(bg * fac.in + ig)]);
        s.consume(w_ids[static_cast<std::size_t>(og * fac.in + ig)]);
        RowMatrix<Scalar> part(bp, op);
        part.noalias() = x.block(bg * bp, ig * ip, bp, ip) * wm.block(og * op, ig * ip, op, ip).transpose();
        if (ig == 0) acc = std::move(part); else acc += part;
      }
      acc.rowwise() += b.values().segment(og * op, op).transpose();
      o.block(bg * bp, og * op, bp, op) = acc;
    }
  }
  return out;
}

/// Writes weight and bias gradients into gw, gb and returns the input gradient.
template <typename Scalar>
Tensor<Scalar> dense_backward(const Tensor<Scalar>& in, const Tensor<Scalar>& w, const Tensor<Scalar>& gout,
                              Tensor<Scalar>& gw, Tensor<Scalar>& gb, Factors fac, Index layer, TileStream& s) {
  const Index batch = in.rows(), n_in = w.dim(1), n_out = w.dim(0);
  const Index bp = batch / fac.batch, op = n_out / fac.out, ip = n_in / fac.in;
  const auto x = in.matrix();
  const auto wm = w.matrix();
  const auto go = gout.matrix();
  // dL tiles feed the weight gradient (per input group), the input gradient
  // (per input group) and the bias gradient once.
  std::vector<std::size_t> g_ids, x_ids, w_ids;
  for (Index bg = 0; bg < fac.batch; ++bg)
    for (Index og = 0; og < fac.out; ++og) g_ids.push_back(s.produce(tile_name("dL", layer, bg, og), 2 * fac.in + 1));
  for (Index bg = 0; bg < fac.batch; ++bg)
    for (Index ig = 0; ig < fac.in; ++ig) x_ids.push_back(s.produce(tile_name("xb", layer, bg, ig), fac.out));
  for (Index og = 0; og < fac.out; ++og)
    for (Index ig = 0; ig < fac.in; ++ig) w_ids.push_back(s.produce(tile_name("wb", layer, og, ig), fac.batch));
  const auto gid = [&](Index bg, Index og) { return g_ids[static_cast<std::size_t>(bg * fac.out + og)]; };

  auto gwm = gw.matrix();
  for (Index og = 0; og < fac.out; ++og) {
    for (Index ig = 0; ig < fac.in; ++ig) {
      RowMatrix<Scalar> acc;
      for (Index bg = 0; bg < fac.batch; ++bg) {
        s.consume(gid(bg, og));
        s.consume(x_ids[static_cast<std::size_t>(bg * fac.in + ig)]);
        RowMatrix<Scalar> part(op, ip);
        part.noalias() = go.block(bg * bp, og * op, bp, op).transpose() * x.block(bg * bp, ig * ip, bp, ip);
        if (bg == 0) acc = std::move(part); else acc += part;
      }
      gwm.block(og * op, ig * ip, op, ip) = acc;
    }
    Vector<Scalar> bias_acc;
    for (Index bg = 0; bg < fac.batch; ++bg) {
      s.consume(gid(bg, og));
      Vector<Scalar> part = go.block(bg * bp, og * op, bp, op).colwise().sum().transpose();
      if (bg == 0) bias_acc = std::move(part); else bias_acc += part;
    }
    gb.values().segment(og * op, op) = bias_acc;
  }

  Tensor<Scalar> gin(in.shape());
  auto gi = gin.matrix();
  for (Index bg = 0; bg < fac.batch; ++bg) {
    for (Index ig = 0; ig < fac.in; ++ig) {
      RowMatrix<Scalar> acc;
      for (Index og = 0; og < fac.out; ++og) {
        s.consume(gid(bg, og));
        s.consume(w_ids[static_cast<std::size_t>(og * fac.in + ig)]);
        RowMatrix<Scalar> part(bp, ip);
        part.noalias() = go.block(bg * bp, og * op, bp, op) * wm.block(og * op, ig * ip, op, ip);
        if (og == 0) acc = std::move(part); else acc += part;
      }
      gi.block(bg * bp, ig * ip, bp, ip) = acc;
    }
  }
  return gin;
}

/// Convolution forward: im2col per (batch group, channel group), one GEMM per
/// (batch, filter, channel) tile triple, channel groups aggregated in order.
template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& in, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                            const kernels::ConvGeometry& g, Factors fac, Index layer, TileStream& s) {
  const Index batch = in.dim(0), filters = w.dim(0);
  const Index bp = batch / fac.batch, fp = filters / fac.out, cp = g.channels / fac.in;
  const Index kk = g.kernel_h * g.kernel_w;
  const auto wmat = Eigen::Map<const RowMatrix<Scalar>>(w.data(), filters, g.patch());
  std::vector<ColMatrix<Scalar>> cols;
  std::vector<std::size_t> x_ids, w_ids;
  for (Index bg = 0; bg < fac.batch; ++bg) {
    for (Index cg = 0; cg < fac.in; ++cg) {
      cols.push_back(kernels::im2col(in, g, bg * bp, (bg + 1) * bp, cg * cp, (cg + 1) * cp));
      x_ids.push_back(s.produce(tile_name("x", layer, bg, cg), fac.out));
    }
  }
  for (Index fg = 0; fg < fac.out; ++fg)
    for (Index cg = 0; cg < fac.in; ++cg) w_ids.push_back(s.produce(tile_name("w", layer, fg, cg), fac.batch));
  Tensor<Scalar> out(Shape{batch, filters, g.out_h(), g.out_w()});
  for (Index bg = 0; bg < fac.batch; ++bg) {
    for (Index fg = 0; fg < fac.out; ++fg) {
      ColMatrix<Scalar> acc;
      for (Index cg = 0; cg < fac.in; ++cg) {
        const auto t = static_cast<std::size_t>(bg * fac.in + cg);
        s.consume(x_ids[t]);
        s.consume(w_ids[static_cast<std::size_t>(fg * fac.in + cg)]);
        ColMatrix<Scalar> part = wmat.block(fg * fp, cg * cp * kk, fp, cp * kk) * cols[t];
        if (cg == 0) acc = std::move(part); else acc += part;
      }
      acc.colwise() += b.values().segment(fg * fp, fp);
      kernels::scatter_conv_output(acc, filters, g.positions(), bg * bp, fg * fp, out);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv_backward(const Tensor<Scalar>& in, const Tensor<Scalar>& w, const Tensor<Scalar>& gout,
                             Tensor<Scalar>& gw, Tensor<Scalar>& gb, const kernels::ConvGeometry& g, Factors fac,
                             Index layer, TileStream& s) {
  const Index batch = in.dim(0), filters = w.dim(0);
  const Index bp = batch / fac.batch, fp = filters / fac.out, cp = g.channels / fac.in;
  const Index kk = g.kernel_h * g.kernel_w;
  const Index positions = g.positions();
  const auto wmat = Eigen::Map<const RowMatrix<Scalar>>(w.data(), filters, g.patch());
  std::vector<ColMatrix<Scalar>> cols, douts;
  std::vector<std::size_t> g_ids, x_ids, w_ids;
  for (Index bg = 0; bg < fac.batch; ++bg) {
    for (Index fg = 0; fg < fac.out; ++fg) {
      douts.push_back(kernels::gather_conv_output(gout, filters, positions, bg * bp, (bg + 1) * bp, fg * fp,
                                                  (fg + 1) * fp));
      g_ids.push_back(s.produce(tile_name("dL", layer, bg, fg), 2 * fac.in + 1));
    }
  }
  for (Index bg = 0; bg < fac.batch; ++bg) {
    for (Index cg = 0; cg < fac.in; ++cg) {
      cols.push_back(kernels::im2col(in, g, bg * bp, (bg + 1) * bp, cg * cp, (cg + 1) * cp));
      x_ids.push_back(s.produce(tile_name("xb", layer, bg, cg), fac.out));
    }
  }
  for (Index fg = 0; fg < fac.out; ++fg)
    for (Index cg = 0; cg < fac.in; ++cg) w_ids.push_back(s.produce(tile_name("wb", layer, fg, cg), fac.batch));
  const auto gt = [&](Index bg, Index fg) { return static_cast<std::size_t>(bg * fac.out + fg); };

  auto gwm = Eigen::Map<RowMatrix<Scalar>>(gw.data(), filters, g.patch());
  for (Index fg = 0; fg < fac.out; ++fg) {
    for (Index cg = 0; cg < fac.in; ++cg) {
      RowMatrix<Scalar> acc;
      for (Index bg = 0; bg < fac.batch; ++bg) {
        s.consume(g_ids[gt(bg, fg)]);
        s.consume(x_ids[static_cast<std::size_t>(bg * fac.in + cg)]);
        RowMatrix<Scalar> part(fp, cp * kk);
        part.noalias() = douts[gt(bg, fg)] * cols[static_cast<std::size_t>(bg * fac.in + cg)].transpose();
        if (bg == 0) acc = std::move(part); else acc += part;
      }
      gwm.block(fg * fp, cg * cp * kk, fp, cp * kk) = acc;
    }
    Vector<Scalar> bias_acc;
    for (Index bg = 0; bg < fac.batch; ++bg) {
      s.consume(g_ids[gt(bg, fg)]);
      Vector<Scalar> part = douts[gt(bg, fg)].rowwise().sum();
      if (bg == 0) bias_acc = std::move(part); else bias_acc += part;
    }
    gb.values().segment(fg * fp, fp) = bias_acc;
  }

  Tensor<Scalar> gin(in.shape());
  for (Index bg = 0; bg < fac.batch; ++bg) {
    for (Index cg = 0; cg < fac.in; ++cg) {
      ColMatrix<Scalar> acc;
      for (Index fg = 0; fg < fac.out; ++fg) {
        s.consume(g_ids[gt(bg, fg)]);
        s.consume(w_ids[static_cast<std::size_t>(fg * fac.in + cg)]);
        ColMatrix<Scalar> part = wmat.block(fg * fp, cg * cp * kk, fp, cp * kk).transpose() * douts[gt(bg, fg)];
        if (fg == 0) acc = std::move(part); else acc += part;
      }
      kernels::col2im_add(acc, g, bg * bp, (bg + 1) * bp, cg * cp, (cg + 1) * cp, gin);
    }
  }
  return gin;
}

}  // namespace tiled

template <typename Scalar>
struct TiledResult {
  double loss = 0.0;
  Tensor<Scalar> output;
  Gradients<Scalar> grads;
  TileStream stream;
  /// Partial products computed per tiled layer in the forward pass.
  std::vector<Index> forward_products;
};

/// Throws ConfigError when the plan was not made for this model and batch.
template <typename Scalar>
void check_plan_matches(const TilingPlan& plan, const Model<Scalar>& model, Index batch) {
  if (plan.request.batch_size != batch) {
    throw ConfigError("plan/model mismatch: plan batch " + std::to_string(plan.request.batch_size) +
                      " vs batch " + std::to_string(batch));
  }
  const auto expect = tiling_request_from_model(model, batch, plan.request.batch_factor, plan.request.channel_factor,
                                                plan.request.factors);
  if (expect.layers.size() != plan.layers.size() || expect.channels != plan.request.channels) {
    throw ConfigError("plan/model mismatch: layer count or input channels differ");
  }
  for (std::size_t k = 0; k < expect.layers.size(); ++k) {
    const auto& a = expect.layers[k];
    const auto& b = plan.request.layers[k];
    if (a.kind != b.kind || a.model_layer != plan.layers[k].model_layer || a.filters != b.filters ||
        a.channels != b.channels || a.in_features != b.in_features || a.out_features != b.out_features ||
        a.kernel_h != b.kernel_h || a.kernel_w != b.kernel_w) {
      throw ConfigError("plan/model mismatch at tiled layer " + std::to_string(k + 1));
    }
  }
}

/// Forward, loss and backward through the tiled dataflow. Layers without
/// parameters run on the ordinary engine.
template <typename Scalar>
TiledResult<Scalar> execute_plan(const TilingPlan& plan, const Model<Scalar>& model, const Tensor<Scalar>& batch,
                                 const Tensor<Scalar>& target, LossKind loss) {
  check_batch(model, batch);
  check_plan_matches(plan, model, batch.dim(0));
  std::vector<const LayerTiling*> tiling(static_cast<std::size_t>(model.layer_count()), nullptr);
  for (const auto& t : plan.layers) tiling[static_cast<std::size_t>(t.model_layer)] = &t;
  const Index bs_f = plan.request.batch_factor;
  const auto factors = [&](const LayerTiling& t) { return tiled::Factors{bs_f, t.out_factor, t.in_factor}; };

  TiledResult<Scalar> r;
  ForwardTrace<Scalar> trace;
  trace.activations.push_back(batch);
  trace.pool_argmax.resize(static_cast<std::size_t>(model.layer_count()));
  for (Index i = 0; i < model.layer_count(); ++i) {
    const auto* t = tiling[static_cast<std::size_t>(i)];
    const auto& in = trace.activations.back();
    if (!t) {
      trace.activations.push_back(apply_layer(model, i, in, &trace.pool_argmax[static_cast<std::size_t>(i)]));
      continue;
    }
    const auto slot = static_cast<std::size_t>(model.weight_slot(i));
    const auto& w = model.parameters()[slot];
    const auto& b = model.parameters()[slot + 1];
    if (t->kind == TiledKind::Conv) {
      const auto g = conv_geometry<Scalar>(model.layers()[static_cast<std::size_t>(i)], model.layer_input_shape(i));
      trace.activations.push_back(tiled::conv_forward(in, w, b, g, factors(*t), t->index, r.stream));
    } else {
      trace.activations.push_back(tiled::dense_forward(in, w, b, factors(*t), t->index, r.stream));
    }
    r.forward_products.push_back(t->lanes(bs_f));
  }
  require_finite(trace.output(), "tiled forward output");

  auto lg = loss_and_gradient(trace.output(), target, loss);
  r.loss = lg.loss;
  for (const auto& p : model.parameters()) r.grads.params.emplace_back(p.shape());
  Tensor<Scalar> grad = std::move(lg.output_grad);
  for (Index i = model.layer_count() - 1; i >= 0; --i) {
    const auto* t = tiling[static_cast<std::size_t>(i)];
    if (!t) {
      grad = backprop_layer(model, i, trace, grad, r.grads.params);
      continue;
    }
    const auto slot = static_cast<std::size_t>(model.weight_slot(i));
    const auto& w = model.parameters()[slot];
    const auto& in = trace.activations[static_cast<std::size_t>(i)];
    if (t->kind == TiledKind::Conv) {
      const auto g = conv_geometry<Scalar>(model.layers()[static_cast<std::size_t>(i)], model.layer_input_shape(i));
      grad = tiled::conv_backward(in, w, grad, r.grads.params[slot], r.grads.params[slot + 1], g, factors(*t), t->index,
                                  r.stream);
    } else {
      grad = tiled::dense_backward(in, w, grad, r.grads.params[slot], r.grads.params[slot + 1], factors(*t), t->index,
                                   r.stream);
    }
  }
  r.grads.input = std::move(grad);
  r.output = std::move(trace.activations.back());
  r.stream.verify();
  return r;
}

}  // namespace convens
