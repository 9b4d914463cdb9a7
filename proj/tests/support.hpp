#pragma once

// Independent oracles and generators shared by the unit and acceptance tests.

#include "convens/imputation/vae.hpp"
#include "convens/nn/loss.hpp"
#include "convens/tiling/executor.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testing {

using namespace convens;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

// Direct-loop reference implementations, written without any engine code.

inline Tensor<double> naive_dense(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b) {
  const Index n = in.dim(0), o = w.dim(0), k = w.dim(1);
  Tensor<double> out(Shape{n, o});
  for (Index r = 0; r < n; ++r) {
    for (Index j = 0; j < o; ++j) {
      double acc = b[j];
      for (Index i = 0; i < k; ++i) acc += in[r * k + i] * w[j * k + i];
      out[r * o + j] = acc;
    }
  }
  return out;
}

inline Tensor<double> naive_conv(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b,
                                 Index sh, Index sw) {
  const Index n = in.dim(0), c = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const Index f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index oh = (h - kh) / sh + 1, ow = (wd - kw) / sw + 1;
  Tensor<double> out(Shape{n, f, oh, ow});
  for (Index s = 0; s < n; ++s)
    for (Index fi = 0; fi < f; ++fi)
      for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x) {
          double acc = b[fi];
          for (Index ci = 0; ci < c; ++ci)
            for (Index ky = 0; ky < kh; ++ky)
              for (Index kx = 0; kx < kw; ++kx)
                acc += in.at({s, ci, y * sh + ky, x * sw + kx}) * w.at({fi, ci, ky, kx});
          out.at({s, fi, y, x}) = acc;
        }
  return out;
}

inline Tensor<double> naive_maxpool(const Tensor<double>& in, Index kh, Index kw) {
  const Index n = in.dim(0), c = in.dim(1), oh = in.dim(2) / kh, ow = in.dim(3) / kw;
  Tensor<double> out(Shape{n, c, oh, ow});
  for (Index s = 0; s < n; ++s)
    for (Index ci = 0; ci < c; ++ci)
      for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x) {
          double m = -INFINITY;
          for (Index ky = 0; ky < kh; ++ky)
            for (Index kx = 0; kx < kw; ++kx) m = std::max(m, in.at({s, ci, y * kh + ky, x * kw + kx}));
          out.at({s, ci, y, x}) = m;
        }
  return out;
}

inline RowMatrix<double> naive_matmul(const RowMatrix<double>& a, const RowMatrix<double>& b) {
  RowMatrix<double> c = RowMatrix<double>::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j)
      for (Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

/// Scalar loss straight from the definition: mean over rows of -log softmax,
/// or mean squared error over every element.
inline double reference_loss(const Tensor<double>& out, const Tensor<double>& target, LossKind kind) {
  double total = 0.0;
  if (kind == LossKind::MSE) {
    for (Index i = 0; i < out.size(); ++i) total += (out[i] - target[i]) * (out[i] - target[i]);
    return total / static_cast<double>(out.size());
  }
  const Index n = out.rows(), c = out.cols();
  for (Index r = 0; r < n; ++r) {
    double z = 0.0;
    for (Index j = 0; j < c; ++j) z += std::exp(out[r * c + j]);
    for (Index j = 0; j < c; ++j) {
      const double p = std::max(std::exp(out[r * c + j]) / z, 1e-12);
      total -= target[r * c + j] * std::log(p);
    }
  }
  return total / static_cast<double>(n);
}

/// ||a - b|| / (||a|| + ||b||), 0 when both vanish.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  const double num = (a.values() - b.values()).norm();
  const double den = a.values().norm() + b.values().norm();
  return den == 0.0 ? 0.0 : num / den;
}

/// Central differences of `f` with respect to every entry of `x`.
inline Tensor<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f, double h = 1e-6) {
  Tensor<double> g(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Worst relative error of the analytic parameter and input gradients of a
/// model loss against central differences.
inline double model_gradient_error(Model<double>& model, Tensor<double> batch, const Tensor<double>& target,
                                   LossKind kind) {
  const auto analytic = backward(model, batch, target, kind);
  const auto loss = [&] { return reference_loss(forward(model, batch), target, kind); };
  double worst = 0.0;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    const auto fd = numeric_gradient(model.parameters()[p], loss);
    worst = std::max(worst, relative_error(analytic.grads.params[p], fd));
  }
  const auto fd_in = numeric_gradient(batch, loss);
  return std::max(worst, relative_error(analytic.grads.input, fd_in));
}

/// VAE loss written out from its definition, for a fixed noise draw.
inline double reference_vae_loss(const VaeModel<double>& vae, const Tensor<double>& x, const RowMatrix<double>& eps) {
  const auto enc = forward(vae.encoder, x);
  const Index n = x.rows(), d = vae.latent;
  RowMatrix<double> z(n, d);
  double kl = 0.0;
  for (Index r = 0; r < n; ++r) {
    for (Index j = 0; j < d; ++j) {
      const double mu = enc[r * 2 * d + j], ls = enc[r * 2 * d + d + j];
      z(r, j) = mu + std::exp(ls) * eps(r, j);
      kl += 0.5 * (mu * mu + std::exp(2 * ls) - 1.0 - 2 * ls);
    }
  }
  Tensor<double> zt(Shape{n, d});
  zt.matrix() = z;
  const auto rec = forward(vae.decoder, zt);
  double sq = 0.0;
  for (Index i = 0; i < x.size(); ++i) sq += (rec[i] - x[i]) * (rec[i] - x[i]);
  return (sq + kl) / static_cast<double>(n);
}

/// Integer-valued parameters and inputs keep every product and sum exact in
/// double arithmetic, so tiled and untiled results must agree bit for bit.
inline void integerize(Model<double>& m, Tensor<double>& x, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-3, 3);
  for (auto& p : m.parameters())
    for (Index i = 0; i < p.size(); ++i) p[i] = d(rng);
  for (Index i = 0; i < x.size(); ++i) x[i] = d(rng);
}

enum class FactorMode { Random, Ones, Maximal };

/// A small model, a batch size and a tiling request over its conv and dense
/// layers. Factors are drawn from the divisors of each tiled extent.
struct TilingCase {
  Model<double> model;
  Index batch = 1;
  TilingRequest request;
};

inline Index random_divisor(Index n, std::mt19937_64& rng) {
  std::vector<Index> d;
  for (Index k = 1; k <= n; ++k) {
    if (n % k == 0) d.push_back(k);
  }
  return d[static_cast<std::size_t>(uniform_index(rng, 0, static_cast<Index>(d.size()) - 1))];
}

inline TilingCase random_tiling_case(std::mt19937_64& rng, FactorMode mode) {
  const auto pick = [&](std::initializer_list<Index> xs) {
    return *(xs.begin() + uniform_index(rng, 0, static_cast<Index>(xs.size()) - 1));
  };
  Shape input;
  std::vector<LayerSpec> layers;
  if (uniform_index(rng, 0, 3) == 0) {
    input = {pick({2, 4, 6, 8})};
  } else {
    const Index c = pick({1, 2, 3, 4});
    const Index h = uniform_index(rng, 6, 10), w = uniform_index(rng, 6, 10);
    input = {c, h, w};
    layers.push_back(LayerSpec::conv2d(pick({1, 2, 4, 6}), 3, 3));
    layers.push_back(LayerSpec::relu());
    if (uniform_index(rng, 0, 1) == 1) layers.push_back(LayerSpec::maxpool2d(2, 2));
    if (uniform_index(rng, 0, 1) == 1) layers.push_back(LayerSpec::conv2d(pick({2, 4}), 2, 2));
    layers.push_back(LayerSpec::flatten());
  }
  if (uniform_index(rng, 0, 1) == 1) {
    layers.push_back(LayerSpec::dense(pick({4, 6, 8})));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::dense(pick({2, 4})));

  TilingCase tc;
  tc.model = Model<double>(input, layers, rng());
  tc.batch = pick({1, 2, 4, 8});
  const auto base = tiling_request_from_model(tc.model, tc.batch, 1, 1, {});
  const auto choose = [&](Index extent) {
    switch (mode) {
      case FactorMode::Ones: return Index{1};
      case FactorMode::Maximal: return extent;
      case FactorMode::Random: break;
    }
    return random_divisor(extent, rng);
  };
  std::vector<Index> factors;
  for (const auto& l : base.layers) factors.push_back(choose(l.outputs()));
  tc.request = tiling_request_from_model(tc.model, tc.batch, choose(tc.batch), choose(base.channels), factors);
  return tc;
}

}  // namespace testing
