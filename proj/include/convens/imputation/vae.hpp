#pragma once

#include "convens/nn/train.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace convens {

inline constexpr Index kVaeLatent = 32;
inline constexpr Index kVaeHidden = 64;

/// Encoder: dense(64) -> relu -> dense(2d) whose halves are mu and log sigma.
/// Decoder: dense(64) -> relu -> dense(L_com).
template <typename Scalar>
struct VaeModel {
  Model<Scalar> encoder;
  Model<Scalar> decoder;
  Index width = 0;
  Index latent = kVaeLatent;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::vector<double> loss_trace;

  static VaeModel create(Index width, std::uint64_t seed, Index latent = kVaeLatent, Index hidden = kVaeHidden) {
    VaeModel v;
    v.width = width;
    v.latent = latent;
    v.seed = seed;
    v.encoder = Model<Scalar>(Shape{width}, {LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dense(2 * latent)},
                              derive_seed(seed, "vae-encoder"));
    v.decoder = Model<Scalar>(Shape{latent}, {LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dense(width)},
                              derive_seed(seed, "vae-decoder"));
    return v;
  }

  Index parameter_count() const { return encoder.parameter_count() + decoder.parameter_count(); }

  template <typename To>
  VaeModel<To> cast() const {
    VaeModel<To> v;
    v.encoder = encoder.template cast<To>();
    v.decoder = decoder.template cast<To>();
    v.width = width;
    v.latent = latent;
    v.seed = seed;
    v.epochs = epochs;
    v.loss_trace = loss_trace;
    return v;
  }
};

/// KL[N(mu, sigma) || N(0, I)] summed over latent dims, averaged over rows.
template <typename Scalar>
double gaussian_kl(const RowMatrix<Scalar>& mu, const RowMatrix<Scalar>& log_sigma) {
  if (mu.rows() == 0) return 0.0;
  const auto m = mu.template cast<double>().array();
  const auto ls = log_sigma.template cast<double>().array();
  return 0.5 * (m.square() + (2.0 * ls).exp() - 1.0 - 2.0 * ls).sum() / static_cast<double>(mu.rows());
}

struct VaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

template <typename Scalar>
struct VaeGradients {
  VaeLoss loss;
  std::vector<Tensor<Scalar>> encoder;
  std::vector<Tensor<Scalar>> decoder;
};

/// Per-row loss ||x - dec(z)||^2 + KL with z = mu + sigma * eps, averaged over
/// rows, and its exact gradients for a fixed noise draw `eps` (rows x latent).
template <typename Scalar>
VaeGradients<Scalar> vae_loss_and_gradients(const VaeModel<Scalar>& vae, const Tensor<Scalar>& batch,
                                            const RowMatrix<Scalar>& eps) {
  const Index n = batch.rows();
  const Index d = vae.latent;
  if (eps.rows() != n || eps.cols() != d) throw ShapeError("vae: noise shape does not match batch");
  auto enc = forward_trace(vae.encoder, batch);
  const auto stats = enc.output().matrix();
  const RowMatrix<Scalar> mu = stats.leftCols(d);
  const RowMatrix<Scalar> log_sigma = stats.rightCols(d);
  const RowMatrix<Scalar> sigma = log_sigma.array().exp().matrix();
  Tensor<Scalar> z(Shape{n, d});
  z.matrix() = mu + sigma.cwiseProduct(eps);

  auto dec = forward_trace(vae.decoder, z);
  const auto diff = (dec.output().values() - batch.values()).eval();
  VaeGradients<Scalar> g;
  const double inv_n = 1.0 / static_cast<double>(std::max<Index>(n, 1));
  g.loss.reconstruction = diff.template cast<double>().squaredNorm() * inv_n;
  g.loss.kl = gaussian_kl<Scalar>(mu, log_sigma);
  g.loss.total = g.loss.reconstruction + g.loss.kl;

  const auto scale = static_cast<Scalar>(inv_n);
  Tensor<Scalar> d_out(dec.output().shape(), diff * (Scalar(2) * scale));
  auto dec_grads = backward(vae.decoder, dec, d_out);
  const auto dz = dec_grads.input.matrix();

  Tensor<Scalar> d_stats(enc.output().shape());
  auto ds = d_stats.matrix();
  ds.leftCols(d) = dz + mu * scale;
  ds.rightCols(d) = dz.cwiseProduct(sigma).cwiseProduct(eps) +
                    ((sigma.array().square() - Scalar(1)) * scale).matrix();
  auto enc_grads = backward(vae.encoder, enc, d_stats);
  g.encoder = std::move(enc_grads.params);
  g.decoder = std::move(dec_grads.params);
  return g;
}

template <typename Scalar>
RowMatrix<Scalar> standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  RowMatrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

/// Adam state for incremental VAE training (whole-corpus or batch-at-a-time).
template <typename Scalar>
class VaeTrainer {
 public:
  VaeTrainer(VaeModel<Scalar>& vae, double learning_rate, std::uint64_t seed)
      : vae_(&vae),
        enc_opt_(OptimizerState<Scalar>::adam(learning_rate)),
        dec_opt_(OptimizerState<Scalar>::adam(learning_rate)),
        rng_(make_rng(derive_seed(seed, "vae-noise"))) {}

  VaeLoss step(const Tensor<Scalar>& batch) {
    const auto eps = standard_normal<Scalar>(batch.rows(), vae_->latent, rng_);
    auto g = vae_loss_and_gradients(*vae_, batch, eps);
    if (!std::isfinite(g.loss.total)) throw NumericError("vae: non-finite loss");
    optimizer_step(enc_opt_, vae_->encoder.parameters(), g.encoder);
    optimizer_step(dec_opt_, vae_->decoder.parameters(), g.decoder);
    ++steps_;
    return g.loss;
  }

  std::uint64_t steps() const { return steps_; }

 private:
  VaeModel<Scalar>* vae_;
  OptimizerState<Scalar> enc_opt_;
  OptimizerState<Scalar> dec_opt_;
  Rng rng_;
  std::uint64_t steps_ = 0;
};

struct VaeTrainOptions {
  int epochs = 50;
  Index batch_size = 64;
  double learning_rate = 1e-4;
};

/// Trains a fresh VAE on `embeddings` (rows x L_com) with Adam.
template <typename Scalar>
VaeModel<Scalar> train_vae(const Tensor<Scalar>& embeddings, std::uint64_t seed, const VaeTrainOptions& options = {}) {
  if (embeddings.rank() != 2 || embeddings.rows() == 0) throw ShapeError("vae: embeddings must be a nonempty matrix");
  auto vae = VaeModel<Scalar>::create(embeddings.cols(), seed);
  VaeTrainer<Scalar> trainer(vae, options.learning_rate, seed);
  const Index n = embeddings.rows();
  const Index bs = std::max<Index>(1, options.batch_size);
  for (int e = 0; e < options.epochs; ++e) {
    const auto order = epoch_permutation(n, derive_seed(seed, "vae-shuffle"), static_cast<std::uint64_t>(e));
    double total = 0.0;
    for (Index s = 0; s < n; s += bs) {
      const Index end = std::min(n, s + bs);
      std::vector<Index> idx(order.begin() + s, order.begin() + end);
      try {
        total += trainer.step(embeddings.gather_rows(idx)).total * static_cast<double>(end - s);
      } catch (const NumericError& err) {
        throw NumericError("vae training diverged at epoch " + std::to_string(e) + ": " + err.what());
      }
    }
    vae.loss_trace.push_back(total / static_cast<double>(n));
  }
  vae.epochs = options.epochs;
  return vae;
}

/// Decode latent rows z (rows x latent) into embeddings.
template <typename Scalar>
Tensor<Scalar> decode(const VaeModel<Scalar>& vae, const RowMatrix<Scalar>& z) {
  if (z.rows() == 0) return Tensor<Scalar>(Shape{0, vae.width});
  Tensor<Scalar> in(Shape{z.rows(), z.cols()});
  in.matrix() = z;
  return forward(vae.decoder, in);
}

/// `count` embeddings decoded from z ~ N(0, I).
template <typename Scalar>
Tensor<Scalar> generate(const VaeModel<Scalar>& vae, Index count, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, "vae-generate"));
  return decode(vae, standard_normal<Scalar>(count, vae.latent, rng));
}

}  // namespace convens
