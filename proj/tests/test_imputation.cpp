#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "convens/imputation/fill.hpp"
#include "support.hpp"

using namespace convens;

namespace {

EmbeddingMatrix sample_matrix(Index n, Index edges, Index width, std::mt19937_64& rng) {
  std::vector<Index> samples(static_cast<std::size_t>(n));
  std::iota(samples.begin(), samples.end(), Index{100});
  auto m = EmbeddingMatrix::zeros(samples, edges, width);
  std::bernoulli_distribution keep(0.6);
  for (Index k = 0; k < n; ++k) {
    for (Index e = 0; e < edges; ++e) {
      if (k < 2 || keep(rng)) {
        m.mask[static_cast<std::size_t>(k * edges + e)] = 1;
        for (Index j = 0; j < width; ++j) m.slot(k, e)[j] = static_cast<float>(rng() % 1000) / 100.0f;
      }
    }
  }
  return m;
}

std::vector<VaeModel<float>> fresh_vaes(Index edges, Index width) {
  std::vector<VaeModel<float>> out;
  for (Index e = 0; e < edges; ++e) out.push_back(VaeModel<float>::create(width, static_cast<std::uint64_t>(e)));
  return out;
}

}  // namespace

TEST_CASE("VAE layout and parameter count") {
  const auto vae = VaeModel<float>::create(64, 1);
  CHECK(vae.encoder.output_shape() == Shape{64});
  CHECK(vae.decoder.input_shape() == Shape{32});
  CHECK(vae.decoder.output_shape() == Shape{64});
  CHECK(vae.parameter_count() == 14592);
}

TEST_CASE("Gaussian KL matches a Monte Carlo estimate") {
  std::mt19937_64 rng(3);
  for (auto [mu, ls] : {std::pair{0.0, 0.0}, {1.5, -0.7}, {-0.4, 0.9}}) {
    RowMatrix<double> m(1, 1), l(1, 1);
    m(0, 0) = mu;
    l(0, 0) = ls;
    const double sigma = std::exp(ls);
    std::normal_distribution<double> q(mu, sigma);
    double acc = 0.0;
    const int draws = 400000;
    for (int i = 0; i < draws; ++i) {
      const double z = q(rng);
      const double log_q = -0.5 * std::pow((z - mu) / sigma, 2) - ls;
      const double log_p = -0.5 * z * z;
      acc += log_q - log_p;
    }
    CHECK(gaussian_kl<double>(m, l) == doctest::Approx(acc / draws).epsilon(0.01).scale(1.0));
  }
}

TEST_CASE("VAE loss and gradients with frozen noise match the definition") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto vae = VaeModel<double>::create(6, static_cast<std::uint64_t>(trial), 3, 5);
    auto x = testing::random_tensor({4, 6}, rng);
    RowMatrix<double> eps(4, 3);
    for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = std::normal_distribution<double>()(rng);
    const auto g = vae_loss_and_gradients(vae, x, eps);
    CHECK(g.loss.total == doctest::Approx(testing::reference_vae_loss(vae, x, eps)).epsilon(1e-12));
    const auto loss = [&] { return testing::reference_vae_loss(vae, x, eps); };
    for (std::size_t p = 0; p < g.encoder.size(); ++p) {
      CHECK(testing::relative_error(g.encoder[p], testing::numeric_gradient(vae.encoder.parameters()[p], loss)) < 1e-6);
    }
    for (std::size_t p = 0; p < g.decoder.size(); ++p) {
      CHECK(testing::relative_error(g.decoder[p], testing::numeric_gradient(vae.decoder.parameters()[p], loss)) < 1e-6);
    }
  }
}

TEST_CASE("VAE training reduces its loss and is seeded") {
  std::mt19937_64 rng(4);
  Tensor<float> data = testing::random_tensor({256, 8}, rng, 0.0, 2.0).cast<float>();
  VaeTrainOptions opt;
  opt.epochs = 30;
  opt.learning_rate = 1e-3;
  const auto a = train_vae(data, 5, opt);
  const auto b = train_vae(data, 5, opt);
  REQUIRE(a.loss_trace.size() == 30u);
  CHECK(a.loss_trace.back() < a.loss_trace.front());
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(generate(a, 4, 1) == generate(b, 4, 1));
  CHECK(generate(a, 4, 1).shape() == Shape{4, 8});
}

TEST_CASE("fill touches only missing slots") {
  std::mt19937_64 rng(12);
  const auto received = sample_matrix(30, 4, 6, rng);
  const auto vaes = fresh_vaes(4, 6);
  for (auto policy : {FillPolicy::Vae, FillPolicy::Zero, FillPolicy::Mean, FillPolicy::Max}) {
    const auto out = fill(policy, received, vaes, 9);
    CHECK(out.mask == received.mask);
    for (Index k = 0; k < 30; ++k) {
      for (Index e = 0; e < 4; ++e) {
        if (!received.available(k, e)) continue;
        CHECK(std::equal(received.slot(k, e), received.slot(k, e) + 6, out.slot(k, e)));
      }
    }
  }
}

TEST_CASE("fill values follow each policy") {
  std::mt19937_64 rng(13);
  const auto received = sample_matrix(25, 3, 5, rng);
  const auto vaes = fresh_vaes(3, 5);
  const auto zero = fill(FillPolicy::Zero, received, vaes, 1);
  const auto mean = fill(FillPolicy::Mean, received, vaes, 1);
  const auto max = fill(FillPolicy::Max, received, vaes, 1);
  const auto vae = fill(FillPolicy::Vae, received, vaes, 1);
  for (Index e = 0; e < 3; ++e) {
    std::vector<double> sum(5, 0.0), hi(5, -1e30);
    int count = 0;
    for (Index k = 0; k < 25; ++k) {
      if (!received.available(k, e)) continue;
      ++count;
      for (Index j = 0; j < 5; ++j) {
        sum[static_cast<std::size_t>(j)] += received.slot(k, e)[j];
        hi[static_cast<std::size_t>(j)] = std::max<double>(hi[static_cast<std::size_t>(j)], received.slot(k, e)[j]);
      }
    }
    for (Index k = 0; k < 25; ++k) {
      if (received.available(k, e)) continue;
      const auto z = slot_latent(1, e, received.sample_index[static_cast<std::size_t>(k)], 32);
      const auto expected = decode(vaes[static_cast<std::size_t>(e)], z);
      for (Index j = 0; j < 5; ++j) {
        CHECK(zero.slot(k, e)[j] == 0.0f);
        CHECK(mean.slot(k, e)[j] == doctest::Approx(sum[static_cast<std::size_t>(j)] / count));
        CHECK(max.slot(k, e)[j] == static_cast<float>(hi[static_cast<std::size_t>(j)]));
        // Batched and single-row decodes may round differently.
        CHECK(vae.slot(k, e)[j] == doctest::Approx(expected[j]).epsilon(1e-5));
      }
    }
  }
  // The draw depends on the dataset index, not the row position.
  auto shuffled = received.rows({3, 2, 1, 0});
  fill_in_place(FillPolicy::Vae, shuffled, vaes, 1);
  const auto direct = vae.rows({3, 2, 1, 0});
  CHECK((shuffled.values.values() - direct.values.values()).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("fill errors") {
  std::mt19937_64 rng(14);
  auto received = sample_matrix(5, 2, 3, rng);
  const auto one = fresh_vaes(1, 3);
  CHECK_THROWS_AS(fill(FillPolicy::Vae, received, one, 0), ConfigError);
  auto empty = EmbeddingMatrix::zeros({0, 1, 2}, 2, 3);
  CHECK_THROWS_WITH_AS(fill(FillPolicy::Mean, empty, {}, 0), doctest::Contains("edge 0"), ConfigError);
  CHECK_THROWS_AS(parse_fill_policy("median"), ConfigError);
  CHECK(parse_fill_policy("max") == FillPolicy::Max);
}
