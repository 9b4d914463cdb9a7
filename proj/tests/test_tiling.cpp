#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "convens/tiling/plan.hpp"
#include "support.hpp"

using namespace convens;
using testing::FactorMode;

namespace {

Model<float> lenet_like() {
  return Model<float>({1, 28, 28}, {LayerSpec::conv2d(2, 5, 5), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
                                    LayerSpec::conv2d(2, 5, 5), LayerSpec::flatten(), LayerSpec::dense(10)},
                      1);
}

double tensor_rel(const Tensor<double>& a, const Tensor<double>& b) { return testing::relative_error(a, b); }

}  // namespace

TEST_CASE("plan shapes for a two-conv network") {
  const auto plan = plan_tiling(tiling_request_from_model(lenet_like(), 4, 2, 1, {2, 1, 1}));
  REQUIRE(plan.layers.size() == 3u);
  CHECK(plan.label() == "BS_f=2-F_f=2,1,1");
  CHECK(plan.layers[0].weight.str() == "[2,1][1,1][5][5]");
  CHECK(plan.layers[0].output.str() == "[2,2][2,1][24][24]");
  CHECK(plan.layers[1].weight.str() == "[1,2][2,1][5][5]");
  CHECK(plan.layers[1].output.str() == "[2,1][2,2][8][8]");
  CHECK(plan.layers[2].weight.str() == "[1,1][128,10]");
  CHECK(plan.layers[0].loss_grad.str() == plan.layers[0].output.str());
  CHECK(plan.layers[1].weight_grad.str() == plan.layers[1].weight.str());
  CHECK(plan.layers[0].lanes(2) == 4);
  CHECK(plan.layers[1].lanes(2) == 4);
  CHECK(plan.layers[2].lanes(2) == 2);
  CHECK(plan.layers[1].output.original() == Shape{4, 2, 8, 8});
  const auto with_c = plan_tiling(tiling_request_from_model(lenet_like(), 4, 1, 1, {1, 1, 1}));
  CHECK(with_c.label() == "BS_f=1-F_f=1,1,1");
}

TEST_CASE("plan errors name the layer and the factor") {
  const auto m = lenet_like();
  CHECK_THROWS_WITH_AS(plan_tiling(tiling_request_from_model(m, 4, 1, 1, {3, 1, 1})),
                       "layer 1 (conv): factor f^1=3 does not divide F^1=2", ConfigError);
  CHECK_THROWS_WITH_AS(plan_tiling(tiling_request_from_model(m, 4, 3, 1, {1, 1, 1})), doctest::Contains("BS_f=3"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(plan_tiling(tiling_request_from_model(m, 4, 1, 1, {1, 1})), doctest::Contains("3 layers"),
                       ConfigError);
  CHECK_THROWS_AS(plan_tiling(tiling_request_from_model(m, 4, 1, 1, {1, 1, 0})), ConfigError);

  TilingRequest bad;
  bad.channels = 4;
  bad.layers = {TiledLayer{TiledKind::Dense, 0, 0, 1, 1, 1, 1, 4, 6, -1},
                TiledLayer{TiledKind::Conv, 2, 6, 1, 1, 1, 1, 0, 0, -1}};
  bad.factors = {1, 1};
  CHECK_THROWS_WITH_AS(plan_tiling(bad), doctest::Contains("convolution after a dense layer"), ConfigError);
}

TEST_CASE("tiled matmul is exact on integers and close on floats") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    const Index x = testing::uniform_index(rng, 1, 9), z = testing::uniform_index(rng, 1, 9);
    const Index f = testing::uniform_index(rng, 1, 6), y = f * testing::uniform_index(rng, 1, 5);
    RowMatrix<std::int64_t> a(x, y), b(y, z);
    std::uniform_int_distribution<std::int64_t> d(-50, 50);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = d(rng);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = d(rng);
    RowMatrix<std::int64_t> ref = RowMatrix<std::int64_t>::Zero(x, z);
    for (Index i = 0; i < x; ++i)
      for (Index j = 0; j < z; ++j)
        for (Index k = 0; k < y; ++k) ref(i, j) += a(i, k) * b(k, j);
    CHECK(tiled_matmul(a, b, f) == ref);

    const RowMatrix<double> ad = a.cast<double>() / 7.0, bd = b.cast<double>() / 3.0;
    const RowMatrix<float> got = tiled_matmul<float>(ad.cast<float>(), bd.cast<float>(), f);
    const RowMatrix<double> naive = testing::naive_matmul(ad, bd);
    CHECK((got.cast<double>() - naive).norm() <= 1e-5 * std::max(1.0, naive.norm()));
  }
  RowMatrix<double> a = RowMatrix<double>::Ones(2, 6), b = RowMatrix<double>::Ones(6, 2);
  CHECK_THROWS_AS(tiled_matmul(a, b, 4), ConfigError);
}

TEST_CASE("unit factors reproduce the engine bit for bit") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    auto tc = testing::random_tiling_case(rng, FactorMode::Ones);
    auto m = tc.model.cast<float>();
    Shape xs{tc.batch};
    xs.insert(xs.end(), m.input_shape().begin(), m.input_shape().end());
    const auto x = testing::random_tensor(xs, rng).cast<float>();
    const auto t = testing::random_tensor({tc.batch, m.output_shape()[0]}, rng).cast<float>();
    const auto plan = plan_tiling(tc.request);
    const auto tiled = execute_plan(plan, m, x, t, LossKind::MSE);
    const auto ref = backward(m, x, t, LossKind::MSE);
    CHECK(tiled.output == ref.output);
    CHECK(tiled.loss == ref.loss);
    for (std::size_t p = 0; p < ref.grads.params.size(); ++p) CHECK(tiled.grads.params[p] == ref.grads.params[p]);
    CHECK(tiled.grads.input == ref.grads.input);
  }
}

TEST_CASE("random plans execute exactly on integers and closely on floats") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const auto mode = trial % 10 == 0 ? FactorMode::Maximal : FactorMode::Random;
    auto tc = testing::random_tiling_case(rng, mode);
    CAPTURE(trial);
    const auto plan = plan_tiling(tc.request);
    CHECK_NOTHROW(verify_plan(plan));
    Shape xs{tc.batch};
    xs.insert(xs.end(), tc.model.input_shape().begin(), tc.model.input_shape().end());
    auto x = testing::random_tensor(xs, rng);
    const Index outs = tc.model.output_shape()[0];

    // Integers: MSE over batch * outputs, a power of two, keeps gradients dyadic.
    auto mi = tc.model;
    auto xi = x;
    testing::integerize(mi, xi, rng);
    Tensor<double> ti(Shape{tc.batch, outs});
    for (Index i = 0; i < ti.size(); ++i) ti[i] = static_cast<double>(i % 3);
    const auto exact = execute_plan(plan, mi, xi, ti, LossKind::MSE);
    const auto exact_ref = backward(mi, xi, ti, LossKind::MSE);
    CHECK(exact.output == exact_ref.output);
    for (std::size_t p = 0; p < exact_ref.grads.params.size(); ++p) {
      CHECK(exact.grads.params[p] == exact_ref.grads.params[p]);
    }

    // Floats against the double engine.
    const auto mf = tc.model.cast<float>();
    std::vector<int> labels;
    for (Index i = 0; i < tc.batch; ++i) labels.push_back(static_cast<int>(i % outs));
    const auto yf = one_hot<float>(labels, static_cast<int>(outs));
    const auto got = execute_plan(plan, mf, x.cast<float>(), yf, LossKind::CrossEntropy);
    const auto ref = backward(tc.model, x, one_hot<double>(labels, static_cast<int>(outs)), LossKind::CrossEntropy);
    CHECK(tensor_rel(got.output.cast<double>(), ref.output) <= 1e-5);
    for (std::size_t p = 0; p < ref.grads.params.size(); ++p) {
      CHECK(tensor_rel(got.grads.params[p].cast<double>(), ref.grads.params[p]) <= 1e-5);
    }
    CHECK(got.stream.consumed() > 0);
  }
}

TEST_CASE("forward products per layer equal the lane count") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto tc = testing::random_tiling_case(rng, FactorMode::Random);
    const auto plan = plan_tiling(tc.request);
    Shape xs{tc.batch};
    xs.insert(xs.end(), tc.model.input_shape().begin(), tc.model.input_shape().end());
    const auto x = testing::random_tensor(xs, rng);
    const auto t = testing::random_tensor({tc.batch, tc.model.output_shape()[0]}, rng);
    const auto r = execute_plan(plan, tc.model, x, t, LossKind::MSE);
    REQUIRE(r.forward_products.size() == plan.layers.size());
    for (std::size_t k = 0; k < plan.layers.size(); ++k) {
      const auto& l = plan.layers[k];
      CHECK(r.forward_products[k] == tc.request.batch_factor * l.out_factor * l.in_factor);
    }
  }
}

TEST_CASE("tile stream audit") {
  TileStream s;
  const auto a = s.produce("a", 2);
  s.consume(a);
  CHECK_THROWS_WITH_AS(s.verify(), "tile a read 1 of 2 times", NumericError);
  s.consume(a);
  CHECK_NOTHROW(s.verify());
  CHECK_THROWS_AS(s.consume(a), NumericError);

  // Dense forward: every x tile feeds f_out products and every w tile BS_f.
  std::mt19937_64 rng(2);
  const auto x = testing::random_tensor({4, 6}, rng), w = testing::random_tensor({4, 6}, rng);
  const Tensor<double> b(Shape{4});
  TileStream ds;
  tiled::dense_forward(x, w, b, tiled::Factors{2, 4, 3}, 1, ds);
  ds.verify();
  CHECK(ds.produced() == 2 * 3 + 4 * 3);
  CHECK(ds.consumed() == 2 * (2 * 4 * 3));
}

TEST_CASE("plan that does not match the model is rejected") {
  const auto m = lenet_like();
  const auto plan = plan_tiling(tiling_request_from_model(m, 4, 1, 1, {1, 1, 1}));
  Tensor<float> x(Shape{2, 1, 28, 28});
  CHECK_THROWS_AS(execute_plan(plan, m, x, Tensor<float>(Shape{2, 10}), LossKind::MSE), ConfigError);
}

TEST_CASE("plan reports") {
  const auto plan = plan_tiling(tiling_request_from_model(lenet_like(), 4, 2, 1, {2, 1, 1}));
  const auto text = plan_report_text(plan);
  CHECK(text.find("layer 1 conv  f=2  lanes=4") != std::string::npos);
  const auto j = plan_report_json(plan);
  CHECK(j["label"] == "BS_f=2-F_f=2,1,1");
}
