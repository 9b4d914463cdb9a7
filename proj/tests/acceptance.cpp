// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 1 2 3 4`.

#include "convens/comms/comms.hpp"
#include "convens/ensemble/ensemble.hpp"
#include "convens/pipeline/experiment.hpp"
#include "convens/tiling/plan.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace convens;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << " " << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

// 1. Communication counts.
void criterion_counts() {
  const auto t0 = Clock::now();
  ScenarioConfig s3;
  s3.scenario = Scenario::S3;
  s3.epochs = 100;
  ScenarioConfig s2 = s3;
  s2.scenario = Scenario::S2;
  s2.decode_epochs = 20;
  const Index c3 = plan_schedule(s3, 50000, 20).count();
  const Index c2 = plan_schedule(s2, 50000, 20).count();
  const double t = seconds_since(t0);
  report(1, "communication counts", c3 == 39063 && c2 == 7813 && t < 1.0,
         "S3=" + std::to_string(c3) + " (want 39063), S2=" + std::to_string(c2) + " (want 7813), " + fmt("%.3f s", t));
}

// 2. Memory table.
void criterion_memory() {
  const auto t0 = Clock::now();
  const auto ledger = [](Scenario s, int decode, Index per_edge) {
    ScenarioConfig c;
    c.scenario = s;
    c.epochs = 100;
    c.decode_epochs = decode;
    std::vector<Index> rows(20, per_edge);
    return account(plan_schedule(c, 50000, 20), rows);
  };
  bool ok = true;
  std::ostringstream os;
  const auto check = [&](const char* what, double got, double want) {
    const bool pass = std::abs(got - want) <= 0.05 + 1e-9;
    ok = ok && pass;
    os << what << "=" << fmt("%.1f", got) << (pass ? "" : "(want " + fmt("%.2f", want) + ")") << " ";
  };
  check("transfer@30000", megabytes_1dp(ledger(Scenario::S1, 0, 30000).transfer_bytes), 7.7);
  check("transfer@35000", megabytes_1dp(ledger(Scenario::S1, 0, 35000).transfer_bytes), 9.0);
  check("transfer@43500", megabytes_1dp(ledger(Scenario::S1, 0, 43500).transfer_bytes), 11.1);
  check("server_S1", megabytes_1dp(ledger(Scenario::S1, 0, 30000).server_memory_bytes), 256.0);
  const auto s2 = ledger(Scenario::S2, 20, 30000);
  const auto s3 = ledger(Scenario::S3, 0, 30000);
  check("server_S2", megabytes_1dp(s2.server_memory_bytes), 0.7);
  check("server_S3", megabytes_1dp(s3.server_memory_bytes), 0.0);
  check("per_transfer_S2", megabytes_1dp(s2.transfer_bytes), 0.03);
  check("per_transfer_S3", megabytes_1dp(s3.transfer_bytes), 0.03);
  const double t = seconds_since(t0);
  report(2, "memory accounting", ok && t < 1.0, os.str() + fmt("%.3f s", t));
}

// 3. Tiling equivalence.
void criterion_tiling() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  int cases = 0, bad = 0, ones = 0, maximal = 0;
  double worst = 0.0;
  std::string first_bad;
  const auto fail = [&](const std::string& why) {
    if (bad++ == 0) first_bad = why;
  };

  for (int k = 0; k < 60; ++k, ++cases) {
    const Index x = testing::uniform_index(rng, 1, 12), z = testing::uniform_index(rng, 1, 12);
    const Index y = testing::uniform_index(rng, 1, 24);
    const Index f = k % 3 == 0 ? y : testing::random_divisor(y, rng);
    RowMatrix<std::int64_t> a(x, y), b(y, z);
    std::uniform_int_distribution<std::int64_t> d(-100, 100);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = d(rng);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = d(rng);
    const RowMatrix<double> ref = testing::naive_matmul(a.cast<double>(), b.cast<double>());
    if (tiled_matmul(a, b, f).cast<double>() != ref) fail("integer matmul");
    const RowMatrix<double> ad = a.cast<double>() / 9.0, bd = b.cast<double>() / 7.0;
    const RowMatrix<double> naive = testing::naive_matmul(ad, bd);
    const double err = (tiled_matmul<float>(ad.cast<float>(), bd.cast<float>(), f).cast<double>() - naive).norm() /
                       std::max(naive.norm(), 1e-30);
    worst = std::max(worst, err);
    if (err > 1e-5) fail("float matmul");
  }

  for (int k = 0; k < 200; ++k, ++cases) {
    const auto mode = k % 10 == 0 ? testing::FactorMode::Ones
                      : k % 10 == 1 ? testing::FactorMode::Maximal
                                    : testing::FactorMode::Random;
    ones += mode == testing::FactorMode::Ones;
    maximal += mode == testing::FactorMode::Maximal;
    auto tc = testing::random_tiling_case(rng, mode);
    TilingPlan plan;
    try {
      plan = plan_tiling(tc.request);
      verify_plan(plan);
    } catch (const std::exception& e) {
      fail(std::string("plan: ") + e.what());
      continue;
    }
    // Shape algebra: factor * inner = extent, factors chain, tile counts.
    Index prev = tc.request.channel_factor;
    for (const auto& l : plan.layers) {
      for (const auto* s : {&l.weight, &l.output, &l.loss_grad, &l.weight_grad}) {
        Index tiles = 1;
        for (const auto& ax : s->axes) {
          if (ax.factor * ax.inner() != ax.extent) fail("axis extent");
          tiles *= ax.factor;
        }
        if (tiles != s->tiles()) fail("tile count");
      }
      const auto slot = static_cast<std::size_t>(tc.model.weight_slot(l.model_layer));
      if (shape_product(l.weight.original()) != tc.model.parameters()[slot].size()) fail("weight extent");
      if (shape_product(l.output.original()) != tc.batch * shape_product(tc.model.output_shape(l.model_layer))) {
        fail("output extent");
      }
      if (l.in_factor != prev) fail("factor chain");
      prev = l.out_factor;
    }

    Shape xs{tc.batch};
    xs.insert(xs.end(), tc.model.input_shape().begin(), tc.model.input_shape().end());
    auto x = testing::random_tensor(xs, rng);
    const Index outs = tc.model.output_shape()[0];

    auto mi = tc.model;
    auto xi = x;
    testing::integerize(mi, xi, rng);
    Tensor<double> ti(Shape{tc.batch, outs});
    for (Index i = 0; i < ti.size(); ++i) ti[i] = static_cast<double>(i % 3);
    const auto exact = execute_plan(plan, mi, xi, ti, LossKind::MSE);
    const auto exact_ref = backward(mi, xi, ti, LossKind::MSE);
    if (!(exact.output == exact_ref.output)) fail("integer forward");
    for (std::size_t p = 0; p < exact_ref.grads.params.size(); ++p) {
      if (!(exact.grads.params[p] == exact_ref.grads.params[p])) fail("integer gradient");
    }

    std::vector<int> labels;
    for (Index i = 0; i < tc.batch; ++i) labels.push_back(static_cast<int>(i % outs));
    const auto got = execute_plan(plan, tc.model.cast<float>(), x.cast<float>(),
                                  one_hot<float>(labels, static_cast<int>(outs)), LossKind::CrossEntropy);
    const auto ref = backward(tc.model, x, one_hot<double>(labels, static_cast<int>(outs)), LossKind::CrossEntropy);
    double e = testing::relative_error(got.output.cast<double>(), ref.output);
    for (std::size_t p = 0; p < ref.grads.params.size(); ++p) {
      e = std::max(e, testing::relative_error(got.grads.params[p].cast<double>(), ref.grads.params[p]));
    }
    worst = std::max(worst, e);
    if (e > 1e-5) fail("float plan execution");
  }
  const double t = seconds_since(t0);
  report(3, "tiling equivalence", bad == 0 && cases >= 200 && t < 30.0,
         std::to_string(cases) + " cases (" + std::to_string(ones) + " all-ones, " + std::to_string(maximal) +
             " maximal), " + std::to_string(bad) + " failing" + (bad ? " [" + first_bad + "]" : "") +
             ", worst float rel " + fmt("%.2e", worst) + ", " + fmt("%.1f s", t));
}

// 4. Gradient fidelity.
void criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4242);
  std::map<std::string, double> worst;
  int instances = 0;
  for (int k = 0; k < 128; ++k, ++instances) {
    const auto seed = rng();
    const int kind = k % 8;
    double err = 0.0;
    std::string name;
    if (kind == 6) {
      name = "vae";
      auto vae = VaeModel<double>::create(testing::uniform_index(rng, 2, 8), seed, testing::uniform_index(rng, 1, 4),
                                          testing::uniform_index(rng, 2, 6));
      auto x = testing::random_tensor({testing::uniform_index(rng, 1, 4), vae.width}, rng);
      RowMatrix<double> eps(x.rows(), vae.latent);
      for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = std::normal_distribution<double>()(rng);
      const auto g = vae_loss_and_gradients(vae, x, eps);
      const auto loss = [&] { return testing::reference_vae_loss(vae, x, eps); };
      for (std::size_t p = 0; p < g.encoder.size(); ++p) {
        err = std::max(err, testing::relative_error(g.encoder[p],
                                                    testing::numeric_gradient(vae.encoder.parameters()[p], loss)));
      }
      for (std::size_t p = 0; p < g.decoder.size(); ++p) {
        err = std::max(err, testing::relative_error(g.decoder[p],
                                                    testing::numeric_gradient(vae.decoder.parameters()[p], loss)));
      }
    } else {
      Shape in;
      std::vector<LayerSpec> layers;
      const Index classes = testing::uniform_index(rng, 2, 4);
      switch (kind) {
        case 0:
          name = "dense";
          in = {testing::uniform_index(rng, 1, 7)};
          layers = {LayerSpec::dense(testing::uniform_index(rng, 1, 6)), LayerSpec::relu(), LayerSpec::dense(classes)};
          break;
        case 1:
          name = "conv";
          in = {testing::uniform_index(rng, 1, 3), testing::uniform_index(rng, 3, 6), testing::uniform_index(rng, 3, 6)};
          layers = {LayerSpec::conv2d(testing::uniform_index(rng, 1, 3), 2, 3), LayerSpec::flatten(),
                    LayerSpec::dense(classes)};
          break;
        case 2:
          name = "strided_conv";
          in = {testing::uniform_index(rng, 1, 2), 7, 9};
          layers = {LayerSpec::conv2d(2, 3, 3, testing::uniform_index(rng, 1, 3), testing::uniform_index(rng, 1, 3)),
                    LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(classes)};
          break;
        case 3:
          name = "maxpool";
          in = {testing::uniform_index(rng, 1, 2), 6, 6};
          layers = {LayerSpec::conv2d(2, 3, 3), LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
                    LayerSpec::dense(classes)};
          break;
        case 4:
          name = "identity";
          in = {testing::uniform_index(rng, 2, 5)};
          layers = {LayerSpec::dense(3), LayerSpec::identity(), LayerSpec::dense(classes)};
          break;
        case 5:
          name = "mse_head";
          in = {testing::uniform_index(rng, 2, 5)};
          layers = {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(1)};
          break;
        default: {
          name = "ensemble_conv";
          const Index edges = testing::uniform_index(rng, 2, 8), width = 2 * testing::uniform_index(rng, 1, 6);
          auto cfg = EnsembleConfig::standard(edges, width, Task::Classification, static_cast<int>(classes));
          cfg.filters = testing::uniform_index(rng, 1, 4);
          cfg.hidden = testing::uniform_index(rng, 2, 6);
          cfg.seed = seed;
          auto model = make_ensemble_model<double>(cfg);
          in = model.input_shape();
          layers = model.layers();
        }
      }
      Model<double> model(in, layers, seed);
      for (std::size_t p = 1; p < model.parameters().size(); p += 2) {
        model.parameters()[p] = testing::random_tensor(model.parameters()[p].shape(), rng, -0.1, 0.1);
      }
      const Index n = testing::uniform_index(rng, 1, 3);
      Shape xs{n};
      xs.insert(xs.end(), in.begin(), in.end());
      const auto x = testing::random_tensor(xs, rng);
      if (kind == 5) {
        err = testing::model_gradient_error(model, x, testing::random_tensor({n, 1}, rng), LossKind::MSE);
      } else {
        std::vector<int> labels;
        for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(testing::uniform_index(rng, 0, classes - 1)));
        err = testing::model_gradient_error(model, x, one_hot<double>(labels, static_cast<int>(classes)),
                                            LossKind::CrossEntropy);
      }
    }
    worst[name] = std::max(worst[name], err);
  }
  double overall = 0.0;
  std::ostringstream os;
  for (const auto& [name, e] : worst) {
    overall = std::max(overall, e);
    os << name << "=" << fmt("%.1e", e) << " ";
  }
  const double t = seconds_since(t0);
  report(4, "gradient fidelity", overall < 1e-4 && instances >= 100 && t < 60.0,
         std::to_string(instances) + " instances, worst " + os.str() + fmt("%.1f s", t));
}

// The desk benchmark shared by criteria 5-8.
ExperimentConfig benchmark_config(std::uint64_t seed, double alpha) {
  ExperimentConfig c;
  c.train_samples = 5000;
  c.test_samples = 1000;
  c.classes = 10;
  c.edges = 10;
  c.alpha = alpha;
  c.delta = 0.2;
  c.seed = seed;
  return c;
}

constexpr int kSeeds = 5;

struct SeedRun {
  std::map<std::string, double> accuracy;
  std::map<std::string, std::uint64_t> bytes;
  double best_edge = 0.0;
  double majority = 0.0;
  double average = 0.0;
};

struct Prepared {
  ExperimentConfig config;
  ExperimentData data;
  EdgeAssignment assignment;
  std::vector<EdgeArtifact> edges;
  std::vector<VaeModel<float>> vaes;
};

Prepared prepare(const ExperimentConfig& c) {
  Prepared p{c, load_experiment_data(c), {}, {}, {}};
  p.assignment = make_assignment(c, p.data);
  p.edges = train_edges(c, p.data, p.assignment);
  p.vaes = train_vaes(c, p.data, p.assignment, p.edges);
  return p;
}

ScenarioRun run(const Prepared& p, const std::string& scenario, const std::string& fill, int decode = 0) {
  auto c = p.config;
  c.scenario = scenario;
  c.fill = fill;
  c.decode_epochs = decode;
  return run_scenario(c, p.data, p.assignment, p.edges, p.vaes);
}

void criteria_benchmark(bool want5, bool want6, bool want7, bool want8) {
  const auto t0 = Clock::now();
  std::vector<SeedRun> runs(kSeeds);
  std::vector<std::string> fills = {"vae"};
  if (want5) fills = {"vae", "zero", "mean", "max"};
  double fill_seconds = 0.0, scenario_seconds = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    auto t = Clock::now();
    const auto p = prepare(benchmark_config(static_cast<std::uint64_t>(s), 0.3));
    auto& r = runs[static_cast<std::size_t>(s)];
    for (const auto& e : p.edges) r.best_edge = std::max(r.best_edge, e.test_score);
    for (const auto& f : fills) {
      const auto out = run(p, "S1", f);
      r.accuracy[f] = out.report.accuracy;
      if (f == "vae") {
        r.majority = out.majority->accuracy;
        r.average = out.average->accuracy;
        r.bytes["S1"] = out.ledger.cumulative_bytes;
      }
    }
    fill_seconds += seconds_since(t);
    std::cout << "  seed " << s << ":";
    for (const auto& f : fills) std::cout << " " << f << "=" << fmt("%.3f", r.accuracy[f]);
    std::cout << " best_edge=" << fmt("%.3f", r.best_edge) << " majority=" << fmt("%.3f", r.majority)
              << " average=" << fmt("%.3f", r.average) << std::flush;
    if (want7) {
      t = Clock::now();
      for (auto [name, decode] : {std::pair<std::string, int>{"S2", 20}, {"S3", 0}}) {
        const auto out = run(p, name, "vae", decode);
        r.accuracy[name] = out.report.accuracy;
        r.bytes[name] = out.ledger.cumulative_bytes;
        std::cout << " " << name << "=" << fmt("%.3f", out.report.accuracy);
      }
      scenario_seconds += seconds_since(t);
    }
    std::cout << std::endl;
  }
  const auto med = [&](const std::string& key) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.accuracy.at(key));
    return median(v);
  };
  const auto med_of = [&](double SeedRun::*field) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.*field);
    return median(v);
  };

  if (want5) {
    const double vae = med("vae"), zero = med("zero"), mean = med("mean"), max = med("max");
    report(5, "filling-method ordering", vae > zero && vae > mean && vae > max && fill_seconds < 900.0,
           "median accuracy vae=" + fmt("%.4f", vae) + " zero=" + fmt("%.4f", zero) + " mean=" + fmt("%.4f", mean) +
               " max=" + fmt("%.4f", max) + " (need vae above all three), " + fmt("%.0f s", fill_seconds));
  }
  if (want6) {
    const double ens = med("vae"), best = med_of(&SeedRun::best_edge);
    const double maj = med_of(&SeedRun::majority), avg = med_of(&SeedRun::average);
    report(6, "ensemble boost", ens >= best + 0.05 && ens >= maj && ens >= avg,
           "median ensemble=" + fmt("%.4f", ens) + " best_edge=" + fmt("%.4f", best) + " majority=" +
               fmt("%.4f", maj) + " average=" + fmt("%.4f", avg));
  }
  if (want7) {
    const double s1 = med("vae"), s2 = med("S2"), s3 = med("S3");
    bool bytes_ok = true;
    for (const auto& r : runs) bytes_ok = bytes_ok && r.bytes.at("S3") >= r.bytes.at("S2") && r.bytes.at("S2") >= r.bytes.at("S1");
    const double total = fill_seconds + scenario_seconds;
    report(7, "scenario ordering", s1 >= s2 && std::abs(s1 - s3) <= 0.02 && bytes_ok && total < 1800.0,
           "median S1=" + fmt("%.4f", s1) + " S2=" + fmt("%.4f", s2) + " S3=" + fmt("%.4f", s3) +
               " bytes S3>=S2>=S1 on every seed: " + (bytes_ok ? "yes" : "no") + ", " + fmt("%.0f s", total));
  }
  if (want8) {
    std::map<double, double> medians;
    medians[0.3] = med("vae");
    for (double alpha : {0.1, 0.6}) {
      std::vector<double> acc;
      for (int s = 0; s < kSeeds; ++s) {
        const auto p = prepare(benchmark_config(static_cast<std::uint64_t>(s), alpha));
        acc.push_back(run(p, "S1", "vae").report.accuracy);
      }
      medians[alpha] = median(acc);
    }
    bool monotone = true;
    std::ostringstream os;
    double prev = 2.0;
    for (const auto& [alpha, m] : medians) {
      monotone = monotone && m <= prev;
      prev = m;
      os << "alpha=" << alpha << ":" << fmt("%.4f", m) << " ";
    }
    report(8, "alpha trend", monotone,
           "median accuracy " + os.str() + "(need non-increasing in alpha at delta=0.2), " +
               fmt("%.0f s total benchmark", seconds_since(t0)));
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> want;
  for (int i = 1; i < argc; ++i) want.insert(std::atoi(argv[i]));
  const auto on = [&](int id) { return want.empty() || want.count(id) > 0; };
  try {
    if (on(1)) criterion_counts();
    if (on(2)) criterion_memory();
    if (on(3)) criterion_tiling();
    if (on(4)) criterion_gradients();
    if (on(5) || on(6) || on(7) || on(8)) criteria_benchmark(on(5), on(6), on(7), on(8));
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
