#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "nern/trainer.hpp"

using namespace nern;

namespace {

OriginalNetwork tiny_two_kernel_net() {
  // one layer, F=2, C=1: kernel 0 has mean |w| 3, kernel 1 has mean |w| 1
  OriginalNetwork net;
  net.catalog.name = "tiny";
  net.catalog.layers = {{2, 1, 3, 1, 1, true}};
  net.catalog.non_conv_param_count = 0;
  TensorF w({2, 1, 3, 3});
  for (size_t i = 0; i < 9; ++i) {
    w.data[i] = 3.0f;
    w.data[9 + i] = 1.0f;
  }
  net.conv_weights.push_back(w);
  net.conv_biases.emplace_back(std::vector<size_t>{2});
  net.head_w = TensorF({2, 2});
  net.head_b = TensorF({2});
  return net;
}

double chi_square_uniform(const std::vector<size_t>& counts, size_t draws) {
  const double expected = double(draws) / double(counts.size());
  double chi = 0;
  for (size_t c : counts) chi += (double(c) - expected) * (double(c) - expected) / expected;
  return chi;
}

// Wilson-Hilferty upper critical value at significance alpha=0.01
double chi_square_crit_99(double dof) {
  const double z = 2.3263478740;
  const double t = 1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof));
  return dof * t * t * t;
}

}  // namespace

TEST_CASE("recon_loss examples") {
  auto net = build_desk_cnn(1);
  std::vector<std::pair<size_t, size_t>> all;
  for (size_t l = 0; l < 3; ++l)
    for (size_t j = 0; j < net.catalog.layers[l].kernel_count(); ++j) all.push_back({l, j});
  REQUIRE(recon_loss(net.conv_weights, net.conv_weights, all) == 0.0);

  // single kernel [3,4,0,...] against zeros: ||.||_2 = 5 over 9 scalars
  std::vector<TensorF> w = {TensorF({1, 1, 3, 3})};
  w[0].data[0] = 3;
  w[0].data[1] = 4;
  std::vector<TensorF> z = {TensorF({1, 1, 3, 3})};
  REQUIRE(recon_loss(w, z, {{0, 0}}) == Catch::Approx(5.0 / 9.0));

  REQUIRE_THROWS_AS(recon_loss(w, z, {}), Error);

  // brute-force flatten-and-norm oracle on random instances
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    auto a = build_desk_cnn(100 + uint64_t(t));
    auto b = build_desk_cnn(200 + uint64_t(t));
    std::vector<std::pair<size_t, size_t>> sampled;
    for (size_t l = 0; l < 3; ++l)
      for (size_t j = 0; j < net.catalog.layers[l].kernel_count(); j += 3) sampled.push_back({l, j});
    double acc = 0;
    size_t count = 0;
    for (auto [l, j] : sampled)
      for (size_t i = 0; i < 9; ++i) {
        const double d =
            double(a.conv_weights[l].data[j * 9 + i]) - double(b.conv_weights[l].data[j * 9 + i]);
        acc += d * d;
        ++count;
      }
    const double oracle = std::sqrt(acc) / double(count);
    REQUIRE(recon_loss(a.conv_weights, b.conv_weights, sampled) ==
            Catch::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("fmd_loss examples") {
  Rng rng(5);
  std::vector<TensorF> a;
  a.emplace_back(std::vector<size_t>{4, 3, 2, 2});
  for (auto& v : a[0].data) v = float(rng.normal());
  REQUIRE(fmd_loss(a, a) == 0.0);

  // negated activations: unit vectors at angle pi differ by exactly 2
  std::vector<TensorF> b = a;
  for (auto& v : b[0].data) v = -v;
  REQUIRE(fmd_loss(a, b) == Catch::Approx(2.0).epsilon(1e-6));

  // term-by-term oracle on a two-layer toy
  std::vector<TensorF> x, y;
  for (int l = 0; l < 2; ++l) {
    x.emplace_back(std::vector<size_t>{3, 2, 2, 2});
    y.emplace_back(std::vector<size_t>{3, 2, 2, 2});
    for (auto& v : x.back().data) v = float(rng.normal());
    for (auto& v : y.back().data) v = float(rng.normal());
  }
  double oracle = 0;
  for (int l = 0; l < 2; ++l)
    for (size_t s = 0; s < 3; ++s) {
      double nx = 0, ny = 0;
      for (size_t i = 0; i < 8; ++i) {
        nx += double(x[size_t(l)].data[s * 8 + i]) * x[size_t(l)].data[s * 8 + i];
        ny += double(y[size_t(l)].data[s * 8 + i]) * y[size_t(l)].data[s * 8 + i];
      }
      nx = std::sqrt(nx);
      ny = std::sqrt(ny);
      double d = 0;
      for (size_t i = 0; i < 8; ++i) {
        const double u = x[size_t(l)].data[s * 8 + i] / nx - y[size_t(l)].data[s * 8 + i] / ny;
        d += u * u;
      }
      oracle += std::sqrt(d);
    }
  oracle /= 3.0;
  REQUIRE(fmd_loss(x, y) == Catch::Approx(oracle).epsilon(1e-6));

  // zero-norm feature map normalizes to zero, no NaN
  std::vector<TensorF> zero = {TensorF({2, 1, 2, 2})};
  std::vector<TensorF> ones = {TensorF({2, 1, 2, 2})};
  for (auto& v : ones[0].data) v = 0.5f;
  REQUIRE(std::isfinite(fmd_loss(zero, ones)));
}

TEST_CASE("kd_loss examples") {
  TensorF same({2, 2}, {1.0f, -0.5f, 0.25f, 3.0f});
  REQUIRE(kd_loss(same, same) == 0.0);

  TensorF a({1, 2}, {float(std::log(2.0)), 0.0f});
  TensorF b({1, 2}, {0.0f, 0.0f});
  REQUIRE(kd_loss(a, b) == Catch::Approx(0.0566330137).epsilon(1e-4));

  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    TensorF x({3, 4}), y({3, 4});
    for (auto& v : x.data) v = float(rng.normal() * 2);
    for (auto& v : y.data) v = float(rng.normal() * 2);
    REQUIRE(kd_loss(x, y) >= 0.0);
  }
}

TEST_CASE("sampling distributions") {
  auto net = build_desk_cnn(1);
  auto plan = make_reconstruction_plan(net.catalog, EmbeddingConfig::smooth(4), nullptr);
  auto ki = build_kernel_index(plan, net.conv_weights);
  const size_t n = ki.total();
  REQUIRE(n == 392);

  SECTION("all returns every coordinate") {
    Rng rng(1);
    SamplingStrategy st{SamplingKind::All, 0, 0};
    auto s = sample_coordinates(st, rng, plan, ki);
    REQUIRE(s.size() == n);
  }

  SECTION("random_layer returns exactly one layer") {
    Rng rng(2);
    SamplingStrategy st{SamplingKind::RandomLayer, 0, 0};
    for (int t = 0; t < 10; ++t) {
      auto s = sample_coordinates(st, rng, plan, ki);
      REQUIRE((s.size() == 8 || s.size() == 128 || s.size() == 256));
    }
  }

  SECTION("no duplicates within a batch") {
    Rng rng(3);
    SamplingStrategy st{SamplingKind::MagnitudeMixed, 256, 0.8};
    for (int t = 0; t < 20; ++t) {
      auto s = sample_coordinates(st, rng, plan, ki);
      std::vector<char> seen(n, 0);
      for (auto c : s) {
        REQUIRE(!seen[c]);
        seen[c] = 1;
      }
    }
  }

  SECTION("batch larger than population rejected") {
    Rng rng(4);
    SamplingStrategy st{SamplingKind::UniformBatch, n + 1, 0};
    REQUIRE_THROWS_AS(sample_coordinates(st, rng, plan, ki), Error);
  }

  SECTION("p_uni = 1 is uniform (chi-square)") {
    Rng rng(5);
    SamplingStrategy st{SamplingKind::MagnitudeMixed, 1, 1.0};
    std::vector<size_t> counts(n, 0);
    const size_t draws = 100000;
    for (size_t d = 0; d < draws; ++d) ++counts[sample_coordinates(st, rng, plan, ki)[0]];
    REQUIRE(chi_square_uniform(counts, draws) < chi_square_crit_99(double(n - 1)));
  }

  SECTION("equal magnitudes with p_uni = 0 degenerate to uniform") {
    auto eq = ki;
    for (auto& m : eq.magnitudes) m = 0.37;
    Rng rng(6);
    SamplingStrategy st{SamplingKind::MagnitudeMixed, 1, 0.0};
    std::vector<size_t> counts(n, 0);
    const size_t draws = 100000;
    for (size_t d = 0; d < draws; ++d) ++counts[sample_coordinates(st, rng, plan, eq)[0]];
    REQUIRE(chi_square_uniform(counts, draws) < chi_square_crit_99(double(n - 1)));
  }

  SECTION("magnitude-proportional draws") {
    auto tiny = tiny_two_kernel_net();
    auto tplan = make_reconstruction_plan(tiny.catalog, EmbeddingConfig::smooth(4), nullptr);
    auto tki = build_kernel_index(tplan, tiny.conv_weights);
    REQUIRE(tki.magnitudes[0] == Catch::Approx(3.0));
    REQUIRE(tki.magnitudes[1] == Catch::Approx(1.0));
    Rng rng(7);
    SamplingStrategy st{SamplingKind::MagnitudeMixed, 1, 0.0};
    size_t zero = 0;
    const size_t draws = 100000;
    for (size_t d = 0; d < draws; ++d) zero += sample_coordinates(st, rng, tplan, tki)[0] == 0;
    REQUIRE(double(zero) / double(draws) == Catch::Approx(0.75).margin(0.01));
  }
}

TEST_CASE("cosine schedule contract") {
  CosineSchedule s{5e-3, 1000, true};
  REQUIRE(s.lr(0) == 5e-3);
  REQUIRE(s.lr(1000) <= 1e-3 * 5e-3);
  double prev = s.lr(0);
  for (int64_t t = 1; t <= 1000; ++t) {
    REQUIRE(s.lr(t) <= prev + 1e-15);
    prev = s.lr(t);
  }
}

TEST_CASE("adam with lr 0 leaves parameters bit-identical") {
  Rng rng(9);
  TensorF p({64});
  TensorF g({64});
  for (auto& v : p.data) v = float(rng.normal());
  for (auto& v : g.data) v = float(rng.normal());
  TensorF before = p;
  Adam adam;
  adam.step({&p}, {&g}, 0.0);
  REQUIRE(std::memcmp(p.ptr(), before.ptr(), 64 * sizeof(float)) == 0);
}

TEST_CASE("make_inputs contract") {
  Rng rng(11);
  auto x = make_noise_inputs(rng, 200, {1, 8, 8});
  REQUIRE(x.shape == std::vector<size_t>{200, 1, 8, 8});
  double m = 0, s = 0;
  for (float v : x.data) m += v;
  m /= double(x.numel());
  for (float v : x.data) s += (v - m) * (v - m);
  s = std::sqrt(s / double(x.numel()));
  REQUIRE(std::abs(m) < 0.05);
  REQUIRE(std::abs(s - 1.0) < 0.05);

  Rng r1(13), r2(13);
  auto a = make_noise_inputs(r1, 4, {1, 8, 8});
  auto b = make_noise_inputs(r2, 4, {1, 8, 8});
  REQUIRE(std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0);
}

TEST_CASE("oracle mode zeroes every loss and reproduces the original exactly") {
  auto net = build_desk_cnn(21);
  auto data = make_task_data(22);
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.oracle_mode = true;
  cfg.seed = 5;
  auto r = train_nern(net, data, cfg, EmbeddingConfig::smooth(40), 16, nullptr);
  REQUIRE(r.metrics.size() == 3);
  for (const auto& row : r.metrics) {
    REQUIRE(row.recon == 0.0);
    REQUIRE(row.kd == 0.0);
    REQUIRE(row.fmd == 0.0);
  }
  REQUIRE(r.final_accuracy == r.original_accuracy);
}

TEST_CASE("recon-only training reduces the loss") {
  auto net = build_desk_cnn(23);
  auto data = make_task_data(24);
  TrainConfig cfg;
  cfg.alpha = 0;
  cfg.beta = 0;
  cfg.iterations = 500;
  cfg.seed = 3;
  auto r = train_nern(net, data, cfg, EmbeddingConfig::smooth(40), 64, nullptr);
  REQUIRE(r.metrics.size() == 500);
  double head = 0, tail = 0;
  for (int i = 0; i < 50; ++i) {
    head += r.metrics[size_t(i)].recon;
    tail += r.metrics[450 + size_t(i)].recon;
  }
  REQUIRE(r.metrics[0].recon > 0.0);
  REQUIRE(tail < 0.5 * head);
}

TEST_CASE("metrics csv format") {
  std::vector<MetricsRow> rows(2);
  rows[0] = {0, 0.5, 0.25, 0.125, 1e-3, std::nan("")};
  rows[1] = {1, 0.4, 0.2, 0.1, 9e-4, 0.97};
  auto csv = metrics_csv(rows);
  REQUIRE(csv.rfind("iter,recon_loss,kd_loss,fmd_loss,lr,eval_acc\n", 0) == 0);
  REQUIRE(csv.find("0,0.5,0.25,0.125,0.001,\n") != std::string::npos);
  REQUIRE(csv.find("1,0.4,0.2,0.1,0.0009,0.97\n") != std::string::npos);
}

TEST_CASE("full-loss smoke run stays finite and improves accuracy") {
  auto net = build_desk_cnn(25);
  auto data = make_task_data(26);
  train_original(net, data, 0.0, 8);
  TrainConfig cfg;
  cfg.iterations = 600;
  cfg.seed = 11;
  cfg.eval_every = 200;
  auto r = train_nern(net, data, cfg, EmbeddingConfig::smooth(40), 64, nullptr);
  REQUIRE(r.metrics.size() == 600);
  for (const auto& row : r.metrics) {
    REQUIRE(std::isfinite(row.recon));
    REQUIRE(std::isfinite(row.kd));
    REQUIRE(std::isfinite(row.fmd));
  }
  REQUIRE(r.final_accuracy > 0.75);
  bool saw_eval = false;
  for (const auto& row : r.metrics) saw_eval |= !std::isnan(row.eval_acc);
  REQUIRE(saw_eval);
}
