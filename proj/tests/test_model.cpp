// SPDX-License-Identifier: Apache-2.0
#include "faststi/model.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "faststi/rng.hpp"

using namespace faststi;

namespace {

RoadGraph ring_graph(int n) {
  std::vector<double> adj(n * n, 0.0);
  for (int i = 0; i < n; ++i) {
    adj[i * n + (i + 1) % n] = 1.0;
    adj[((i + 1) % n) * n + i] = 1.0;
  }
  return make_road_graph(adj, n);
}

// Tiny configuration for gradient checks (L=4, N=3, C=8).
ModelConfig tiny_config() {
  ModelConfig c;
  c.residual_layers = 2;
  c.residual_channels = 8;
  c.attention_heads = 2;
  c.time_embedding_dim = 8;
  c.k_steps = 2;
  c.rho = 0.1;
  return c;
}

ImputationTask make_task(const RoadGraph& g, std::size_t L, std::size_t N,
                         std::uint64_t seed) {
  ImputationTask task;
  task.observed = Tensor({L, N});
  task.observed_mask = Mask(L, N, true);
  task.target_mask = Mask(L, N, false);
  Rng rng(seed);
  for (auto& v : task.observed.data) v = rng.gaussian();
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t n = 0; n < N; ++n)
      if ((l * 31 + n * 17 + 3) % 3 == 0) task.target_mask.at(l, n) = 1;
  task.conditioner = lin_interp(task.observed, task.observed_mask);
  task.graph = &g;
  return task;
}

}  // namespace

TEST_CASE("lin_interp") {
  SUBCASE("fully observed passes through") {
    Tensor x({3, 2});
    x.data = {1, 4, 2, 5, 3, 6};
    const auto chi = lin_interp(x, Mask(3, 2, true));
    CHECK(chi.data == x.data);
  }
  SUBCASE("interior gap interpolates linearly") {
    Tensor x({3, 1});
    x.data = {1.0, 99.0, 3.0};
    Mask m(3, 1, true);
    m.at(1, 0) = 0;
    const auto chi = lin_interp(x, m);
    CHECK(chi(0, 0) == 1.0);
    CHECK(chi(1, 0) == doctest::Approx(2.0));
    CHECK(chi(2, 0) == 3.0);
  }
  SUBCASE("edges take the nearest observed value") {
    Tensor x({3, 1});
    x.data = {-7.0, 5.0, -7.0};
    Mask m(3, 1, false);
    m.at(1, 0) = 1;
    const auto chi = lin_interp(x, m);
    CHECK(chi(0, 0) == 5.0);
    CHECK(chi(1, 0) == 5.0);
    CHECK(chi(2, 0) == 5.0);
  }
  SUBCASE("all-missing node takes the fill value") {
    Tensor x({3, 1});
    x.data = {1, 2, 3};
    const auto chi = lin_interp(x, Mask(3, 1, false), 0.25);
    for (int l = 0; l < 3; ++l) CHECK(chi(l, 0) == 0.25);
  }
  SUBCASE("long gap is a straight segment") {
    Tensor x({5, 1});
    x.data = {10, 0, 0, 0, 2};
    Mask m(5, 1, false);
    m.at(0, 0) = m.at(4, 0) = 1;
    const auto chi = lin_interp(x, m);
    CHECK(chi(1, 0) == doctest::Approx(8.0));
    CHECK(chi(2, 0) == doctest::Approx(6.0));
    CHECK(chi(3, 0) == doctest::Approx(4.0));
  }
}

TEST_CASE("time embedding") {
  SUBCASE("t = 0 gives sin 0 / cos 1 pairs") {
    const auto e = time_embedding(0.0, 16);
    for (int j = 0; j < 8; ++j) {
      CHECK(e[2 * j] == 0.0);
      CHECK(e[2 * j + 1] == 1.0);
    }
  }
  SUBCASE("odd dim rejected") {
    CHECK_THROWS_AS(time_embedding(1.0, 7), std::invalid_argument);
  }
  SUBCASE("per-component Lipschitz bound in t") {
    // max frequency divisor is 1, so per-component slope is at most 1
    const double t0 = 13.37, dt = 1e-4;
    const auto a = time_embedding(t0, 32);
    const auto b = time_embedding(t0 + dt, 32);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::abs(b[i] - a[i]) <= dt * (1.0 + 1e-9));
  }
  SUBCASE("injective over the training step range (grid search)") {
    // embeddings of distinct steps never collide: nearest-neighbor distance
    // over a fine grid stays positive
    const int dim = 8;
    const int n = 5000;
    std::vector<std::vector<double>> embs(n);
    for (int i = 0; i < n; ++i)
      embs[i] = time_embedding(i * (10000.0 / n), dim);
    double min_d2 = 1e300;
    for (int i = 1; i < n; ++i) {
      // adjacent grid points are the closest candidates for smooth curves
      double d2 = 0.0;
      for (int c = 0; c < dim; ++c) {
        const double d = embs[i][c] - embs[i - 1][c];
        d2 += d * d;
      }
      min_d2 = std::min(min_d2, d2);
    }
    CHECK(min_d2 > 1e-8);
    // spot-check non-adjacent pairs with a coarse all-pairs pass
    for (int i = 0; i < n; i += 50)
      for (int j = i + 50; j < n; j += 50) {
        double d2 = 0.0;
        for (int c = 0; c < dim; ++c) {
          const double d = embs[i][c] - embs[j][c];
          d2 += d * d;
        }
        CHECK(d2 > 1e-8);
      }
  }
}

TEST_CASE("model forward contracts") {
  const auto g = ring_graph(3);
  const auto cfg = tiny_config();
  const auto mp = init_model_params(cfg, 77);
  const auto task = make_task(g, 4, 3, 5);

  SUBCASE("prior has the contracted shape") {
    const auto hc = conditional_prior(task.conditioner, g, mp);
    REQUIRE(hc.rank() == 3);
    CHECK(hc.dim(0) == 4);
    CHECK(hc.dim(1) == 3);
    CHECK(hc.dim(2) == 8);
    for (double v : hc.data) CHECK(std::isfinite(v));
  }

  SUBCASE("eps-hat is zero off the imputed set") {
    Rng rng(9);
    std::vector<double> x(12);
    for (auto& v : x) v = rng.gaussian();
    const auto e = noise_predict(x, task, 3.0, mp);
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t n = 0; n < 3; ++n)
        if (!task.target_mask.at(l, n)) CHECK(e(l, n) == 0.0);
  }

  SUBCASE("untrained model predicts exactly zero (zero output layer)") {
    Rng rng(9);
    std::vector<double> x(12);
    for (auto& v : x) v = rng.gaussian();
    const auto e = noise_predict(x, task, 3.0, mp);
    for (double v : e.data) CHECK(v == 0.0);
  }

  SUBCASE("determinism: identical inputs give identical outputs") {
    Rng rng(10);
    std::vector<double> x(12);
    for (auto& v : x) v = rng.gaussian();
    auto mp2 = mp;
    // non-zero output layer so the test is not trivially 0 == 0
    for (auto& v : mp2.store.values) v += 0.01;
    const auto a = noise_predict(x, task, 2.5, mp2);
    const auto b = noise_predict(x, task, 2.5, mp2);
    CHECK(a.data == b.data);
  }

  SUBCASE("continuity in t") {
    Rng rng(11);
    std::vector<double> x(12);
    for (auto& v : x) v = rng.gaussian();
    auto mp2 = init_model_params(cfg, 78);
    for (auto& v : mp2.store.values) v += 0.02;
    const auto a = noise_predict(x, task, 7.0, mp2);
    const auto b = noise_predict(x, task, 7.0 + 1e-6, mp2);
    for (std::size_t i = 0; i < a.numel(); ++i)
      CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-3);
  }

  SUBCASE("hcond cache reproduces the uncached path bit-for-bit") {
    Rng rng(12);
    std::vector<double> x(12);
    for (auto& v : x) v = rng.gaussian();
    auto mp2 = mp;
    for (auto& v : mp2.store.values) v += 0.01;
    const auto hc = conditional_prior(task.conditioner, g, mp2);
    const auto a = noise_predict(x, task, 4.0, mp2);
    const auto b = noise_predict(x, task, 4.0, mp2, &hc);
    CHECK(a.data == b.data);
  }

  SUBCASE("non-finite input rejected") {
    std::vector<double> x(12, 0.0);
    x[3] = std::nan("");
    CHECK_THROWS(noise_predict(x, task, 1.0, mp));
  }
}

TEST_CASE("model gradient check against central finite differences") {
  const auto g = ring_graph(3);
  const auto cfg = tiny_config();
  auto mp = init_model_params(cfg, 123);
  // randomize everything, including the zero-initialized output layer
  Rng prng(321);
  for (auto& v : mp.store.values) v += 0.05 * prng.gaussian();

  const auto task = make_task(g, 4, 3, 6);
  Rng rng(13);
  std::vector<double> x_noisy(12), eps_target(12, 0.0);
  for (auto& v : x_noisy) v = rng.gaussian();
  for (std::size_t i = 0; i < 12; ++i)
    if (task.target_mask.v[i]) eps_target[i] = rng.gaussian();
  const double t = 17.3;

  std::vector<double> grad(mp.store.size(), 0.0);
  training_loss_and_grad(task, x_noisy, eps_target, t, mp, grad);

  // >= 32 random parameter entries, h = 1e-5, 1e-4 relative tolerance
  Rng pick(999);
  const double h = 1e-5;
  int checked = 0, attempts = 0;
  while (checked < 32 && attempts < 4000) {
    ++attempts;
    const std::size_t i =
        static_cast<std::size_t>(pick.uniform_int(0, (long)mp.store.size() - 1));
    if (std::abs(grad[i]) < 1e-7) continue;  // avoid 0/0 in relative error
    const double keep = mp.store.values[i];
    mp.store.values[i] = keep + h;
    const double lp = training_loss(task, x_noisy, eps_target, t, mp);
    mp.store.values[i] = keep - h;
    const double lm = training_loss(task, x_noisy, eps_target, t, mp);
    mp.store.values[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    const double rel =
        std::abs(fd - grad[i]) / std::max(std::abs(fd), std::abs(grad[i]));
    CHECK(rel < 1e-4);
    ++checked;
  }
  CHECK(checked >= 32);
}

TEST_CASE("model equivariance under joint node permutation") {
  const int N = 4;
  const std::size_t L = 3;
  Rng rng(55);
  std::vector<double> adj(N * N, 0.0);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      if (i != j && rng.uniform() < 0.7) adj[i * N + j] = 0.3 + rng.uniform();

  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<double> padj(N * N, 0.0);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) padj[perm[i] * N + perm[j]] = adj[i * N + j];

  const auto g = make_road_graph(adj, N);
  const auto pg = make_road_graph(padj, N);

  auto cfg = tiny_config();
  auto mp = init_model_params(cfg, 200);
  for (auto& v : mp.store.values) v += 0.03;

  auto task = make_task(g, L, N, 77);
  ImputationTask ptask;
  ptask.observed = Tensor({L, (std::size_t)N});
  ptask.observed_mask = Mask(L, N, true);
  ptask.target_mask = Mask(L, N, false);
  for (std::size_t l = 0; l < L; ++l)
    for (int n = 0; n < N; ++n) {
      ptask.observed(l, perm[n]) = task.observed(l, n);
      ptask.target_mask.at(l, perm[n]) = task.target_mask.at(l, n);
    }
  ptask.conditioner = lin_interp(ptask.observed, ptask.observed_mask);
  ptask.graph = &pg;

  Rng xr(88);
  std::vector<double> x(L * N);
  for (auto& v : x) v = xr.gaussian();
  std::vector<double> px(L * N);
  for (std::size_t l = 0; l < L; ++l)
    for (int n = 0; n < N; ++n) px[l * N + perm[n]] = x[l * N + n];

  const auto e = noise_predict(x, task, 5.0, mp);
  const auto pe = noise_predict(px, ptask, 5.0, mp);
  for (std::size_t l = 0; l < L; ++l)
    for (int n = 0; n < N; ++n)
      CHECK(pe(l, perm[n]) == doctest::Approx(e(l, n)).epsilon(1e-10));
}

TEST_CASE("parameter store flat round-trip and checkpoint io") {
  const auto cfg = tiny_config();
  auto mp = init_model_params(cfg, 42);
  Rng rng(1);
  for (auto& v : mp.store.values) v = rng.gaussian();

  const char* path = "test_checkpoint.bin";
  save_model_params(path, mp);
  const auto back = load_model_params(path);
  CHECK(back.store.values == mp.store.values);
  CHECK(back.config.residual_channels == cfg.residual_channels);
  CHECK(back.config.k_steps == cfg.k_steps);

  // corrupting a byte must fail the checksum
  {
    std::FILE* f = std::fopen(path, "r+b");
    std::fseek(f, -5, SEEK_END);
    const char junk = 0x5a;
    std::fwrite(&junk, 1, 1, f);
    std::fclose(f);
  }
  CHECK_THROWS(load_model_params(path));
  std::remove(path);
}

TEST_CASE("cross-attention wiring switch changes the output") {
  const auto g = ring_graph(3);
  auto cfg = tiny_config();
  auto mp = init_model_params(cfg, 9);
  for (auto& v : mp.store.values) v += 0.02;
  const auto task = make_task(g, 4, 3, 14);
  Rng rng(15);
  std::vector<double> x(12);
  for (auto& v : x) v = rng.gaussian();

  const auto a = noise_predict(x, task, 3.0, mp);
  auto mp2 = mp;
  mp2.config.cross_attention_cond_qv = false;
  const auto b = noise_predict(x, task, 3.0, mp2);
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    differs |= a.data[i] != b.data[i];
  CHECK(differs);
}
