#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "gapest/net.hpp"

using namespace gapest::net;
using gapest::linalg::Matrix;

namespace {

LabeledBatch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t p,
                          std::size_t k) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  LabeledBatch b{Matrix(n, p), Matrix(n, k)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) b.features(i, j) = gauss(rng);
    b.labels(i, rng() % k) = 1.0;
  }
  return b;
}

ModelState random_model(std::mt19937_64& rng, const Architecture& arch) {
  ModelState m = init_model(arch, rng());
  // shake the biases too so nothing is accidentally zero
  std::normal_distribution<double> gauss(0.0, 0.3);
  for (auto& v : m.theta) v += gauss(rng);
  return m;
}

// Plain loop-based reference forward pass, no BLAS.
Matrix reference_natural(const ModelState& m, const Matrix& x) {
  const auto& arch = m.arch;
  Matrix act = x;
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const std::size_t in = arch.layer_sizes[l];
    const std::size_t out = arch.layer_sizes[l + 1];
    const double* w = m.theta.data() + arch.layer_offset(l);
    Matrix z(act.rows(), out);
    for (std::size_t i = 0; i < act.rows(); ++i)
      for (std::size_t o = 0; o < out; ++o) {
        double s = w[in * out + o];
        for (std::size_t j = 0; j < in; ++j) s += act(i, j) * w[j * out + o];
        z(i, o) = s;
      }
    if (l + 1 < arch.num_layers())
      for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t o = 0; o < out; ++o) z(i, o) = std::max(0.0, z(i, o));
    act = z;
  }
  return act;
}

}  // namespace

TEST_CASE("forward: zero weights give uniform softmax") {
  Architecture arch{{4, 10}, Head::softmax_ce};
  ModelState m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
  std::mt19937_64 rng(1);
  LabeledBatch b = random_batch(rng, 6, 4, 10);
  auto r = forward(m, b);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 10; ++k)
      CHECK(r.predictions(i, k) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("forward: single linear layer picks the weight column") {
  Architecture arch{{3, 2}, Head::squared_loss};
  ModelState m = init_model(arch, 42);
  LabeledBatch b{Matrix(1, 3), Matrix(1, 2)};
  b.features(0, 0) = 1.0;  // x = e_1
  b.labels(0, 0) = 1.0;
  auto r = forward(m, b);
  // N = first weight row (input-major layout) + bias row
  const double* w = m.theta.data();
  CHECK(r.natural(0, 0) == doctest::Approx(w[0] + w[3 * 2 + 0]).epsilon(1e-14));
  CHECK(r.natural(0, 1) == doctest::Approx(w[1] + w[3 * 2 + 1]).epsilon(1e-14));
}

TEST_CASE("forward matches loop-based reference") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Architecture arch{{5, 7, 4, 3}, trial % 2 ? Head::squared_loss : Head::softmax_ce};
    ModelState m = random_model(rng, arch);
    LabeledBatch b = random_batch(rng, 8, 5, 3);
    auto r = forward(m, b);
    Matrix ref = reference_natural(m, b.features);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t k = 0; k < 3; ++k)
        CHECK(r.natural(i, k) == doctest::Approx(ref(i, k)).epsilon(1e-12));
    if (arch.head == Head::softmax_ce)
      for (std::size_t i = 0; i < 8; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          CHECK(r.predictions(i, k) >= 0.0);
          sum += r.predictions(i, k);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("cost closed forms") {
  std::vector<double> zeros(10, 0.0);
  std::vector<double> y10(10, 0.0);
  y10[3] = 1.0;
  CHECK(cost(y10, zeros, Head::softmax_ce) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));

  std::vector<double> y3{1.0, 0.0, 0.0};
  CHECK(cost(y3, y3, Head::squared_loss) == doctest::Approx(0.0));

  std::vector<double> n3{5.0, 0.0, 0.0};
  CHECK(cost(y3, n3, Head::softmax_ce) ==
        doctest::Approx(std::log(std::exp(5.0) + 2.0) - 5.0).epsilon(1e-10));
}

TEST_CASE("per-sample derivatives: chain rule and sigma invariants") {
  std::mt19937_64 rng(9);
  Architecture arch{{4, 6, 3}, Head::softmax_ce};
  ModelState m = random_model(rng, arch);
  LabeledBatch b = random_batch(rng, 12, 4, 3);
  auto d = per_sample_derivatives(m, b);

  const std::size_t dd = arch.parameter_count();
  for (std::size_t i = 0; i < 12; ++i) {
    // grads row == J^T e to 1e-10 (exact by construction)
    for (std::size_t j = 0; j < dd; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += d.jacobians[i](k, j) * d.errors(i, k);
      REQUIRE(std::abs(s - d.grads(i, j)) <= 1e-10);
    }
    // softmax Sigma rows sum to 0
    for (std::size_t a = 0; a < 3; ++a) {
      double rowsum = 0.0;
      for (std::size_t c = 0; c < 3; ++c) rowsum += d.sigmas[i](a, c);
      REQUIRE(std::abs(rowsum) <= 1e-12);
    }
  }
}

TEST_CASE("squared head: sigma is identity, zero error means zero grads") {
  Architecture arch{{2, 2}, Head::squared_loss};
  ModelState m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
  // theta = 0 means N = 0; pick labels equal to predictions (zero one-hot is
  // not allowed, so construct by hand: y = e_1, aim N at e_1 via bias).
  m.theta[2 * 2 + 0] = 1.0;  // bias for output 0
  LabeledBatch b{Matrix(1, 2), Matrix(1, 2)};
  b.labels(0, 0) = 1.0;
  auto d = per_sample_derivatives(m, b);
  CHECK(d.sigmas[0](0, 0) == 1.0);
  CHECK(d.sigmas[0](1, 1) == 1.0);
  CHECK(d.sigmas[0](0, 1) == 0.0);
  for (std::size_t j = 0; j < arch.parameter_count(); ++j)
    CHECK(d.grads(0, j) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(d.loss[0] == doctest::Approx(0.0));
}

TEST_CASE("gradient check against central finite differences") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const bool deep = trial % 2 == 0;
    Architecture arch{deep ? std::vector<std::size_t>{3, 5, 3}
                           : std::vector<std::size_t>{4, 3},
                      trial % 3 == 0 ? Head::squared_loss : Head::softmax_ce};
    REQUIRE(arch.parameter_count() <= 60);
    ModelState m = random_model(rng, arch);
    LabeledBatch b = random_batch(rng, 10, arch.input_dim(), arch.output_dim());

    auto d = per_sample_derivatives(m, b);
    const std::size_t dd = arch.parameter_count();
    std::vector<double> mean_grad(dd, 0.0);
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < dd; ++j) mean_grad[j] += d.grads(i, j) / 10.0;

    ModelState probe = m;
    double gnorm = 0.0;
    for (double g : mean_grad) gnorm += g * g;
    gnorm = std::sqrt(gnorm);
    for (std::size_t j = 0; j < dd; ++j) {
      const double step = 1e-5 * (1.0 + std::abs(m.theta[j]));
      probe.theta[j] = m.theta[j] + step;
      double up = mean_cost(probe, b);
      probe.theta[j] = m.theta[j] - step;
      double dn = mean_cost(probe, b);
      probe.theta[j] = m.theta[j];
      double fd = (up - dn) / (2.0 * step);
      REQUIRE(std::abs(fd - mean_grad[j]) <= 1e-5 * std::max(1.0, gnorm));
    }
  }
}

TEST_CASE("mean_gradient agrees with per-sample mean") {
  std::mt19937_64 rng(17);
  Architecture arch{{4, 5, 3}, Head::softmax_ce};
  ModelState m = random_model(rng, arch);
  LabeledBatch b = random_batch(rng, 9, 4, 3);
  auto d = per_sample_derivatives(m, b);
  double cost_out = 0.0;
  auto g = mean_gradient(m, b, {}, &cost_out);
  for (std::size_t j = 0; j < arch.parameter_count(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 9; ++i) s += d.grads(i, j) / 9.0;
    REQUIRE(std::abs(g[j] - s) <= 1e-12);
  }
  double want = 0.0;
  for (double v : d.loss) want += v / 9.0;
  CHECK(cost_out == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("regularized loss") {
  std::mt19937_64 rng(19);
  Architecture arch{{3, 2}, Head::softmax_ce};
  ModelState m = random_model(rng, arch);
  LabeledBatch b = random_batch(rng, 5, 3, 2);
  double base = mean_cost(m, b);
  CHECK(regularized_loss(m, b, 0.0) == doctest::Approx(base));
  double norm2 = 0.0;
  for (double v : m.theta) norm2 += v * v;
  CHECK(regularized_loss(m, b, 0.1) == doctest::Approx(base + 0.05 * norm2).epsilon(1e-12));
}

TEST_CASE("finite-difference Hessian equals GGN for linear softmax") {
  std::mt19937_64 rng(23);
  Architecture arch{{3, 3}, Head::softmax_ce};
  ModelState m = random_model(rng, arch);
  LabeledBatch b = random_batch(rng, 8, 3, 3);
  Matrix h = finite_difference_hessian(m, b);
  auto d = per_sample_derivatives(m, b);
  const std::size_t dd = arch.parameter_count();
  // GGN = mean J^T Sigma J; exact Hessian for a linear natural parameter.
  Matrix ggn(dd, dd);
  for (std::size_t i = 0; i < 8; ++i) {
    const Matrix& j = d.jacobians[i];
    const Matrix& s = d.sigmas[i];
    Matrix sj = matmul(s, j);
    for (std::size_t a = 0; a < dd; ++a)
      for (std::size_t c = 0; c < dd; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) acc += j(k, a) * sj(k, c);
        ggn(a, c) += acc / 8.0;
      }
  }
  double scale = ggn.frobenius_norm();
  for (std::size_t a = 0; a < dd; ++a)
    for (std::size_t c = 0; c < dd; ++c)
      REQUIRE(std::abs(h(a, c) - ggn(a, c)) <= 1e-5 * std::max(1.0, scale));
  CHECK_THROWS_AS(
      finite_difference_hessian(
          ModelState{Architecture{{100, 100}, Head::softmax_ce},
                     std::vector<double>(101 * 100, 0.0)},
          b),
      TooLarge);
}

TEST_CASE("zero-feature squared head: Hessian lives in the bias block") {
  Architecture arch{{2, 2}, Head::squared_loss};
  std::mt19937_64 rng(29);
  ModelState m = random_model(rng, arch);
  LabeledBatch b{Matrix(4, 2), Matrix(4, 2)};
  for (std::size_t i = 0; i < 4; ++i) b.labels(i, i % 2) = 1.0;  // x stays zero
  Matrix h = finite_difference_hessian(m, b);
  // weight rows see zero inputs; only the bias-bias block is nonzero
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t c = 0; c < 6; ++c) {
      bool bias_a = a >= 4, bias_c = c >= 4;
      if (bias_a && bias_c && a == c)
        CHECK(h(a, c) == doctest::Approx(1.0).epsilon(1e-6));
      else
        CHECK(std::abs(h(a, c)) <= 1e-7);
    }
}

TEST_CASE("determinism and checkpoint round trip") {
  std::mt19937_64 rng(31);
  Architecture arch{{4, 6, 3}, Head::softmax_ce};
  ModelState m = random_model(rng, arch);
  LabeledBatch b = random_batch(rng, 7, 4, 3);
  auto d1 = per_sample_derivatives(m, b);
  auto d2 = per_sample_derivatives(m, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < arch.parameter_count(); ++j)
      REQUIRE(d1.grads(i, j) == d2.grads(i, j));

  save_checkpoint("test_net_ckpt.bin", m);
  ModelState back = load_checkpoint("test_net_ckpt.bin");
  REQUIRE(back.arch.layer_sizes == m.arch.layer_sizes);
  REQUIRE(back.arch.head == m.arch.head);
  REQUIRE(back.theta == m.theta);
  std::remove("test_net_ckpt.bin");
}
