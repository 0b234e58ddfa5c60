#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "gapest/linalg.hpp"

using namespace gapest::linalg;

namespace {

// Random PSD matrix G G^T with G of shape d x r.
SymPsdMatrix random_psd(std::mt19937_64& rng, std::size_t d, std::size_t r) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(d, r);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < r; ++j) g(i, j) = gauss(rng);
  Matrix s = matmul(g, transpose(g));
  return SymPsdMatrix::from_dense(s);
}

Matrix random_orthogonal(std::mt19937_64& rng, std::size_t d) {
  // Eigenvectors of a random symmetric matrix.
  SymPsdMatrix s = random_psd(rng, d, d);
  return eig_sym(s).eigenvectors;
}

double soft_rank_eigen_oracle(const SymPsdMatrix& s, double lambda) {
  EigenDecomposition e = eig_sym(s);
  double total = 0.0;
  for (double v : e.eigenvalues) total += v / (v + lambda);
  return total;
}

}  // namespace

TEST_CASE("eig_sym on diagonal and 2x2") {
  SymPsdMatrix d2 = SymPsdMatrix::diagonal({3.0, 1.0});
  auto e = eig_sym(d2);
  CHECK(e.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(e.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(e.eigenvectors(0, 0)) == doctest::Approx(1.0).epsilon(1e-12));

  // [[2,1],[1,2]] has eigenvalues 3 and 1 (characteristic polynomial).
  SymPsdMatrix m(2);
  m.at(0, 0) = 2.0;
  m.at(1, 0) = 1.0;
  m.at(1, 1) = 2.0;
  auto e2 = eig_sym(m);
  CHECK(e2.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(e2.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("eig_sym construct-then-recover and invariants") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t d = 2 + (std::size_t)(rng() % 12);
    Matrix q = random_orthogonal(rng, d);
    std::vector<double> diag(d);
    std::uniform_real_distribution<double> unif(0.0, 5.0);
    for (auto& v : diag) v = unif(rng);
    std::sort(diag.begin(), diag.end(), std::greater<>());
    // S = Q D Q^T.
    Matrix dm(d, d);
    for (std::size_t i = 0; i < d; ++i) dm(i, i) = diag[i];
    Matrix s_full = matmul(matmul(q, dm), transpose(q));
    SymPsdMatrix s = SymPsdMatrix::from_dense(s_full);

    auto e = eig_sym(s);
    for (std::size_t i = 0; i < d; ++i)
      CHECK(e.eigenvalues[i] == doctest::Approx(diag[i]).epsilon(1e-10));

    // Orthogonality: ||Q^T Q - I||_F <= 1e-10 d.
    Matrix qtq = matmul(transpose(e.eigenvectors), e.eigenvectors);
    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double t = qtq(i, j) - (i == j ? 1.0 : 0.0);
        err += t * t;
      }
    CHECK(std::sqrt(err) <= 1e-10 * (double)d);

    // Reconstruction: ||Q L Q^T - S||_F <= 1e-9 ||S||_F.
    Matrix lm(d, d);
    for (std::size_t i = 0; i < d; ++i) lm(i, i) = e.eigenvalues[i];
    Matrix rec = matmul(matmul(e.eigenvectors, lm), transpose(e.eigenvectors));
    double rerr = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double t = rec(i, j) - s(i, j);
        rerr += t * t;
      }
    CHECK(std::sqrt(rerr) <= 1e-9 * s.frobenius_norm());
  }
}

TEST_CASE("cholesky basics") {
  auto id = cholesky(SymPsdMatrix::identity(3), 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(id.lower()(i, i) == doctest::Approx(1.0).epsilon(1e-15));

  // [[4,2],[2,5]] -> L = [[2,0],[1,2]] by hand elimination.
  SymPsdMatrix s(2);
  s.at(0, 0) = 4.0;
  s.at(1, 0) = 2.0;
  s.at(1, 1) = 5.0;
  auto f = cholesky(s, 0.0);
  CHECK(f.lower()(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.lower()(1, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(f.lower()(1, 1) == doctest::Approx(2.0).epsilon(1e-14));

  // 0_2 with shift 1 -> L = I_2.
  auto z = cholesky(SymPsdMatrix(2), 1.0);
  CHECK(z.lower()(0, 0) == doctest::Approx(1.0));
  CHECK(z.lower()(1, 1) == doctest::Approx(1.0));

  CHECK_THROWS_AS(cholesky(SymPsdMatrix(2), 0.0), NotPositiveDefinite);
}

TEST_CASE("cholesky reconstruction on random SPD") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t d = 3 + (std::size_t)(rng() % 10);
    SymPsdMatrix s = random_psd(rng, d, d + 2);
    auto f = cholesky(s, 0.0);
    Matrix rec = matmul(f.lower(), transpose(f.lower()));
    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double t = rec(i, j) - s(i, j);
        err += t * t;
      }
    CHECK(std::sqrt(err) <= 1e-9 * s.frobenius_norm());
  }
}

TEST_CASE("soft_projection trivial and oracle") {
  // S = 0_3, lambda 1 -> P = 0, P_perp = I.
  auto [p0, pp0] = soft_projection(SymPsdMatrix(3), 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(p0(i, j) == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(pp0(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }

  // S = I_2, lambda 1 -> both halves are I/2.
  auto [p1, pp1] = soft_projection(SymPsdMatrix::identity(2), 1.0);
  CHECK(p1(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pp1(1, 1) == doctest::Approx(0.5).epsilon(1e-12));

  // Random 5x5 PSD vs Q diag(l/(l+0.3)) Q^T from the eigensolver.
  std::mt19937_64 rng(3);
  SymPsdMatrix s = random_psd(rng, 5, 5);
  auto [p, pp] = soft_projection(s, 0.3);
  auto e = eig_sym(s);
  Matrix dm(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    dm(i, i) = e.eigenvalues[i] / (e.eigenvalues[i] + 0.3);
  Matrix oracle = matmul(matmul(e.eigenvectors, dm), transpose(e.eigenvectors));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(p(i, j) == doctest::Approx(oracle(i, j)).epsilon(1e-9));
}

TEST_CASE("soft_rank closed forms") {
  CHECK(soft_rank(SymPsdMatrix(4), 0.7) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(soft_rank(SymPsdMatrix::identity(3), 1.0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(soft_rank(SymPsdMatrix::diagonal({4.0, 1.0, 0.0}), 1.0) ==
        doctest::Approx(1.3).epsilon(1e-12));
}

TEST_CASE("soft_rank2 closed forms") {
  CHECK(soft_rank2(SymPsdMatrix::identity(3), 1.0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(soft_rank2(SymPsdMatrix(5), 2.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(soft_rank2(SymPsdMatrix::diagonal({4.0, 1.0, 0.0}), 1.0) ==
        doctest::Approx(0.89).epsilon(1e-12));
}

TEST_CASE("log_det_complexity closed forms and Cholesky oracle") {
  CHECK(log_det_complexity(SymPsdMatrix(4), 0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(log_det_complexity(SymPsdMatrix::identity(2), 1.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  std::mt19937_64 rng(5);
  SymPsdMatrix s = random_psd(rng, 6, 6);
  const double lambda = 0.1;
  // Oracle: (1/2) log det(S/lambda + I) via Cholesky of that matrix.
  SymPsdMatrix scaled(6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      scaled.at(i, j) = s(i, j) / lambda + (i == j ? 1.0 : 0.0);
  double oracle = 0.5 * cholesky(scaled, 0.0).log_det();
  CHECK(log_det_complexity(s, lambda) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("trace_function matches the named maps") {
  SymPsdMatrix i3 = SymPsdMatrix::identity(3);
  CHECK(trace_function(i3, TraceMap::identity) == doctest::Approx(3.0));
  CHECK(trace_function(i3, TraceMap::soft_rank, 1.0) == doctest::Approx(1.5).epsilon(1e-12));
  SymPsdMatrix d2 = SymPsdMatrix::diagonal({1.0, 3.0});
  CHECK(trace_function(d2, TraceMap::log1p, 1.0) ==
        doctest::Approx(std::log(2.0) + std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("complementarity P + P_perp = I on random instances") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> lam(0.05, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t d = 1 + (std::size_t)(rng() % 20);
    SymPsdMatrix s = random_psd(rng, d, 1 + (std::size_t)(rng() % d));
    auto [p, pp] = soft_projection(s, lam(rng));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double want = i == j ? 1.0 : 0.0;
        REQUIRE(std::abs(p(i, j) + pp(i, j) - want) <= 1e-10);
      }
  }
}

TEST_CASE("soft_rank limit recovers integer rank monotonically") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    std::size_t d = 8 + (std::size_t)(rng() % 8);
    std::size_t r = 1 + (std::size_t)(rng() % (d - 1));
    SymPsdMatrix s = random_psd(rng, d, r);
    double prev = -1.0;
    double lambda = 1.0;
    double last = 0.0;
    while (lambda >= 1e-8 * 0.99) {
      last = soft_rank(s, lambda);
      // Nonincreasing in lambda (nondecreasing along the descending ladder);
      // the slack covers the d - lambda*tr cancellation near lambda = 1e-8.
      REQUIRE(last >= prev - 1e-6);
      prev = last;
      lambda *= 0.1;
    }
    CHECK(std::abs(last - (double)r) < 1e-3);
  }
}

TEST_CASE("Cholesky fast path equals eigendecomposition oracle") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> lam(1e-3, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t d = 1 + (std::size_t)(rng() % 20);
    SymPsdMatrix s = random_psd(rng, d, 1 + (std::size_t)(rng() % d));
    double lambda = lam(rng);
    double fast = soft_rank(s, lambda);
    double oracle = soft_rank_eigen_oracle(s, lambda);
    double rel = std::abs(fast - oracle) / std::max(1.0, std::abs(oracle));
    worst = std::max(worst, rel);
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("soft_rank is monotone in the PSD order") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> lam(0.05, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t d = 2 + (std::size_t)(rng() % 12);
    SymPsdMatrix a = random_psd(rng, d, d);
    SymPsdMatrix bump = random_psd(rng, d, 1 + (std::size_t)(rng() % d));
    SymPsdMatrix b(d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) b.at(i, j) = a(i, j) + bump(i, j);
    double lambda = lam(rng);
    REQUIRE(soft_rank(a, lambda) <= soft_rank(b, lambda) + 1e-9);
  }
}

TEST_CASE("errors: NonFinite and NotPsd") {
  SymPsdMatrix bad(2);
  bad.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(soft_rank(bad, 1.0), NonFinite);

  SymPsdMatrix indefinite = SymPsdMatrix::diagonal({1.0, -1.0});
  CHECK_THROWS_AS(soft_rank(indefinite, 0.1), NotPsd);
}

TEST_CASE("binary dump/load round trip") {
  std::mt19937_64 rng(37);
  SymPsdMatrix s = random_psd(rng, 7, 7);
  std::string path = "test_linalg_matrix.bin";
  save_matrix(path, s);
  SymPsdMatrix back = load_matrix(path);
  REQUIRE(back.order() == s.order());
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j <= i; ++j) REQUIRE(back(i, j) == s(i, j));
  std::remove(path.c_str());
}

TEST_CASE("spectral norm matches eigensolver") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t d = 2 + (std::size_t)(rng() % 15);
    SymPsdMatrix s = random_psd(rng, d, d);
    double top = eig_sym(s).eigenvalues.front();
    CHECK(spectral_norm(s) == doctest::Approx(top).epsilon(1e-6));
  }
}
