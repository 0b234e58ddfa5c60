// End-to-end acceptance suite: nine criteria, one PASS/FAIL line each.
// Tolerances are pinned in code next to each criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "gapest/estimators.hpp"
#include "gapest/harness.hpp"
#include "gapest/infomat.hpp"
#include "gapest/linalg.hpp"
#include "gapest/net.hpp"
#include "gapest/verify.hpp"

using gapest::linalg::Matrix;
using gapest::linalg::SymPsdMatrix;
using gapest::net::Architecture;
using gapest::net::Head;
using gapest::net::LabeledBatch;
using gapest::net::ModelState;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s (%s)\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

bool suite_property_pass(const std::vector<gapest::verify::PropertyResult>& rs,
                         const char* name) {
  for (const auto& r : rs)
    if (r.name == name) return r.pass;
  return false;
}

LabeledBatch gaussian_features(std::mt19937_64& rng, std::size_t n,
                               std::size_t p, std::size_t k) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  LabeledBatch b{Matrix(n, p), Matrix(n, k)};
  for (std::size_t i = 0; i < n * p; ++i) b.features.data()[i] = gauss(rng);
  return b;
}

/// Labels sampled from the model's own predictive distribution.
void calibrate_labels(std::mt19937_64& rng, const ModelState& gen,
                      LabeledBatch& b) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto fwd = gapest::net::forward(gen, b);
  const std::size_t k = b.labels.cols();
  for (std::size_t i = 0; i < b.features.rows(); ++i) {
    const double u = unif(rng);
    double acc = 0.0;
    std::size_t pick = k - 1;
    for (std::size_t a = 0; a < k; ++a) {
      acc += fwd.predictions(i, a);
      if (u <= acc) {
        pick = a;
        break;
      }
    }
    for (std::size_t a = 0; a < k; ++a) b.labels(i, a) = a == pick ? 1.0 : 0.0;
  }
}

/// Damped Newton on the ridge-regularized empirical loss; the Gauss-Newton
/// curvature is exact for the linear softmax model used below.
ModelState newton_fit(const ModelState& init, const LabeledBatch& b,
                      double lambda) {
  ModelState m = init;
  const std::size_t d = m.theta.size();
  for (int it = 0; it < 100; ++it) {
    double cost0 = 0.0;
    auto g = gapest::net::mean_gradient(m, b, {}, &cost0);
    double t2 = 0.0;
    for (double v : m.theta) t2 += v * v;
    cost0 += 0.5 * lambda * t2;
    double gn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      g[j] += lambda * m.theta[j];
      gn += g[j] * g[j];
    }
    if (std::sqrt(gn) < 1e-11) break;
    auto derivs = gapest::net::per_sample_derivatives(m, b);
    auto bundle = gapest::infomat::assemble_exact(derivs, lambda);
    auto chol = gapest::linalg::cholesky(bundle.H_gn, lambda);
    chol.solve(g.data());
    double step = 1.0;
    for (int h = 0; h < 40; ++h) {
      ModelState trial = m;
      for (std::size_t j = 0; j < d; ++j) trial.theta[j] -= step * g[j];
      double c1 = gapest::net::mean_cost(trial, b);
      double s2 = 0.0;
      for (double v : trial.theta) s2 += v * v;
      c1 += 0.5 * lambda * s2;
      if (c1 <= cost0) {
        m = trial;
        break;
      }
      step *= 0.5;
    }
  }
  return m;
}

std::string run_command(const std::string& cmd) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return out;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, got);
  pclose(pipe);
  return out;
}

// --------------------------------------------------------------- criteria

void criterion_1_theorem_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto results = gapest::verify::run_suite("theorems");
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  bool pass = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.worst);
    pass = pass && r.pass;
  }
  pass = pass && elapsed <= 60.0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "matrix-theorem suite: worst violation %.3e (tol 1e-9), "
                "%.1fs (limit 60s)",
                worst, elapsed);
  report(1, pass, detail);
}

void criterion_2_soft_rank() {
  auto results = gapest::verify::run_suite("linalg");
  const bool pass =
      suite_property_pass(results, "soft_rank_fast_path_equals_eigen_oracle") &&
      suite_property_pass(results, "identity_soft_rank_closed_form") &&
      suite_property_pass(results, "soft_rank_low_lambda_recovers_rank");
  report(2, pass,
         "soft rank: fast path vs eigen oracle (1e-8 rel, 500 instances), "
         "identity closed form (1e-12), rank recovery at lambda=1e-8 (1e-3)");
}

void criterion_3_calibration() {
  const auto t0 = std::chrono::steady_clock::now();
  auto results = gapest::verify::run_suite("calibration");
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  bool pass = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.worst);
    pass = pass && r.pass;
  }
  pass = pass && elapsed <= 120.0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "calibration: worst rel deviation %.4f (tol 0.05 at 1e5 "
                "samples), %.1fs (limit 120s)",
                worst, elapsed);
  report(3, pass, detail);
}

void criterion_4_tic_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t p = 5, k = 3, n = 2000, n_test = 10000;
  const double lambda = 1e-6;
  Architecture arch{{p, k}, Head::softmax_ce};
  std::mt19937_64 rng(12345);
  ModelState gen = gapest::net::init_model(arch, 99);

  // reference rank at theta*: fit on a large calibrated sample
  auto big = gaussian_features(rng, 200000, p, k);
  calibrate_labels(rng, gen, big);
  ModelState star = newton_fit(gapest::net::init_model(arch, 5), big, lambda);
  auto derivs = gapest::net::per_sample_derivatives(star, big);
  auto bundle = gapest::infomat::assemble_exact(derivs, lambda);
  const double rank = gapest::linalg::soft_rank(bundle.F, lambda);

  double sum_ngap = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    auto train = gaussian_features(rng, n, p, k);
    calibrate_labels(rng, gen, train);
    ModelState theta_hat = newton_fit(star, train, lambda);
    auto test = gaussian_features(rng, n_test, p, k);
    calibrate_labels(rng, gen, test);
    // control variate: the cost at the fixed reference theta* has equal
    // expectation on both splits, so subtracting it leaves the expected
    // gap unchanged while removing most of the per-trial sampling noise
    const double gap = (gapest::net::mean_cost(theta_hat, test) -
                        gapest::net::mean_cost(star, test)) -
                       (gapest::net::mean_cost(theta_hat, train) -
                        gapest::net::mean_cost(star, train));
    sum_ngap += n * gap;
  }
  const double mean_ngap = sum_ngap / trials;
  const double elapsed = seconds_since(t0);
  const bool pass =
      std::abs(mean_ngap / rank - 1.0) <= 0.20 && elapsed <= 600.0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "mean n*gap %.3f vs rank(F) %.3f over 200 trials "
                "(20%% tolerance), %.1fs (limit 600s)",
                mean_ngap, rank, elapsed);
  report(4, pass, detail);
}

void criterion_5_overfitting_ratio(
    const std::vector<gapest::verify::PropertyResult>& estimator_suite) {
  const bool pass =
      suite_property_pass(estimator_suite, "mse_uncertainty_ratio_bound");
  report(5, pass,
         "MSE/Uncertainty <= 2*eps on 1000 constructions at eps in "
         "{0.01, 0.1, 0.4}, zero violations");
}

gapest::harness::GridSpec acceptance_grid() {
  gapest::harness::GridSpec g;
  g.data.source = gapest::harness::DataSource::synthetic_gaussian;
  g.data.input_dim = 49;
  g.data.classes = 10;
  g.data.n_test = 10000;
  g.data.difficulty = 1.0;
  g.data.seed = 17;
  g.arch = {{49, 70, 10}, Head::softmax_ce};
  g.n_train_values = {1000, 2000};
  g.c_values = {0.01, 0.1, 1.0, 10.0, 100.0};
  g.seeds = {1, 2, 3};
  g.learning_rate = 0.01;
  g.batch_size = 100;
  g.steps = 2000;
  return g;
}

double tau_of(const std::vector<gapest::harness::RunRecord>& rows,
              std::optional<double> gapest::harness::RunRecord::* field) {
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    if (r.status != "OK" || !r.gap || !(r.*field)) continue;
    xs.push_back(*(r.*field));
    ys.push_back(*r.gap);
  }
  return gapest::harness::kendall_tau(xs, ys);
}

std::vector<gapest::harness::RunRecord> g_grid_records;

void criterion_6_grid() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = acceptance_grid();
  // resumable across interrupted acceptance runs; the grid is deterministic
  g_grid_records =
      gapest::harness::run_grid(grid, "acceptance_grid_s2000.csv");
  std::size_t ok = 0;
  for (const auto& r : g_grid_records)
    if (r.status == "OK") ++ok;
  const double tau_rank = tau_of(g_grid_records, &gapest::harness::RunRecord::rank_f);
  const double tau_trace = tau_of(g_grid_records, &gapest::harness::RunRecord::trace_f);
  const double tau_spec = tau_of(g_grid_records, &gapest::harness::RunRecord::specnorm_f);
  const double elapsed = seconds_since(t0);
  const bool pass = ok == 30 && tau_rank >= 0.5 && tau_rank > tau_trace &&
                    tau_rank > tau_spec && elapsed <= 7200.0;
  char detail[200];
  std::snprintf(detail, sizeof detail,
                "30-run grid: tau(rank_f)=%.3f (>=0.5), tau(trace_f)=%.3f, "
                "tau(specnorm_f)=%.3f, %zu/30 OK, %.0fs (limit 7200s)",
                tau_rank, tau_trace, tau_spec, ok, elapsed);
  report(6, pass, detail);
}

void criterion_7_approximation_ordering() {
  // exact chain on d <= 300 nets with calibrated labels: the diagonal and
  // layer-block pinches are theorem-backed; the Kronecker-factored middle
  // term is checked directly
  std::mt19937_64 rng(3);
  bool pass = true;
  double worst = 0.0;
  Architecture arch{{6, 10, 4}, Head::softmax_ce};
  std::vector<std::size_t> blocks;
  for (std::size_t l = 0; l + 1 < arch.layer_sizes.size(); ++l)
    blocks.push_back((arch.layer_sizes[l] + 1) * arch.layer_sizes[l + 1]);
  for (int trial = 0; trial < 8; ++trial) {
    ModelState m = gapest::net::init_model(arch, rng());
    auto b = gaussian_features(rng, 4000, 6, 4);
    calibrate_labels(rng, m, b);
    auto derivs = gapest::net::per_sample_derivatives(m, b);
    auto kfac = gapest::infomat::kfac_approximate(derivs, arch);
    auto diag = gapest::infomat::diagonal_approximate(derivs);
    auto bundle = gapest::infomat::assemble_exact(derivs, 0.0);
    auto pinched = gapest::infomat::pinch(bundle.F, blocks);
    for (double lam : {1e-4, 1e-2, 0.1}) {
      const double rf = gapest::linalg::soft_rank(bundle.F, lam);
      const double rp = gapest::linalg::soft_rank(pinched, lam);
      const double rk = kfac.soft_rank(lam);
      const double rd = gapest::linalg::soft_rank(diag, lam);
      // rank_diag >= rank_kfac >= rank_f, plus the theorem-backed pinch chain
      worst = std::max({worst, rk - rd, rf - rk, rf - rp, rp - rd});
      pass = pass && rd >= rk - 1e-9 && rk >= rf - 1e-9 && rp >= rf - 1e-9 &&
             rd >= rp - 1e-9;
    }
  }
  // full-scale per-run inequality: 1x1 pinching (diagonal) >= exact
  std::size_t checked = 0;
  for (const auto& r : g_grid_records) {
    if (r.status != "OK" || !r.rank_f || !r.rank_diag) continue;
    ++checked;
    worst = std::max(worst, *r.rank_f - *r.rank_diag);
    pass = pass && *r.rank_diag >= *r.rank_f - 1e-9;
  }
  pass = pass && checked == 30;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "diag >= kfac >= exact on 8 small nets x 3 lambdas, "
                "diag >= exact on %zu grid runs; worst violation %.3e",
                checked, worst);
  report(7, pass, detail);
}

void criterion_8_derivative_checks() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst_grad = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t p = 2 + rng() % 4;
    const std::size_t k = 2 + rng() % 3;
    const std::size_t hidden = 3 + rng() % 4;
    Architecture arch{{p, hidden, k},
                      t % 2 == 0 ? Head::softmax_ce : Head::squared_loss};
    ModelState m = gapest::net::init_model(arch, rng());
    auto b = gaussian_features(rng, 5, p, k);
    for (std::size_t i = 0; i < 5; ++i) b.labels(i, rng() % k) = 1.0;
    auto grad = gapest::net::mean_gradient(m, b);
    double gnorm = 0.0;
    for (double v : grad) gnorm += v * v;
    gnorm = std::sqrt(gnorm);
    double err = 0.0;
    for (std::size_t j = 0; j < m.theta.size(); ++j) {
      const double h = 1e-5 * (1.0 + std::abs(m.theta[j]));
      ModelState plus = m, minus = m;
      plus.theta[j] += h;
      minus.theta[j] -= h;
      const double fd = (gapest::net::mean_cost(plus, b) -
                         gapest::net::mean_cost(minus, b)) /
                        (2.0 * h);
      err = std::max(err, std::abs(fd - grad[j]));
    }
    worst_grad = std::max(worst_grad, err / std::max(1.0, gnorm));
  }

  // linear heads: the Gauss-Newton matrix is the exact Hessian
  double worst_hess = 0.0;
  for (Head head : {Head::softmax_ce, Head::squared_loss}) {
    Architecture arch{{4, 3}, head};
    ModelState m = gapest::net::init_model(arch, 21);
    auto b = gaussian_features(rng, 12, 4, 3);
    for (std::size_t i = 0; i < 12; ++i) b.labels(i, rng() % 3) = 1.0;
    auto fd = gapest::net::finite_difference_hessian(m, b);
    auto bundle =
        gapest::infomat::assemble_exact(gapest::net::per_sample_derivatives(m, b), 0.0);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < fd.rows(); ++i)
      for (std::size_t j = 0; j < fd.cols(); ++j) {
        const double diff = fd(i, j) - bundle.H_gn(i, j);
        num += diff * diff;
        den += fd(i, j) * fd(i, j);
      }
    worst_hess = std::max(worst_hess, std::sqrt(num / std::max(den, 1e-300)));
  }
  const bool pass = worst_grad <= 1e-5 && worst_hess <= 1e-5;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "finite differences: gradient rel err %.2e on 20 cases, "
                "linear-head Hessian vs Gauss-Newton rel err %.2e (tol 1e-5)",
                worst_grad, worst_hess);
  report(8, pass, detail);
}

void criterion_9_determinism() {
  const std::string cli = GAPEST_CLI_PATH;
  const std::string cmd = cli + " verify --suite all 2>/dev/null";
  const std::string first = run_command(cmd);
  const std::string second = run_command(cmd);
  const bool verify_same = !first.empty() && first == second;

  gapest::harness::GridSpec g;
  g.data.source = gapest::harness::DataSource::synthetic_gaussian;
  g.data.input_dim = 6;
  g.data.classes = 3;
  g.data.n_test = 300;
  g.data.difficulty = 1.5;
  g.data.seed = 7;
  g.arch = {{6, 8, 3}, Head::softmax_ce};
  g.learning_rate = 0.01;
  g.batch_size = 50;
  g.steps = 200;
  const std::string row1 =
      gapest::harness::csv_row(gapest::harness::run_cell(g, 200, 1.0, 3));
  const std::string row2 =
      gapest::harness::csv_row(gapest::harness::run_cell(g, 200, 1.0, 3));
  const bool cell_same = row1 == row2;

  char detail[160];
  std::snprintf(detail, sizeof detail,
                "verify --suite all twice: %s; grid cell twice: %s "
                "(bitwise comparison)",
                verify_same ? "identical" : "DIFFER",
                cell_same ? "identical" : "DIFFER");
  report(9, verify_same && cell_same, detail);
}

}  // namespace

int main() {
  criterion_1_theorem_suite();
  criterion_2_soft_rank();
  criterion_3_calibration();
  criterion_4_tic_recovery();
  const auto estimator_suite = gapest::verify::run_suite("estimators");
  criterion_5_overfitting_ratio(estimator_suite);
  criterion_6_grid();
  criterion_7_approximation_ordering();
  criterion_8_derivative_checks();
  criterion_9_determinism();
  std::printf("%s\n", g_failures == 0 ? "all criteria passed"
                                      : "some criteria FAILED");
  return g_failures == 0 ? 0 : 1;
}
