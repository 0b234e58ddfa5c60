#include "gapest/estimators.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace gapest::estimators {

namespace {

using linalg::CholeskyFactor;
using linalg::Matrix;
using linalg::SymPsdMatrix;

CholeskyFactor factor_regularized_hessian(const SymPsdMatrix& h_gn,
                                          double lambda) {
  try {
    return linalg::cholesky(h_gn, lambda);
  } catch (const linalg::NotPositiveDefinite&) {
    throw Singular("regularized Hessian is numerically singular");
  }
}

/// W = L^-1 * M * L^-T for the dense symmetric M, via two triangular solves.
Matrix whiten(const Matrix& lower, const SymPsdMatrix& m) {
  const std::size_t d = m.order();
  Matrix w = m.to_dense();
  // L X = M  (solve for X = L^-1 M)
  cblas_dtrsm(CblasRowMajor, CblasLeft, CblasLower, CblasNoTrans,
              CblasNonUnit, static_cast<int>(d), static_cast<int>(d), 1.0,
              lower.data(), static_cast<int>(d), w.data(),
              static_cast<int>(d));
  // X L^T = (L^-1 M), solve for X = (L^-1 M) L^-T
  cblas_dtrsm(CblasRowMajor, CblasRight, CblasLower, CblasTrans, CblasNonUnit,
              static_cast<int>(d), static_cast<int>(d), 1.0, lower.data(),
              static_cast<int>(d), w.data(), static_cast<int>(d));
  return w;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::tic_reg: return "tic_reg";
    case Method::trace_ratio: return "trace_ratio";
    case Method::soft_rank_gap: return "soft_rank_gap";
    case Method::soft_rank_only: return "soft_rank_only";
    case Method::log_det: return "log_det";
    case Method::rank2: return "rank2";
    case Method::trace_f: return "trace_f";
    case Method::spec_norm_f: return "spec_norm_f";
    case Method::param_error: return "param_error";
    case Method::l2_geometry: return "l2_geometry";
  }
  return "unknown";
}

double per_sample_value(const GapEstimate& e) {
  if (e.per_sample || e.n == 0) return e.value;
  return e.value / static_cast<double>(e.n);
}

RiemannianSummary whitened_summary(const infomat::InfoBundle& bundle,
                                   const net::ModelState& model) {
  const auto reg = infomat::regularize(bundle, model);
  const auto chol = factor_regularized_hessian(bundle.H_gn, bundle.lambda);
  const Matrix w = whiten(chol.lower(), reg.C_reg);
  RiemannianSummary out;
  const std::size_t d = w.rows();
  for (std::size_t i = 0; i < d; ++i) out.tic += w(i, i);
  // tr((C H^-1)^2) = ||L^-1 C L^-T||_F^2 by cyclicity
  const double fro = w.frobenius_norm();
  out.l2 = fro * fro;
  out.grad_norm = reg.grad_norm;
  out.not_at_minimum = reg.not_at_minimum;
  return out;
}

GapEstimate tic_regularized(const infomat::InfoBundle& bundle,
                            const net::ModelState& model) {
  const auto summary = whitened_summary(bundle, model);
  return {Method::tic_reg, summary.tic, bundle.lambda, bundle.n_samples};
}

GapEstimate trace_ratio(const infomat::InfoBundle& bundle) {
  const double trf = bundle.F.trace();
  if (trf < 1e-12) throw ZeroTrace("trace_ratio: tr(F) vanishes");
  return {Method::trace_ratio, bundle.C.trace() / trf, bundle.lambda,
          bundle.n_samples};
}

GapEstimate soft_rank_gap(const infomat::InfoBundle& bundle) {
  const double ratio = trace_ratio(bundle).value;
  const double rank = linalg::soft_rank(bundle.F, bundle.lambda);
  return {Method::soft_rank_gap, ratio * rank, bundle.lambda,
          bundle.n_samples};
}

GapEstimate param_error_bound(const infomat::InfoBundle& bundle) {
  const auto chol = factor_regularized_hessian(bundle.F, bundle.lambda);
  return {Method::param_error, chol.trace_inverse(), bundle.lambda,
          bundle.n_samples};
}

GapEstimate l2_geometry_error(const infomat::InfoBundle& bundle,
                              const net::ModelState& model) {
  const auto summary = whitened_summary(bundle, model);
  return {Method::l2_geometry, summary.l2, bundle.lambda, bundle.n_samples};
}

ErrorUncertainty mse_uncertainty(const Matrix& predictions,
                                 const Matrix& labels) {
  const std::size_t n = predictions.rows();
  const std::size_t k = predictions.cols();
  if (labels.rows() != n || labels.cols() != k)
    throw linalg::ShapeMismatch("mse_uncertainty: shape mismatch");
  if (n == 0) throw BadProbabilities("mse_uncertainty: empty prediction set");
  ErrorUncertainty out;
  for (std::size_t i = 0; i < n; ++i) {
    double rowsum = 0.0, norm2 = 0.0, err2 = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      const double p = predictions(i, a);
      if (p < -1e-12 || !std::isfinite(p))
        throw BadProbabilities("mse_uncertainty: negative or non-finite entry");
      rowsum += p;
      norm2 += p * p;
      const double e = labels(i, a) - p;
      err2 += e * e;
    }
    if (std::abs(rowsum - 1.0) > 1e-9)
      throw BadProbabilities("mse_uncertainty: row does not sum to 1");
    out.mse += err2 / static_cast<double>(n);
    out.uncertainty += (1.0 - norm2) / static_cast<double>(n);
  }
  out.ratio_missing = out.uncertainty < 1e-12;
  out.ratio = out.ratio_missing ? 0.0 : out.mse / out.uncertainty;
  return out;
}

Matrix output_projection(const net::ModelState& model,
                         const net::LabeledBatch& batch,
                         const infomat::InfoBundle& bundle,
                         std::size_t chunk_size) {
  const std::size_t n = batch.features.rows();
  const std::size_t d = model.arch.parameter_count();
  const std::size_t k = model.arch.output_dim();
  if (chunk_size == 0) chunk_size = 256;
  const auto chol = factor_regularized_hessian(bundle.F, bundle.lambda);

  Matrix acc(k, k);
  std::vector<double> rows(chunk_size * k * d);
  for (std::size_t lo = 0; lo < n; lo += chunk_size) {
    const std::size_t hi = std::min(n, lo + chunk_size);
    const std::size_t m = hi - lo;
    net::LabeledBatch sub{Matrix(m, batch.features.cols()),
                          Matrix(m, batch.labels.cols())};
    std::memcpy(sub.features.data(), batch.features.row(lo),
                m * batch.features.cols() * sizeof(double));
    std::memcpy(sub.labels.data(), batch.labels.row(lo),
                m * batch.labels.cols() * sizeof(double));
    const auto derivs = net::per_sample_derivatives(model, sub);
    for (std::size_t i = 0; i < m; ++i)
      std::memcpy(rows.data() + i * k * d, derivs.jacobians[i].data(),
                  k * d * sizeof(double));
    // rows := J L^-T, so rows rowsᵀ accumulates J (F + lambda I)^-1 Jᵀ
    cblas_dtrsm(CblasRowMajor, CblasRight, CblasLower, CblasTrans,
                CblasNonUnit, static_cast<int>(m * k), static_cast<int>(d),
                1.0, chol.lower().data(), static_cast<int>(d), rows.data(),
                static_cast<int>(d));
    for (std::size_t i = 0; i < m; ++i)
      cblas_dsyrk(CblasRowMajor, CblasLower, CblasNoTrans,
                  static_cast<int>(k), static_cast<int>(d),
                  1.0 / static_cast<double>(n), rows.data() + i * k * d,
                  static_cast<int>(d), 1.0, acc.data(), static_cast<int>(k));
  }
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) acc(a, b) = acc(b, a);
  return acc;
}

std::pair<double, double> condition_number_band(
    const Matrix& out_projection, const infomat::MomentSummaries& moments) {
  const double alpha = moments.alpha_missing ? 0.0 : moments.trace_ratio_alpha;
  if (alpha == 0.0) return {0.0, 0.0};
  const auto eig =
      linalg::eig_sym(SymPsdMatrix::from_dense(out_projection));
  const double top = eig.eigenvalues.front();
  const double bottom = eig.eigenvalues.back();
  if (bottom <= 0.0)
    throw DegenerateBand("condition_number_band: projection not PD");
  const double kappa = top / bottom;
  return {alpha / kappa, alpha * kappa};
}

ComplexityTable complexity_table(const infomat::InfoBundle& bundle,
                                 const infomat::KfacBlocks& kfac,
                                 const SymPsdMatrix& diag_f) {
  const double lambda = bundle.lambda;
  if (lambda <= 0.0)
    throw Singular("complexity_table: requires lambda > 0");
  ComplexityTable t;
  const auto chol = factor_regularized_hessian(bundle.F, lambda);
  const std::size_t d = bundle.order();
  const double tr_inv = chol.trace_inverse();
  const double tr_inv2 = chol.trace_inverse_squared();
  t.rank_f = static_cast<double>(d) - lambda * tr_inv;
  t.rank2_f = static_cast<double>(d) - 2.0 * lambda * tr_inv +
              lambda * lambda * tr_inv2;
  t.logdet_f = 0.5 * (chol.log_det() -
                      static_cast<double>(d) * std::log(lambda));
  t.rank_kfac = kfac.soft_rank(lambda);
  t.logdet_kfac = kfac.log_det_complexity(lambda);
  // diagonal matrices reduce to scalar maps of the diagonal entries
  t.rank_diag = 0.0;
  t.logdet_diag = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double v = std::max(0.0, diag_f(i, i));
    t.rank_diag += v / (v + lambda);
    t.logdet_diag += 0.5 * std::log1p(v / lambda);
  }
  t.trace_f = bundle.F.trace();
  t.specnorm_f = linalg::spectral_norm(bundle.F);
  return t;
}

}  // namespace gapest::estimators
