// Scalar complexity / generalization-gap estimators computed from the
// information matrices, plus the prediction-error/uncertainty summary.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>

#include "gapest/infomat.hpp"
#include "gapest/linalg.hpp"
#include "gapest/net.hpp"

namespace gapest::estimators {

class Singular : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ZeroTrace : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DegenerateBand : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadProbabilities : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method {
  tic_reg,
  trace_ratio,
  soft_rank_gap,
  soft_rank_only,
  log_det,
  rank2,
  trace_f,
  spec_norm_f,
  param_error,
  l2_geometry,
};

const char* method_name(Method m);

/// All estimators report the asymptotic n-free scale (the n * E[gap]
/// convention); divide by n when comparing against a measured gap.
struct GapEstimate {
  Method method;
  double value = 0.0;
  double lambda = 0.0;
  std::size_t n = 0;
  bool per_sample = false;
};

double per_sample_value(const GapEstimate& e);

struct ErrorUncertainty {
  double mse = 0.0;
  double uncertainty = 0.0;
  double ratio = 0.0;
  bool ratio_missing = false;
};

/// The full row of spectral complexity measures for one model: exact,
/// Kronecker-factored, and diagonal variants, plus trace and spectral norm.
struct ComplexityTable {
  double rank_f = 0.0;
  double rank2_f = 0.0;
  double logdet_f = 0.0;
  double rank_kfac = 0.0;
  double logdet_kfac = 0.0;
  double rank_diag = 0.0;
  double logdet_diag = 0.0;
  double trace_f = 0.0;
  double specnorm_f = 0.0;
};

/// tr(C_reg * (H_gn + lambda I)^-1) and tr((C_reg (H_gn + lambda I)^-1)^2)
/// share the whitening work, so both come out of one call.
struct RiemannianSummary {
  double tic = 0.0;
  double l2 = 0.0;
  double grad_norm = 0.0;
  bool not_at_minimum = false;
};

RiemannianSummary whitened_summary(const infomat::InfoBundle& bundle,
                                   const net::ModelState& model);

GapEstimate tic_regularized(const infomat::InfoBundle& bundle,
                            const net::ModelState& model);
GapEstimate trace_ratio(const infomat::InfoBundle& bundle);
GapEstimate soft_rank_gap(const infomat::InfoBundle& bundle);
GapEstimate param_error_bound(const infomat::InfoBundle& bundle);
GapEstimate l2_geometry_error(const infomat::InfoBundle& bundle,
                              const net::ModelState& model);

/// predictions: n×K probability rows; labels: n×K one-hot.
ErrorUncertainty mse_uncertainty(const linalg::Matrix& predictions,
                                 const linalg::Matrix& labels);

/// Mean output-space projection E[J (F + lambda I)^-1 Jᵀ] (K×K), assembled
/// in chunks.
linalg::Matrix output_projection(const net::ModelState& model,
                                 const net::LabeledBatch& batch,
                                 const infomat::InfoBundle& bundle,
                                 std::size_t chunk_size = 256);

/// (kappa^-1 * alpha, kappa * alpha) with kappa the condition number of the
/// output projection and alpha the error/uncertainty trace ratio.
std::pair<double, double> condition_number_band(
    const linalg::Matrix& out_projection,
    const infomat::MomentSummaries& moments);

ComplexityTable complexity_table(const infomat::InfoBundle& bundle,
                                 const infomat::KfacBlocks& kfac,
                                 const linalg::SymPsdMatrix& diag_f);

}  // namespace gapest::estimators
