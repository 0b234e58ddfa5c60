// Information matrices assembled from per-sample derivatives: the gradient
// second moment C, the Fisher matrix F, the Gauss-Newton Hessian surrogate,
// and their Kronecker-factored, diagonal, and pinched approximations.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gapest/linalg.hpp"
#include "gapest/net.hpp"

namespace gapest::infomat {

using linalg::Matrix;
using linalg::SymPsdMatrix;

class BadPartition : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UnsupportedArchitecture : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BundleKind : std::uint8_t { exact, kfac, diagonal };

/// C = E[g gᵀ] (uncentered second moment), F = E[JᵀΣJ], and the
/// Gauss-Newton surrogate of the Hessian (equal to F for both supported
/// heads). The mean gradient is kept so regularized forms can be derived
/// without a second pass over the data.
struct InfoBundle {
  SymPsdMatrix C;
  SymPsdMatrix F;
  SymPsdMatrix H_gn;
  double lambda = 0.0;
  std::size_t n_samples = 0;
  BundleKind kind = BundleKind::exact;
  std::vector<double> mean_grad;

  std::size_t order() const { return C.order(); }
};

/// Shifted forms at a (near-)stationary point: H_reg = H_gn + lambda*I and
/// C_reg = E[(g + lambda*theta)(g + lambda*theta)ᵀ], expanded from the
/// stored moments. `not_at_minimum` flags a mean regularized gradient that
/// is too large for the stationarity assumptions to be trusted.
struct RegularizedPair {
  SymPsdMatrix C_reg;
  SymPsdMatrix H_reg;
  double grad_norm = 0.0;
  bool not_at_minimum = false;
};

/// Per-layer Kronecker factors: A_l = E[ā āᵀ] over homogeneous input
/// activations (bias coordinate appended), G_l = E[δ δᵀ] over
/// backpropagated output gradients. The implied full matrix is
/// block-diagonal with blocks A_l ⊗ G_l.
struct KfacBlocks {
  struct LayerPair {
    SymPsdMatrix A;
    SymPsdMatrix G;
  };
  std::vector<LayerPair> layers;

  std::size_t order() const;
  /// Eigenvalues of the implied block-diagonal matrix: all products
  /// a_i * g_j per layer.
  std::vector<double> eigenvalues() const;
  double soft_rank(double lambda) const;
  double soft_rank2(double lambda) const;
  double log_det_complexity(double lambda) const;
  /// Materializes the block-diagonal matrix; intended for small models.
  SymPsdMatrix to_dense() const;
};

/// K×K moments of the prediction error e = ŷ − y and of the predictive
/// variance Σ, plus their trace ratio.
struct MomentSummaries {
  Matrix mean_B;
  Matrix mean_Sigma;
  double trace_ratio_alpha = 0.0;
  bool alpha_missing = false;
};

/// Frobenius cosine similarities between each exact matrix and its
/// "uncorrelated-moments" counterpart, plus log-norms of both sides.
/// A cosine is missing when either norm underflows to zero.
struct UncorrelatednessReport {
  double cos_c_jbj = 0.0;   // cos(C, E[Jᵀ E[B] J]) with B = e eᵀ
  double cos_f_jsj = 0.0;   // cos(F, E[Jᵀ E[Σ] J])
  double cos_b_sigma = 0.0; // cos(E[B], E[Σ])
  bool c_jbj_missing = false;
  bool f_jsj_missing = false;
  bool b_sigma_missing = false;
  double log_norm_c = 0.0;
  double log_norm_jbj = 0.0;
  double log_norm_f = 0.0;
  double log_norm_jsj = 0.0;
  double log_norm_b = 0.0;
  double log_norm_sigma = 0.0;
};

/// Everything the gap measurement needs from one pass over a dataset,
/// assembled in fixed-size chunks so per-sample Jacobians never have to be
/// materialized for the whole set at once.
struct ExactMoments {
  InfoBundle bundle;
  SymPsdMatrix jbj;  // E[Jᵀ E[B] J]
  SymPsdMatrix jsj;  // E[Jᵀ E[Σ] J]
  KfacBlocks kfac;
  SymPsdMatrix diag_f;
  MomentSummaries moments;
  UncorrelatednessReport report;
};

InfoBundle assemble_exact(const net::PerSampleDerivatives& derivs,
                          double lambda);

/// Monte-Carlo Fisher: labels resampled from the model's own predictive
/// distribution, m_samples draws per input.
SymPsdMatrix fisher_monte_carlo(const net::ModelState& model,
                                const net::LabeledBatch& batch,
                                std::size_t m_samples, std::uint64_t seed);

RegularizedPair regularize(const InfoBundle& bundle,
                           const net::ModelState& model);

KfacBlocks kfac_approximate(const net::PerSampleDerivatives& derivs,
                            const net::Architecture& arch);

/// Diagonal of the exact Fisher, returned as a diagonal matrix.
SymPsdMatrix diagonal_approximate(const net::PerSampleDerivatives& derivs);

/// Keeps the diagonal blocks given by block_sizes, zeroes everything else.
SymPsdMatrix pinch(const SymPsdMatrix& s,
                   const std::vector<std::size_t>& block_sizes);

MomentSummaries moment_summaries(const net::PerSampleDerivatives& derivs);

UncorrelatednessReport uncorrelatedness_report(
    const net::PerSampleDerivatives& derivs);

/// Chunked end-to-end assembly of all moments for one model/dataset pair.
ExactMoments assemble_streamed(const net::ModelState& model,
                               const net::LabeledBatch& batch, double lambda,
                               std::size_t chunk_size = 256);

/// Persists C/F/H as one binary matrix file each plus a key=value manifest.
void save_bundle(const std::string& dir, const InfoBundle& bundle,
                 std::uint64_t seed);
InfoBundle load_bundle(const std::string& dir);

}  // namespace gapest::infomat
