#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Dense symmetric linear algebra: factorizations, the Jacobi eigensolver
// used as a test oracle, and the concave trace functions (soft rank,
// rank^2, log-det) every gap estimator consumes.

namespace gapest::linalg {

struct NonFinite : std::runtime_error {
  explicit NonFinite(const std::string& what) : std::runtime_error(what) {}
};
struct NotPsd : std::runtime_error {
  explicit NotPsd(const std::string& what) : std::runtime_error(what) {}
};
struct NotPositiveDefinite : std::runtime_error {
  explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};
struct NoConvergence : std::runtime_error {
  explicit NoConvergence(const std::string& what) : std::runtime_error(what) {}
};
struct UnknownFunction : std::runtime_error {
  explicit UnknownFunction(const std::string& what) : std::runtime_error(what) {}
};
struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  static Matrix identity(std::size_t n);
  double frobenius_norm() const;
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Symmetric positive-semidefinite matrix of order d. Only the lower
/// triangle is stored (row-major packed); reads mirror it.
class SymPsdMatrix {
 public:
  SymPsdMatrix() = default;
  explicit SymPsdMatrix(std::size_t order)
      : order_(order), entries_(order * (order + 1) / 2, 0.0) {}

  /// Takes the lower triangle of a square matrix.
  static SymPsdMatrix from_dense(const Matrix& m);
  static SymPsdMatrix identity(std::size_t n);
  static SymPsdMatrix diagonal(const std::vector<double>& diag);

  std::size_t order() const { return order_; }

  double operator()(std::size_t i, std::size_t j) const {
    return i >= j ? entries_[i * (i + 1) / 2 + j] : entries_[j * (j + 1) / 2 + i];
  }
  /// Writable access to the stored (lower) triangle; requires i >= j.
  double& at(std::size_t i, std::size_t j) { return entries_[i * (i + 1) / 2 + j]; }

  const std::vector<double>& packed() const { return entries_; }
  std::vector<double>& packed() { return entries_; }

  double trace() const;
  double frobenius_norm() const;
  bool all_finite() const;
  Matrix to_dense() const;

  /// Scale-relative PSD acceptance tolerance: 1e-9 * trace / d.
  double psd_tolerance() const;

 private:
  std::size_t order_ = 0;
  std::vector<double> entries_;
};

/// Frobenius inner product <A, B> over full square matrices.
double frobenius_inner(const SymPsdMatrix& a, const SymPsdMatrix& b);

/// Eigenvalues sorted nonincreasing; eigenvectors as columns of an
/// orthogonal matrix aligned with the sorted eigenvalues.
struct EigenDecomposition {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;
};

/// Lower-triangular factor L with L L^T = S + shift I.
class CholeskyFactor {
 public:
  CholeskyFactor(std::size_t order, Matrix lower, double shift)
      : order_(order), lower_(std::move(lower)), shift_(shift) {}

  std::size_t order() const { return order_; }
  const Matrix& lower() const { return lower_; }
  double shift() const { return shift_; }

  /// Solves L x = b in place.
  void solve_lower(double* b) const;
  /// Solves L^T x = b in place.
  void solve_upper(double* b) const;
  /// Solves (S + shift I) x = b in place.
  void solve(double* b) const;

  /// log det(S + shift I) = 2 sum log L_ii.
  double log_det() const;
  /// tr((S + shift I)^-1) = ||L^-1||_F^2.
  double trace_inverse() const;
  /// tr((S + shift I)^-2).
  double trace_inverse_squared() const;

 private:
  std::size_t order_;
  Matrix lower_;
  double shift_;
};

/// Cyclic Jacobi eigensolver. Converges when the off-diagonal Frobenius
/// norm drops below 1e-12 * ||S||_F; throws NoConvergence after 30 sweeps.
EigenDecomposition eig_sym(const SymPsdMatrix& s);

/// Throws NotPositiveDefinite on a nonpositive pivot; caller may retry
/// with a larger shift.
CholeskyFactor cholesky(const SymPsdMatrix& s, double shift = 0.0);

/// P = S (S + lambda I)^-1 and its complement P_perp = lambda (S + lambda I)^-1.
std::pair<Matrix, Matrix> soft_projection(const SymPsdMatrix& s, double lambda);

/// rank_lambda(S) = tr(S (S + lambda I)^-1) = d - lambda tr((S + lambda I)^-1).
double soft_rank(const SymPsdMatrix& s, double lambda);

/// rank2_lambda(S) = tr((S (S + lambda I)^-1)^2).
double soft_rank2(const SymPsdMatrix& s, double lambda);

/// (1/2) log det(S / lambda + I) = (1/2) sum log(eig_i / lambda + 1).
double log_det_complexity(const SymPsdMatrix& s, double lambda);

enum class TraceMap { soft_rank, log1p, identity };

/// Spectral extension sum_i h(eig_i(S)) evaluated through the eigensolver.
double trace_function(const SymPsdMatrix& s, TraceMap h, double lambda = 1.0);

/// Largest eigenvalue by power iteration (200 iterations, tol 1e-8).
double spectral_norm(const SymPsdMatrix& s);

/// Throws NotPsd/NonFinite per the acceptance tolerance.
void require_psd(const SymPsdMatrix& s, const char* who);

// Plain binary dump/load: 8-byte little-endian order, then d(d+1)/2
// little-endian doubles (lower triangle, row-major).
void save_matrix(const std::string& path, const SymPsdMatrix& s);
SymPsdMatrix load_matrix(const std::string& path);
/// Full-square CSV export for small matrices.
void save_csv(const std::string& path, const SymPsdMatrix& s);

}  // namespace gapest::linalg
