#include "gapest/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <cblas.h>
#include <lapacke.h>

extern "C" void openblas_set_num_threads(int);

namespace gapest::linalg {

namespace {

// Results must be bitwise reproducible; pin the BLAS thread pool once.
struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init;

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

double Matrix::frobenius_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  if (a.rows() == 0 || b.cols() == 0 || a.cols() == 0) return c;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)a.rows(), (int)b.cols(),
              (int)a.cols(), 1.0, a.data(), (int)a.cols(), b.data(), (int)b.cols(), 0.0,
              c.data(), (int)c.cols());
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

SymPsdMatrix SymPsdMatrix::from_dense(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeMismatch("from_dense: matrix not square");
  SymPsdMatrix s(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j <= i; ++j) s.at(i, j) = m(i, j);
  return s;
}

SymPsdMatrix SymPsdMatrix::identity(std::size_t n) {
  SymPsdMatrix s(n);
  for (std::size_t i = 0; i < n; ++i) s.at(i, i) = 1.0;
  return s;
}

SymPsdMatrix SymPsdMatrix::diagonal(const std::vector<double>& diag) {
  SymPsdMatrix s(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) s.at(i, i) = diag[i];
  return s;
}

double SymPsdMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < order_; ++i) t += entries_[i * (i + 1) / 2 + i];
  return t;
}

double SymPsdMatrix::frobenius_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < order_; ++i) {
    const double* row = entries_.data() + i * (i + 1) / 2;
    for (std::size_t j = 0; j < i; ++j) s += 2.0 * row[j] * row[j];
    s += row[i] * row[i];
  }
  return std::sqrt(s);
}

bool SymPsdMatrix::all_finite() const {
  for (double v : entries_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix SymPsdMatrix::to_dense() const {
  Matrix m(order_, order_);
  for (std::size_t i = 0; i < order_; ++i)
    for (std::size_t j = 0; j <= i; ++j) m(i, j) = m(j, i) = (*this)(i, j);
  return m;
}

double SymPsdMatrix::psd_tolerance() const {
  return order_ == 0 ? 0.0 : 1e-9 * trace() / (double)order_;
}

double frobenius_inner(const SymPsdMatrix& a, const SymPsdMatrix& b) {
  if (a.order() != b.order()) throw ShapeMismatch("frobenius_inner: order mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.order(); ++i) {
    for (std::size_t j = 0; j < i; ++j) s += 2.0 * a(i, j) * b(i, j);
    s += a(i, i) * b(i, i);
  }
  return s;
}

void require_psd(const SymPsdMatrix& s, const char* who) {
  if (!s.all_finite()) throw NonFinite(std::string(who) + ": non-finite entry");
  const std::size_t d = s.order();
  if (d == 0) return;
  // S has min eigenvalue >= -tol iff S + (tol + slack) I is positive
  // definite, which a Cholesky attempt decides exactly.
  const double tol = s.psd_tolerance();
  const double slack = 1e-14 * (1.0 + std::abs(s.trace()) / (double)d);
  try {
    cholesky(s, tol + slack);
  } catch (const NotPositiveDefinite&) {
    throw NotPsd(std::string(who) + ": matrix violates the PSD tolerance");
  }
}

CholeskyFactor cholesky(const SymPsdMatrix& s, double shift) {
  if (!s.all_finite()) throw NonFinite("cholesky: non-finite entry");
  const std::size_t d = s.order();
  Matrix l = s.to_dense();
  for (std::size_t i = 0; i < d; ++i) l(i, i) += shift;
  lapack_int info = LAPACKE_dpotrf(LAPACK_ROW_MAJOR, 'L', (lapack_int)d, l.data(),
                                   (lapack_int)std::max<std::size_t>(d, 1));
  if (info > 0)
    throw NotPositiveDefinite("cholesky: nonpositive pivot at column " +
                              std::to_string(info - 1));
  if (info < 0) throw std::invalid_argument("cholesky: bad argument to dpotrf");
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) l(i, j) = 0.0;
  return CholeskyFactor(d, std::move(l), shift);
}

void CholeskyFactor::solve_lower(double* b) const {
  cblas_dtrsv(CblasRowMajor, CblasLower, CblasNoTrans, CblasNonUnit, (int)order_,
              lower_.data(), (int)order_, b, 1);
}

void CholeskyFactor::solve_upper(double* b) const {
  cblas_dtrsv(CblasRowMajor, CblasLower, CblasTrans, CblasNonUnit, (int)order_,
              lower_.data(), (int)order_, b, 1);
}

void CholeskyFactor::solve(double* b) const {
  solve_lower(b);
  solve_upper(b);
}

double CholeskyFactor::log_det() const {
  double s = 0.0;
  for (std::size_t i = 0; i < order_; ++i) s += std::log(lower_(i, i));
  return 2.0 * s;
}

namespace {

/// L^-1 computed by LAPACK (lower triangular, in place copy).
Matrix inverse_lower(const Matrix& l, std::size_t d) {
  Matrix inv = l;
  lapack_int info = LAPACKE_dtrtri(LAPACK_ROW_MAJOR, 'L', 'N', (lapack_int)d, inv.data(),
                                   (lapack_int)std::max<std::size_t>(d, 1));
  if (info != 0) throw NotPositiveDefinite("trtri: singular triangular factor");
  return inv;
}

}  // namespace

double CholeskyFactor::trace_inverse() const {
  // tr(A^-1) = tr(L^-T L^-1) = ||L^-1||_F^2.
  Matrix inv = inverse_lower(lower_, order_);
  double s = 0.0;
  for (std::size_t i = 0; i < order_; ++i)
    for (std::size_t j = 0; j <= i; ++j) s += inv(i, j) * inv(i, j);
  return s;
}

double CholeskyFactor::trace_inverse_squared() const {
  // A^-1 = L^-T L^-1, tr(A^-2) = ||A^-1||_F^2; form M = L^-1 and take
  // ||M^T M||_F^2 row by row.
  const std::size_t d = order_;
  Matrix inv = inverse_lower(lower_, d);
  // ainv = inv^T * inv, symmetric; accumulate squared Frobenius norm.
  Matrix ainv(d, d);
  if (d > 0)
    cblas_dsyrk(CblasRowMajor, CblasLower, CblasTrans, (int)d, (int)d, 1.0, inv.data(),
                (int)d, 0.0, ainv.data(), (int)d);
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) s += 2.0 * ainv(i, j) * ainv(i, j);
    s += ainv(i, i) * ainv(i, i);
  }
  return s;
}

EigenDecomposition eig_sym(const SymPsdMatrix& s) {
  if (!s.all_finite()) throw NonFinite("eig_sym: non-finite entry");
  const std::size_t d = s.order();
  Matrix a = s.to_dense();
  Matrix q = Matrix::identity(d);
  const double fnorm = s.frobenius_norm();
  const double stop = 1e-12 * fnorm;

  auto off_norm = [&]() {
    double t = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) t += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(t);
  };

  int sweep = 0;
  if (fnorm > 0.0) {
    for (; sweep < 30; ++sweep) {
      if (off_norm() <= stop) break;
      for (std::size_t p = 0; p + 1 < d; ++p) {
        for (std::size_t q_idx = p + 1; q_idx < d; ++q_idx) {
          const double apq = a(p, q_idx);
          if (std::abs(apq) <= 1e-300) continue;
          const double theta = (a(q_idx, q_idx) - a(p, p)) / (2.0 * apq);
          const double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double sn = t * c;
          const double tau = sn / (1.0 + c);
          const double app = a(p, p), aqq = a(q_idx, q_idx);
          a(p, p) = app - t * apq;
          a(q_idx, q_idx) = aqq + t * apq;
          a(p, q_idx) = a(q_idx, p) = 0.0;
          for (std::size_t r = 0; r < d; ++r) {
            if (r != p && r != q_idx) {
              const double arp = a(r, p), arq = a(r, q_idx);
              a(r, p) = a(p, r) = arp - sn * (arq + tau * arp);
              a(r, q_idx) = a(q_idx, r) = arq + sn * (arp - tau * arq);
            }
            const double qrp = q(r, p), qrq = q(r, q_idx);
            q(r, p) = qrp - sn * (qrq + tau * qrp);
            q(r, q_idx) = qrq + sn * (qrp - tau * qrq);
          }
        }
      }
    }
    if (off_norm() > stop)
      throw NoConvergence("eig_sym: Jacobi did not converge in 30 sweeps");
  }

  // Sort nonincreasing; ties broken by original column index (stable).
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenDecomposition out;
  out.eigenvalues.resize(d);
  out.eigenvectors = Matrix(d, d);
  for (std::size_t k = 0; k < d; ++k) {
    out.eigenvalues[k] = a(idx[k], idx[k]);
    for (std::size_t r = 0; r < d; ++r) out.eigenvectors(r, k) = q(r, idx[k]);
  }
  return out;
}

std::pair<Matrix, Matrix> soft_projection(const SymPsdMatrix& s, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("soft_projection: lambda must be > 0");
  require_psd(s, "soft_projection");
  const std::size_t d = s.order();
  CholeskyFactor f = cholesky(s, lambda);
  // P_perp = lambda (S + lambda I)^-1, P = I - P_perp.
  Matrix p_perp(d, d);
  std::vector<double> col(d);
  for (std::size_t j = 0; j < d; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = lambda;
    f.solve(col.data());
    for (std::size_t i = 0; i < d; ++i) p_perp(i, j) = col[i];
  }
  Matrix p(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      p(i, j) = (i == j ? 1.0 : 0.0) - p_perp(i, j);
  return {std::move(p), std::move(p_perp)};
}

double soft_rank(const SymPsdMatrix& s, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("soft_rank: lambda must be > 0");
  require_psd(s, "soft_rank");
  CholeskyFactor f = cholesky(s, lambda);
  return (double)s.order() - lambda * f.trace_inverse();
}

double soft_rank2(const SymPsdMatrix& s, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("soft_rank2: lambda must be > 0");
  require_psd(s, "soft_rank2");
  // tr(P^2) with P = I - lambda (S + lambda I)^-1.
  CholeskyFactor f = cholesky(s, lambda);
  const double d = (double)s.order();
  return d - 2.0 * lambda * f.trace_inverse() +
         lambda * lambda * f.trace_inverse_squared();
}

double log_det_complexity(const SymPsdMatrix& s, double lambda) {
  if (lambda <= 0.0)
    throw std::invalid_argument("log_det_complexity: lambda must be > 0");
  require_psd(s, "log_det_complexity");
  // (1/2) log det(S/lambda + I) = (1/2) [log det(S + lambda I) - d log lambda].
  CholeskyFactor f = cholesky(s, lambda);
  return 0.5 * (f.log_det() - (double)s.order() * std::log(lambda));
}

double trace_function(const SymPsdMatrix& s, TraceMap h, double lambda) {
  if (!s.all_finite()) throw NonFinite("trace_function: non-finite entry");
  if (h == TraceMap::identity) return s.trace();
  if (lambda <= 0.0) throw std::invalid_argument("trace_function: lambda must be > 0");
  EigenDecomposition e = eig_sym(s);
  double total = 0.0;
  switch (h) {
    case TraceMap::soft_rank:
      for (double v : e.eigenvalues) total += v / (v + lambda);
      return total;
    case TraceMap::log1p:
      for (double v : e.eigenvalues) total += std::log1p(v / lambda);
      return total;
    default:
      throw UnknownFunction("trace_function: unknown scalar map");
  }
}

double spectral_norm(const SymPsdMatrix& s) {
  const std::size_t d = s.order();
  if (d == 0) return 0.0;
  Matrix a = s.to_dense();
  // Deterministic start vector.
  std::vector<double> v(d), w(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 / std::sqrt((double)d);
  double prev = 0.0;
  for (int it = 0; it < 200; ++it) {
    cblas_dsymv(CblasRowMajor, CblasLower, (int)d, 1.0, a.data(), (int)d, v.data(), 1,
                0.0, w.data(), 1);
    double norm = cblas_dnrm2((int)d, w.data(), 1);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / norm;
    if (std::abs(norm - prev) <= 1e-8 * std::max(1.0, norm)) return norm;
    prev = norm;
  }
  return prev;
}

namespace {

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= (std::uint64_t)b[i] << (8 * i);
  return v;
}

}  // namespace

void save_matrix(const std::string& path, const SymPsdMatrix& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_matrix: cannot open " + path);
  write_u64_le(os, (std::uint64_t)s.order());
  // Little-endian host assumed (x86-64); doubles are written raw.
  const auto& p = s.packed();
  os.write(reinterpret_cast<const char*>(p.data()),
           (std::streamsize)(p.size() * sizeof(double)));
  if (!os) throw std::runtime_error("save_matrix: write failed for " + path);
}

SymPsdMatrix load_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_matrix: cannot open " + path);
  std::uint64_t d = read_u64_le(is);
  if (!is) throw std::runtime_error("load_matrix: truncated header in " + path);
  SymPsdMatrix s((std::size_t)d);
  auto& p = s.packed();
  is.read(reinterpret_cast<char*>(p.data()),
          (std::streamsize)(p.size() * sizeof(double)));
  if (!is) throw std::runtime_error("load_matrix: truncated payload in " + path);
  return s;
}

void save_csv(const std::string& path, const SymPsdMatrix& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_csv: cannot open " + path);
  os.precision(17);
  for (std::size_t i = 0; i < s.order(); ++i) {
    for (std::size_t j = 0; j < s.order(); ++j) {
      if (j) os << ',';
      os << s(i, j);
    }
    os << '\n';
  }
}

}  // namespace gapest::linalg
