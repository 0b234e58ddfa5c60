#include "gapest/infomat.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace gapest::infomat {

namespace {

using gapest::linalg::NonFinite;
using gapest::linalg::ShapeMismatch;

/// dense += alpha * rowsᵀ rows, lower triangle only. `dense` is a d×d
/// row-major buffer whose upper triangle is ignored.
void syrk_accumulate(std::vector<double>& dense, const double* rows,
                     std::size_t nrows, std::size_t d, double alpha) {
  if (nrows == 0) return;
  cblas_dsyrk(CblasRowMajor, CblasLower, CblasTrans, static_cast<int>(d),
              static_cast<int>(nrows), alpha, rows, static_cast<int>(d), 1.0,
              dense.data(), static_cast<int>(d));
}

SymPsdMatrix pack_lower(const std::vector<double>& dense, std::size_t d) {
  SymPsdMatrix s(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) s.at(i, j) = dense[i * d + j];
  if (!s.all_finite()) throw NonFinite("assembled matrix has non-finite entries");
  return s;
}

/// Symmetric square root of a small PSD matrix; negative round-off
/// eigenvalues are clipped to zero.
Matrix sym_sqrt(const Matrix& m) {
  auto eig = linalg::eig_sym(SymPsdMatrix::from_dense(m));
  const std::size_t k = m.rows();
  Matrix out(k, k);
  for (std::size_t a = 0; a < k; ++a) {
    const double root = std::sqrt(std::max(0.0, eig.eigenvalues[a]));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        out(i, j) += root * eig.eigenvectors(i, a) * eig.eigenvectors(j, a);
  }
  return out;
}

net::LabeledBatch slice_batch(const net::LabeledBatch& batch, std::size_t lo,
                              std::size_t hi) {
  const std::size_t p = batch.features.cols();
  const std::size_t k = batch.labels.cols();
  net::LabeledBatch out{Matrix(hi - lo, p), Matrix(hi - lo, k)};
  std::memcpy(out.features.data(), batch.features.row(lo),
              (hi - lo) * p * sizeof(double));
  std::memcpy(out.labels.data(), batch.labels.row(lo),
              (hi - lo) * k * sizeof(double));
  return out;
}

/// Fills `rows` (k×d) with W_half * J for one sample.
void weighted_rows(const Matrix& w_half, const Matrix& jac, double* rows) {
  const std::size_t k = w_half.rows();
  const std::size_t d = jac.cols();
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(k),
              static_cast<int>(d), static_cast<int>(k), 1.0, w_half.data(),
              static_cast<int>(k), jac.data(), static_cast<int>(d), 0.0, rows,
              static_cast<int>(d));
}

struct KfacAccumulator {
  std::vector<Matrix> a;  // (in+1)×(in+1) sums
  std::vector<Matrix> g;  // out×out sums

  explicit KfacAccumulator(const net::Architecture& arch) {
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
      a.emplace_back(arch.layer_sizes[l] + 1, arch.layer_sizes[l] + 1);
      g.emplace_back(arch.layer_sizes[l + 1], arch.layer_sizes[l + 1]);
    }
  }

  /// One sample's contribution, recovered from its gradient. The layer
  /// gradient block reshapes to M = ā δᵀ; the homogeneous coordinate pins
  /// ā's bias entry to 1, so δ is exactly M's bias row and ā = Mδ/‖δ‖².
  void add(const double* grad, const net::Architecture& arch) {
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
      const std::size_t in = arch.layer_sizes[l];
      const std::size_t out = arch.layer_sizes[l + 1];
      const double* block = grad + arch.layer_offset(l);
      const double* delta = block + in * out;  // bias row of M
      double dnorm2 = 0.0;
      for (std::size_t o = 0; o < out; ++o) dnorm2 += delta[o] * delta[o];
      for (std::size_t o1 = 0; o1 < out; ++o1)
        for (std::size_t o2 = 0; o2 < out; ++o2)
          g[l](o1, o2) += delta[o1] * delta[o2];
      if (dnorm2 <= 0.0) continue;  // dead block: contributes 0 to A⊗G
      std::vector<double> abar(in + 1);
      for (std::size_t i = 0; i <= in; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < out; ++o) s += block[i * out + o] * delta[o];
        abar[i] = s / dnorm2;
      }
      for (std::size_t i = 0; i <= in; ++i)
        for (std::size_t j = 0; j <= in; ++j) a[l](i, j) += abar[i] * abar[j];
    }
  }

  KfacBlocks finish(std::size_t n) const {
    KfacBlocks blocks;
    for (std::size_t l = 0; l < a.size(); ++l) {
      Matrix am = a[l], gm = g[l];
      for (std::size_t i = 0; i < am.rows() * am.cols(); ++i)
        am.data()[i] /= static_cast<double>(n);
      for (std::size_t i = 0; i < gm.rows() * gm.cols(); ++i)
        gm.data()[i] /= static_cast<double>(n);
      blocks.layers.push_back({SymPsdMatrix::from_dense(am),
                               SymPsdMatrix::from_dense(gm)});
    }
    return blocks;
  }
};

std::vector<double> clipped_eigenvalues(const SymPsdMatrix& s) {
  auto eig = linalg::eig_sym(s);
  for (double& v : eig.eigenvalues) v = std::max(0.0, v);
  return eig.eigenvalues;
}

double cosine(double inner, double na, double nb, bool& missing) {
  if (na <= 0.0 || nb <= 0.0) {
    missing = true;
    return 0.0;
  }
  missing = false;
  return inner / (na * nb);
}

double frobenius_inner_dense(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows() * a.cols(); ++i)
    s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace

std::size_t KfacBlocks::order() const {
  std::size_t d = 0;
  for (const auto& lp : layers) d += lp.A.order() * lp.G.order();
  return d;
}

std::vector<double> KfacBlocks::eigenvalues() const {
  std::vector<double> out;
  for (const auto& lp : layers) {
    auto ea = clipped_eigenvalues(lp.A);
    auto eg = clipped_eigenvalues(lp.G);
    for (double a : ea)
      for (double g : eg) out.push_back(a * g);
  }
  return out;
}

double KfacBlocks::soft_rank(double lambda) const {
  double s = 0.0;
  for (double v : eigenvalues()) s += v / (v + lambda);
  return s;
}

double KfacBlocks::soft_rank2(double lambda) const {
  double s = 0.0;
  for (double v : eigenvalues()) {
    const double p = v / (v + lambda);
    s += p * p;
  }
  return s;
}

double KfacBlocks::log_det_complexity(double lambda) const {
  double s = 0.0;
  for (double v : eigenvalues()) s += std::log1p(v / lambda);
  return 0.5 * s;
}

SymPsdMatrix KfacBlocks::to_dense() const {
  SymPsdMatrix s(order());
  std::size_t off = 0;
  for (const auto& lp : layers) {
    const std::size_t in1 = lp.A.order();
    const std::size_t out = lp.G.order();
    for (std::size_t i1 = 0; i1 < in1; ++i1)
      for (std::size_t o1 = 0; o1 < out; ++o1) {
        const std::size_t r = off + i1 * out + o1;
        for (std::size_t i2 = 0; i2 < in1; ++i2)
          for (std::size_t o2 = 0; o2 < out; ++o2) {
            const std::size_t c = off + i2 * out + o2;
            if (r >= c) s.at(r, c) = lp.A(i1, i2) * lp.G(o1, o2);
          }
      }
    off += in1 * out;
  }
  return s;
}

InfoBundle assemble_exact(const net::PerSampleDerivatives& derivs,
                          double lambda) {
  const std::size_t n = derivs.grads.rows();
  const std::size_t d = derivs.grads.cols();
  if (n == 0) throw ShapeMismatch("assemble_exact: empty sample set");
  const std::size_t k = derivs.errors.cols();

  std::vector<double> c_dense(d * d, 0.0), f_dense(d * d, 0.0);
  syrk_accumulate(c_dense, derivs.grads.data(), n, d, 1.0 / n);

  std::vector<double> rows(k * d);
  for (std::size_t i = 0; i < n; ++i) {
    weighted_rows(sym_sqrt(derivs.sigmas[i]), derivs.jacobians[i], rows.data());
    syrk_accumulate(f_dense, rows.data(), k, d, 1.0 / n);
  }

  InfoBundle bundle;
  bundle.C = pack_lower(c_dense, d);
  bundle.F = pack_lower(f_dense, d);
  bundle.H_gn = bundle.F;
  bundle.lambda = lambda;
  bundle.n_samples = n;
  bundle.kind = BundleKind::exact;
  bundle.mean_grad.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      bundle.mean_grad[j] += derivs.grads(i, j) / static_cast<double>(n);
  return bundle;
}

SymPsdMatrix fisher_monte_carlo(const net::ModelState& model,
                                const net::LabeledBatch& batch,
                                std::size_t m_samples, std::uint64_t seed) {
  const auto derivs = net::per_sample_derivatives(model, batch);
  const auto fwd = net::forward(model, batch);
  const std::size_t n = batch.features.rows();
  const std::size_t k = model.arch.output_dim();
  const std::size_t d = model.arch.parameter_count();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> dense(d * d, 0.0);
  const double alpha = 1.0 / (static_cast<double>(n) * m_samples);
  const std::size_t chunk = std::max<std::size_t>(1, 4096 / std::max<std::size_t>(k, 1));
  Matrix errors(chunk, k);
  std::vector<double> rows(chunk * d);

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t done = 0;
    while (done < m_samples) {
      const std::size_t take = std::min(chunk, m_samples - done);
      for (std::size_t s = 0; s < take; ++s) {
        if (model.arch.head == net::Head::softmax_ce) {
          // inverse-CDF draw from the predictive categorical distribution
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
          for (std::size_t a = 0; a < k; ++a)
            errors(s, a) = fwd.predictions(i, a) - (a == pick ? 1.0 : 0.0);
        } else {
          // Gaussian head with unit covariance: error = N − y = −noise
          for (std::size_t a = 0; a < k; ++a) errors(s, a) = -gauss(rng);
        }
      }
      // rows = errors · J_i gives the sampled gradients for this input
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                  static_cast<int>(take), static_cast<int>(d),
                  static_cast<int>(k), 1.0, errors.data(),
                  static_cast<int>(k), derivs.jacobians[i].data(),
                  static_cast<int>(d), 0.0, rows.data(), static_cast<int>(d));
      syrk_accumulate(dense, rows.data(), take, d, alpha);
      done += take;
    }
  }
  return pack_lower(dense, d);
}

RegularizedPair regularize(const InfoBundle& bundle,
                           const net::ModelState& model) {
  const std::size_t d = bundle.order();
  if (model.theta.size() != d)
    throw ShapeMismatch("regularize: model order mismatch");
  const double lambda = bundle.lambda;

  RegularizedPair out;
  out.C_reg = bundle.C;
  out.H_reg = bundle.H_gn;
  for (std::size_t i = 0; i < d; ++i) {
    out.H_reg.at(i, i) += lambda;
    for (std::size_t j = 0; j <= i; ++j)
      out.C_reg.at(i, j) += lambda * (bundle.mean_grad[i] * model.theta[j] +
                                      model.theta[i] * bundle.mean_grad[j]) +
                            lambda * lambda * model.theta[i] * model.theta[j];
  }

  double g2 = 0.0, t2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double g = bundle.mean_grad[i] + lambda * model.theta[i];
    g2 += g * g;
    t2 += model.theta[i] * model.theta[i];
  }
  out.grad_norm = std::sqrt(g2);
  const double grad_tol = 1e-3 * (1.0 + lambda * std::sqrt(t2));
  out.not_at_minimum = out.grad_norm > grad_tol;
  return out;
}

KfacBlocks kfac_approximate(const net::PerSampleDerivatives& derivs,
                            const net::Architecture& arch) {
  if (arch.layer_sizes.size() < 2)
    throw UnsupportedArchitecture("need at least one dense layer");
  const std::size_t n = derivs.grads.rows();
  if (derivs.grads.cols() != arch.parameter_count())
    throw ShapeMismatch("kfac_approximate: gradient width mismatch");
  KfacAccumulator acc(arch);
  for (std::size_t i = 0; i < n; ++i) acc.add(derivs.grads.row(i), arch);
  return acc.finish(n);
}

SymPsdMatrix diagonal_approximate(const net::PerSampleDerivatives& derivs) {
  const std::size_t n = derivs.grads.rows();
  const std::size_t d = derivs.grads.cols();
  const std::size_t k = derivs.errors.cols();
  std::vector<double> diag(d, 0.0);
  std::vector<double> rows(k * d);
  for (std::size_t i = 0; i < n; ++i) {
    weighted_rows(sym_sqrt(derivs.sigmas[i]), derivs.jacobians[i], rows.data());
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < d; ++j) {
        const double v = rows[a * d + j];
        diag[j] += v * v / static_cast<double>(n);
      }
  }
  return SymPsdMatrix::diagonal(diag);
}

SymPsdMatrix pinch(const SymPsdMatrix& s,
                   const std::vector<std::size_t>& block_sizes) {
  std::size_t total = 0;
  for (std::size_t b : block_sizes) {
    if (b == 0) throw BadPartition("pinch: zero block size");
    total += b;
  }
  if (total != s.order()) throw BadPartition("pinch: block sizes must sum to the order");
  SymPsdMatrix out(s.order());
  std::size_t off = 0;
  for (std::size_t b : block_sizes) {
    for (std::size_t i = off; i < off + b; ++i)
      for (std::size_t j = off; j <= i; ++j) out.at(i, j) = s(i, j);
    off += b;
  }
  return out;
}

MomentSummaries moment_summaries(const net::PerSampleDerivatives& derivs) {
  const std::size_t n = derivs.errors.rows();
  const std::size_t k = derivs.errors.cols();
  MomentSummaries out;
  out.mean_B = Matrix(k, k);
  out.mean_Sigma = Matrix(k, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        out.mean_B(a, b) += derivs.errors(i, a) * derivs.errors(i, b) / n;
        out.mean_Sigma(a, b) += derivs.sigmas[i](a, b) / n;
      }
  double trb = 0.0, trs = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    trb += out.mean_B(a, a);
    trs += out.mean_Sigma(a, a);
  }
  out.alpha_missing = trs < 1e-12;
  out.trace_ratio_alpha = out.alpha_missing ? 0.0 : trb / trs;
  return out;
}

namespace {

UncorrelatednessReport build_report(const SymPsdMatrix& c,
                                    const SymPsdMatrix& f,
                                    const SymPsdMatrix& jbj,
                                    const SymPsdMatrix& jsj,
                                    const MomentSummaries& moments) {
  UncorrelatednessReport rep;
  const double nc = c.frobenius_norm(), nf = f.frobenius_norm();
  const double nbj = jbj.frobenius_norm(), nsj = jsj.frobenius_norm();
  const double nb = moments.mean_B.frobenius_norm();
  const double ns = moments.mean_Sigma.frobenius_norm();
  rep.cos_c_jbj = cosine(linalg::frobenius_inner(c, jbj), nc, nbj, rep.c_jbj_missing);
  rep.cos_f_jsj = cosine(linalg::frobenius_inner(f, jsj), nf, nsj, rep.f_jsj_missing);
  rep.cos_b_sigma = cosine(frobenius_inner_dense(moments.mean_B, moments.mean_Sigma),
                           nb, ns, rep.b_sigma_missing);
  rep.log_norm_c = std::log(nc);
  rep.log_norm_jbj = std::log(nbj);
  rep.log_norm_f = std::log(nf);
  rep.log_norm_jsj = std::log(nsj);
  rep.log_norm_b = std::log(nb);
  rep.log_norm_sigma = std::log(ns);
  return rep;
}

}  // namespace

UncorrelatednessReport uncorrelatedness_report(
    const net::PerSampleDerivatives& derivs) {
  const std::size_t n = derivs.grads.rows();
  const std::size_t d = derivs.grads.cols();
  const std::size_t k = derivs.errors.cols();
  if (n < 2) throw ShapeMismatch("uncorrelatedness_report: need n >= 2");

  const MomentSummaries moments = moment_summaries(derivs);
  const InfoBundle bundle = assemble_exact(derivs, 0.0);

  const Matrix sqrt_b = sym_sqrt(moments.mean_B);
  const Matrix sqrt_s = sym_sqrt(moments.mean_Sigma);
  std::vector<double> jbj_dense(d * d, 0.0), jsj_dense(d * d, 0.0);
  std::vector<double> rows(k * d);
  for (std::size_t i = 0; i < n; ++i) {
    weighted_rows(sqrt_b, derivs.jacobians[i], rows.data());
    syrk_accumulate(jbj_dense, rows.data(), k, d, 1.0 / n);
    weighted_rows(sqrt_s, derivs.jacobians[i], rows.data());
    syrk_accumulate(jsj_dense, rows.data(), k, d, 1.0 / n);
  }
  return build_report(bundle.C, bundle.F, pack_lower(jbj_dense, d),
                      pack_lower(jsj_dense, d), moments);
}

ExactMoments assemble_streamed(const net::ModelState& model,
                               const net::LabeledBatch& batch, double lambda,
                               std::size_t chunk_size) {
  batch.validate();
  const std::size_t n = batch.features.rows();
  const std::size_t d = model.arch.parameter_count();
  const std::size_t k = model.arch.output_dim();
  if (chunk_size == 0) chunk_size = 256;

  ExactMoments out;
  out.moments.mean_B = Matrix(k, k);
  out.moments.mean_Sigma = Matrix(k, k);
  std::vector<double> c_dense(d * d, 0.0), f_dense(d * d, 0.0);
  std::vector<double> mean_grad(d, 0.0), diag(d, 0.0);
  KfacAccumulator kfac_acc(model.arch);
  std::vector<double> rows(chunk_size * k * d);

  // Pass 1: everything that only needs per-sample moments.
  for (std::size_t lo = 0; lo < n; lo += chunk_size) {
    const std::size_t hi = std::min(n, lo + chunk_size);
    const auto sub = slice_batch(batch, lo, hi);
    const auto derivs = net::per_sample_derivatives(model, sub);
    const std::size_t m = hi - lo;
    syrk_accumulate(c_dense, derivs.grads.data(), m, d, 1.0 / n);
    for (std::size_t i = 0; i < m; ++i) {
      kfac_acc.add(derivs.grads.row(i), model.arch);
      weighted_rows(sym_sqrt(derivs.sigmas[i]), derivs.jacobians[i],
                    rows.data() + i * k * d);
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t j = 0; j < d; ++j) {
          const double v = rows[i * k * d + a * d + j];
          diag[j] += v * v / static_cast<double>(n);
        }
      for (std::size_t j = 0; j < d; ++j)
        mean_grad[j] += derivs.grads(i, j) / static_cast<double>(n);
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          out.moments.mean_B(a, b) +=
              derivs.errors(i, a) * derivs.errors(i, b) / n;
          out.moments.mean_Sigma(a, b) += derivs.sigmas[i](a, b) / n;
        }
    }
    syrk_accumulate(f_dense, rows.data(), m * k, d, 1.0 / n);
  }

  out.bundle.C = pack_lower(c_dense, d);
  out.bundle.F = pack_lower(f_dense, d);
  out.bundle.H_gn = out.bundle.F;
  out.bundle.lambda = lambda;
  out.bundle.n_samples = n;
  out.bundle.kind = BundleKind::exact;
  out.bundle.mean_grad = std::move(mean_grad);
  out.kfac = kfac_acc.finish(n);
  out.diag_f = SymPsdMatrix::diagonal(diag);
  {
    double trb = 0.0, trs = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      trb += out.moments.mean_B(a, a);
      trs += out.moments.mean_Sigma(a, a);
    }
    out.moments.alpha_missing = trs < 1e-12;
    out.moments.trace_ratio_alpha = out.moments.alpha_missing ? 0.0 : trb / trs;
  }

  // Pass 2: the mixed moments need the K×K means from pass 1.
  const Matrix sqrt_b = sym_sqrt(out.moments.mean_B);
  const Matrix sqrt_s = sym_sqrt(out.moments.mean_Sigma);
  std::vector<double> jbj_dense, jsj_dense;
  std::swap(jbj_dense, c_dense);  // reuse the buffers
  std::swap(jsj_dense, f_dense);
  std::fill(jbj_dense.begin(), jbj_dense.end(), 0.0);
  std::fill(jsj_dense.begin(), jsj_dense.end(), 0.0);
  for (std::size_t lo = 0; lo < n; lo += chunk_size) {
    const std::size_t hi = std::min(n, lo + chunk_size);
    const auto sub = slice_batch(batch, lo, hi);
    const auto derivs = net::per_sample_derivatives(model, sub);
    const std::size_t m = hi - lo;
    for (std::size_t i = 0; i < m; ++i)
      weighted_rows(sqrt_b, derivs.jacobians[i], rows.data() + i * k * d);
    syrk_accumulate(jbj_dense, rows.data(), m * k, d, 1.0 / n);
    for (std::size_t i = 0; i < m; ++i)
      weighted_rows(sqrt_s, derivs.jacobians[i], rows.data() + i * k * d);
    syrk_accumulate(jsj_dense, rows.data(), m * k, d, 1.0 / n);
  }
  out.jbj = pack_lower(jbj_dense, d);
  out.jsj = pack_lower(jsj_dense, d);
  out.report = build_report(out.bundle.C, out.bundle.F, out.jbj, out.jsj,
                            out.moments);
  return out;
}

void save_bundle(const std::string& dir, const InfoBundle& bundle,
                 std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  linalg::save_matrix(dir + "/C.mat", bundle.C);
  linalg::save_matrix(dir + "/F.mat", bundle.F);
  linalg::save_matrix(dir + "/H.mat", bundle.H_gn);
  {
    std::ofstream f(dir + "/mean_grad.bin", std::ios::binary);
    const std::uint64_t count = bundle.mean_grad.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    f.write(reinterpret_cast<const char*>(bundle.mean_grad.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  }
  std::ofstream m(dir + "/manifest.txt");
  m << "order=" << bundle.order() << "\n";
  m << "lambda=" << std::hexfloat << bundle.lambda << std::defaultfloat << "\n";
  m << "n_samples=" << bundle.n_samples << "\n";
  m << "kind="
    << (bundle.kind == BundleKind::exact
            ? "exact"
            : bundle.kind == BundleKind::kfac ? "kfac" : "diagonal")
    << "\n";
  m << "seed=" << seed << "\n";
}

InfoBundle load_bundle(const std::string& dir) {
  InfoBundle bundle;
  bundle.C = linalg::load_matrix(dir + "/C.mat");
  bundle.F = linalg::load_matrix(dir + "/F.mat");
  bundle.H_gn = linalg::load_matrix(dir + "/H.mat");
  {
    std::ifstream f(dir + "/mean_grad.bin", std::ios::binary);
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    bundle.mean_grad.resize(count);
    f.read(reinterpret_cast<char*>(bundle.mean_grad.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw std::runtime_error("load_bundle: truncated mean_grad.bin");
  }
  std::ifstream m(dir + "/manifest.txt");
  if (!m) throw std::runtime_error("load_bundle: missing manifest");
  std::string line;
  while (std::getline(m, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "lambda")
      bundle.lambda = std::strtod(value.c_str(), nullptr);
    else if (key == "n_samples")
      bundle.n_samples = std::stoull(value);
    else if (key == "kind")
      bundle.kind = value == "kfac" ? BundleKind::kfac
                    : value == "diagonal" ? BundleKind::diagonal
                                          : BundleKind::exact;
  }
  return bundle;
}

}  // namespace gapest::infomat
