#include "gapest/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <cblas.h>

namespace gapest::net {

std::size_t Architecture::parameter_count() const {
  std::size_t d = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    d += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return d;
}

std::size_t Architecture::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < l; ++k)
    off += (layer_sizes[k] + 1) * layer_sizes[k + 1];
  return off;
}

void Architecture::validate() const {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("Architecture: need at least input and output layers");
  for (std::size_t s : layer_sizes)
    if (s == 0) throw std::invalid_argument("Architecture: zero layer size");
}

void LabeledBatch::validate() const {
  if (features.rows() == 0) throw ShapeMismatch("LabeledBatch: empty batch");
  if (features.rows() != labels.rows())
    throw ShapeMismatch("LabeledBatch: feature/label row counts differ");
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < labels.cols(); ++k) {
      double v = labels(i, k);
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("LabeledBatch: labels must be one-hot");
      sum += v;
    }
    if (sum != 1.0) throw std::invalid_argument("LabeledBatch: label row must sum to 1");
  }
}

ModelState init_model(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ModelState m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < arch.layer_sizes.size(); ++l) {
    const std::size_t in = arch.layer_sizes[l];
    const std::size_t out = arch.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (double)(in + out));
    std::uniform_real_distribution<double> unif(-bound, bound);
    double* block = m.theta.data() + arch.layer_offset(l);
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t o = 0; o < out; ++o) block[i * out + o] = unif(rng);
    // bias row (i == in) stays zero
  }
  return m;
}

namespace {

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* row = m.row(i);
    double mx = row[0];
    for (std::size_t k = 1; k < m.cols(); ++k) mx = std::max(mx, row[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < m.cols(); ++k) {
      row[k] = std::exp(row[k] - mx);
      sum += row[k];
    }
    for (std::size_t k = 0; k < m.cols(); ++k) row[k] /= sum;
  }
}

/// Z = [A | 1] * Wbar for a layer block inside theta.
Matrix layer_forward(const Matrix& a, const double* wbar, std::size_t in,
                     std::size_t out) {
  const std::size_t n = a.rows();
  Matrix z(n, out);
  // bias row first, then GEMM accumulates the weight part
  const double* bias = wbar + in * out;
  for (std::size_t i = 0; i < n; ++i) std::memcpy(z.row(i), bias, out * sizeof(double));
  if (in > 0 && n > 0)
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)n, (int)out, (int)in,
                1.0, a.data(), (int)in, wbar, (int)out, 1.0, z.data(), (int)out);
  return z;
}

struct ForwardTrace {
  std::vector<Matrix> activations;  // activations[0] = input, post-ReLU after that
  std::vector<Matrix> preacts;      // one per layer
};

ForwardTrace forward_trace(const ModelState& model, const Matrix& x) {
  const Architecture& arch = model.arch;
  if (x.cols() != arch.input_dim())
    throw ShapeMismatch("forward: feature dimension does not match architecture");
  ForwardTrace t;
  t.activations.push_back(x);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const std::size_t in = arch.layer_sizes[l];
    const std::size_t out = arch.layer_sizes[l + 1];
    Matrix z = layer_forward(t.activations.back(), model.theta.data() + arch.layer_offset(l),
                             in, out);
    t.preacts.push_back(z);
    if (l + 1 < arch.num_layers()) {
      Matrix a = z;
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k)
          if (a(i, k) < 0.0) a(i, k) = 0.0;
      t.activations.push_back(std::move(a));
    }
  }
  return t;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.row(r), m.row(idx[r]), m.cols() * sizeof(double));
  return out;
}

}  // namespace

ForwardResult forward(const ModelState& model, const LabeledBatch& batch) {
  if (batch.labels.cols() != model.arch.output_dim())
    throw ShapeMismatch("forward: label dimension does not match architecture");
  ForwardTrace t = forward_trace(model, batch.features);
  ForwardResult r;
  r.natural = t.preacts.back();
  if (!r.natural.all_finite()) throw NonFinite("forward: non-finite network output");
  r.predictions = r.natural;
  if (model.arch.head == Head::softmax_ce) softmax_rows(r.predictions);
  return r;
}

double cost(std::span<const double> y, std::span<const double> natural, Head head) {
  if (y.size() != natural.size()) throw ShapeMismatch("cost: dimension mismatch");
  if (head == Head::squared_loss) {
    double s = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      double diff = y[k] - natural[k];
      s += diff * diff;
    }
    return 0.5 * s;
  }
  // -N^T y + logsumexp(N), guarded against overflow.
  double mx = natural[0];
  for (double v : natural) mx = std::max(mx, v);
  double sum = 0.0, dot = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    sum += std::exp(natural[k] - mx);
    dot += natural[k] * y[k];
  }
  return -dot + mx + std::log(sum);
}

PerSampleDerivatives per_sample_derivatives(const ModelState& model,
                                            const LabeledBatch& batch) {
  const Architecture& arch = model.arch;
  const std::size_t n = batch.size();
  const std::size_t k_out = arch.output_dim();
  const std::size_t d = arch.parameter_count();
  if (batch.labels.cols() != k_out)
    throw ShapeMismatch("per_sample_derivatives: label dimension mismatch");

  ForwardTrace t = forward_trace(model, batch.features);
  const Matrix& natural = t.preacts.back();
  if (!natural.all_finite())
    throw NonFinite("per_sample_derivatives: non-finite network output");
  Matrix yhat = natural;
  if (arch.head == Head::softmax_ce) softmax_rows(yhat);

  PerSampleDerivatives out;
  out.loss.resize(n);
  out.grads = Matrix(n, d);
  out.errors = Matrix(n, k_out);
  out.jacobians.reserve(n);
  out.sigmas.reserve(n);

  const std::size_t n_layers = arch.num_layers();
  for (std::size_t i = 0; i < n; ++i) {
    out.loss[i] = cost({batch.labels.row(i), k_out}, {natural.row(i), k_out}, arch.head);
    for (std::size_t k = 0; k < k_out; ++k)
      out.errors(i, k) = yhat(i, k) - batch.labels(i, k);

    Matrix sigma(k_out, k_out);
    if (arch.head == Head::softmax_ce) {
      for (std::size_t a = 0; a < k_out; ++a)
        for (std::size_t b = 0; b < k_out; ++b)
          sigma(a, b) = (a == b ? yhat(i, a) : 0.0) - yhat(i, a) * yhat(i, b);
    } else {
      for (std::size_t a = 0; a < k_out; ++a) sigma(a, a) = 1.0;
    }

    // Jacobian of the natural parameters: propagate D_l = dN/dz_l backwards.
    Matrix jac(k_out, d);
    Matrix dcur = Matrix::identity(k_out);  // dN/dz at the top layer
    for (std::size_t l = n_layers; l-- > 0;) {
      const std::size_t in = arch.layer_sizes[l];
      const std::size_t out_sz = arch.layer_sizes[l + 1];
      const std::size_t off = arch.layer_offset(l);
      const Matrix& act = t.activations[l];
      // block entry: J[k, off + i*out + o] = a_i * D[k, o] (a_{in} = 1, the bias).
      for (std::size_t k = 0; k < k_out; ++k) {
        double* jrow = jac.row(k) + off;
        for (std::size_t ii = 0; ii <= in; ++ii) {
          const double a_val = ii < in ? act(i, ii) : 1.0;
          if (a_val == 0.0) continue;
          const double* drow = dcur.row(k);
          double* dst = jrow + ii * out_sz;
          for (std::size_t o = 0; o < out_sz; ++o) dst[o] += a_val * drow[o];
        }
      }
      if (l == 0) break;
      // D_{l-1}[k, j] = sum_o D_l[k, o] W[j, o] * relu'(z_{l-1}[j]).
      const double* wbar = model.theta.data() + off;
      const Matrix& z_prev = t.preacts[l - 1];
      Matrix dprev(k_out, in);
      for (std::size_t k = 0; k < k_out; ++k)
        for (std::size_t j = 0; j < in; ++j) {
          if (z_prev(i, j) <= 0.0) continue;  // subgradient at 0 is 0
          double s = 0.0;
          const double* drow = dcur.row(k);
          const double* wrow = wbar + j * out_sz;
          for (std::size_t o = 0; o < out_sz; ++o) s += drow[o] * wrow[o];
          dprev(k, j) = s;
        }
      dcur = std::move(dprev);
    }

    // grads = J^T e, exactly as constructed.
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < k_out; ++k) s += jac(k, j) * out.errors(i, k);
      out.grads(i, j) = s;
    }

    out.jacobians.push_back(std::move(jac));
    out.sigmas.push_back(std::move(sigma));
  }
  return out;
}

double mean_cost(const ModelState& model, const LabeledBatch& batch,
                 std::span<const std::size_t> indices) {
  const std::size_t k_out = model.arch.output_dim();
  Matrix x = indices.empty() ? batch.features : gather_rows(batch.features, indices);
  Matrix y = indices.empty() ? batch.labels : gather_rows(batch.labels, indices);
  ForwardTrace t = forward_trace(model, x);
  const Matrix& natural = t.preacts.back();
  if (!natural.all_finite()) throw NonFinite("mean_cost: non-finite network output");
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    total += cost({y.row(i), k_out}, {natural.row(i), k_out}, model.arch.head);
  return total / (double)x.rows();
}

double regularized_loss(const ModelState& model, const LabeledBatch& batch,
                        double lambda) {
  double norm2 = 0.0;
  for (double v : model.theta) norm2 += v * v;
  return mean_cost(model, batch) + 0.5 * lambda * norm2;
}

std::vector<double> mean_gradient(const ModelState& model, const LabeledBatch& batch,
                                  std::span<const std::size_t> indices,
                                  double* out_cost) {
  const Architecture& arch = model.arch;
  const std::size_t k_out = arch.output_dim();
  Matrix x = indices.empty() ? batch.features : gather_rows(batch.features, indices);
  Matrix y = indices.empty() ? batch.labels : gather_rows(batch.labels, indices);
  const std::size_t n = x.rows();

  ForwardTrace t = forward_trace(model, x);
  Matrix yhat = t.preacts.back();
  if (!yhat.all_finite()) throw NonFinite("mean_gradient: non-finite network output");
  if (out_cost) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      total += cost({y.row(i), k_out}, {t.preacts.back().row(i), k_out}, arch.head);
    *out_cost = total / (double)n;
  }
  if (arch.head == Head::softmax_ce) softmax_rows(yhat);

  std::vector<double> grad(arch.parameter_count(), 0.0);
  Matrix delta(n, k_out);
  const double inv_n = 1.0 / (double)n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < k_out; ++k)
      delta(i, k) = (yhat(i, k) - y(i, k)) * inv_n;

  for (std::size_t l = arch.num_layers(); l-- > 0;) {
    const std::size_t in = arch.layer_sizes[l];
    const std::size_t out_sz = arch.layer_sizes[l + 1];
    const std::size_t off = arch.layer_offset(l);
    const Matrix& act = t.activations[l];
    double* gblock = grad.data() + off;
    // weight part: grad[i*out + o] += act^T delta
    if (n > 0 && in > 0)
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)in, (int)out_sz, (int)n,
                  1.0, act.data(), (int)in, delta.data(), (int)out_sz, 0.0, gblock,
                  (int)out_sz);
    // bias row
    double* bias_grad = gblock + in * out_sz;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_sz; ++o) bias_grad[o] += delta(i, o);
    if (l == 0) break;
    // delta_prev = (delta * W^T) masked by relu'(z_{l-1})
    Matrix dprev(n, in);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)n, (int)in, (int)out_sz,
                1.0, delta.data(), (int)out_sz, model.theta.data() + off, (int)out_sz,
                0.0, dprev.data(), (int)in);
    const Matrix& z_prev = t.preacts[l - 1];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < in; ++j)
        if (z_prev(i, j) <= 0.0) dprev(i, j) = 0.0;
    delta = std::move(dprev);
  }
  return grad;
}

Matrix finite_difference_hessian(const ModelState& model, const LabeledBatch& batch) {
  const std::size_t d = model.arch.parameter_count();
  if (d > 200)
    throw TooLarge("finite_difference_hessian: parameter count exceeds 200");
  Matrix h(d, d);
  ModelState probe = model;
  for (std::size_t j = 0; j < d; ++j) {
    const double step = 1e-5 * (1.0 + std::abs(model.theta[j]));
    probe.theta[j] = model.theta[j] + step;
    std::vector<double> gp = mean_gradient(probe, batch);
    probe.theta[j] = model.theta[j] - step;
    std::vector<double> gm = mean_gradient(probe, batch);
    probe.theta[j] = model.theta[j];
    for (std::size_t i = 0; i < d; ++i) h(i, j) = (gp[i] - gm[i]) / (2.0 * step);
  }
  // symmetrize
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      double v = 0.5 * (h(i, j) + h(j, i));
      h(i, j) = h(j, i) = v;
    }
  return h;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= (std::uint64_t)b[i] << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write("EFNN", 4);
  const unsigned char version = 1;
  os.write(reinterpret_cast<const char*>(&version), 1);
  write_u64(os, model.arch.layer_sizes.size());
  for (std::size_t s : model.arch.layer_sizes) write_u64(os, s);
  const unsigned char head = model.arch.head == Head::softmax_ce ? 0 : 1;
  os.write(reinterpret_cast<const char*>(&head), 1);
  os.write(reinterpret_cast<const char*>(model.theta.data()),
           (std::streamsize)(model.theta.size() * sizeof(double)));
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EFNN", 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  unsigned char version = 0;
  is.read(reinterpret_cast<char*>(&version), 1);
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  std::uint64_t n_sizes = read_u64(is);
  Architecture arch;
  arch.layer_sizes.resize(n_sizes);
  for (auto& s : arch.layer_sizes) s = (std::size_t)read_u64(is);
  unsigned char head = 0;
  is.read(reinterpret_cast<char*>(&head), 1);
  arch.head = head == 0 ? Head::softmax_ce : Head::squared_loss;
  arch.validate();
  ModelState m{arch, std::vector<double>(arch.parameter_count())};
  is.read(reinterpret_cast<char*>(m.theta.data()),
          (std::streamsize)(m.theta.size() * sizeof(double)));
  if (!is) throw std::runtime_error("load_checkpoint: truncated theta in " + path);
  return m;
}

}  // namespace gapest::net
