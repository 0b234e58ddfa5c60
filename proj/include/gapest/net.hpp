#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gapest/linalg.hpp"

// Minimal exponential-family neural network: forward pass, per-sample loss
// gradients, per-sample output Jacobians, and the per-sample error /
// predictive-variance quantities the information matrices are built from.

namespace gapest::net {

using linalg::Matrix;
using linalg::NonFinite;
using linalg::ShapeMismatch;

struct TooLarge : std::runtime_error {
  explicit TooLarge(const std::string& what) : std::runtime_error(what) {}
};

enum class Head { softmax_ce, squared_loss };

struct Architecture {
  std::vector<std::size_t> layer_sizes;  // [p, h1, ..., K]
  Head head = Head::softmax_ce;

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }

  /// sum over consecutive pairs of (in + 1) * out.
  std::size_t parameter_count() const;

  /// Flat offset of layer l's parameter block. Within a layer, parameters
  /// are input-major: theta[offset + i * out + o] is the weight from input
  /// unit i to output unit o, with i == in being the bias row.
  std::size_t layer_offset(std::size_t l) const;

  void validate() const;
};

struct ModelState {
  Architecture arch;
  std::vector<double> theta;
};

struct LabeledBatch {
  Matrix features;  // n x p
  Matrix labels;    // n x K, one-hot rows

  std::size_t size() const { return features.rows(); }
  void validate() const;
};

/// Per-sample derivative bundle. grads row i equals jacobians[i]^T errors
/// row i by construction.
struct PerSampleDerivatives {
  std::vector<double> loss;       // n
  Matrix grads;                   // n x d
  std::vector<Matrix> jacobians;  // n matrices, K x d each
  Matrix errors;                  // n x K, e = yhat - y
  std::vector<Matrix> sigmas;     // n matrices, K x K each
};

struct ForwardResult {
  Matrix natural;      // n x K
  Matrix predictions;  // n x K (probability rows for softmax head)
};

/// Fan-based uniform init, biases zero, seeded.
ModelState init_model(const Architecture& arch, std::uint64_t seed);

ForwardResult forward(const ModelState& model, const LabeledBatch& batch);

/// Exponential-family cost up to additive constants: softmax head is
/// cross-entropy -log softmax(N)_y, squared head is (1/2)||y - N||^2.
double cost(std::span<const double> y, std::span<const double> natural, Head head);

PerSampleDerivatives per_sample_derivatives(const ModelState& model,
                                            const LabeledBatch& batch);

/// Mean per-sample cost + (lambda/2)||theta||^2.
double regularized_loss(const ModelState& model, const LabeledBatch& batch,
                        double lambda);

/// Mean unregularized cost over the batch (or a subset given by indices).
double mean_cost(const ModelState& model, const LabeledBatch& batch,
                 std::span<const std::size_t> indices = {});

/// Mean loss gradient over the (sub)batch via one fused backward pass.
/// Returns the mean cost through *out_cost when non-null.
std::vector<double> mean_gradient(const ModelState& model, const LabeledBatch& batch,
                                  std::span<const std::size_t> indices = {},
                                  double* out_cost = nullptr);

/// Central-difference Hessian of the mean unregularized cost; symmetric but
/// not necessarily PSD. Guarded to parameter_count <= 200.
Matrix finite_difference_hessian(const ModelState& model, const LabeledBatch& batch);

// Checkpoint: magic "EFNN", one version byte, layer sizes, head tag, theta.
void save_checkpoint(const std::string& path, const ModelState& model);
ModelState load_checkpoint(const std::string& path);

}  // namespace gapest::net
