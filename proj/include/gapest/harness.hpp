// Data generation and ingestion, training with coupled weight decay, gap
// measurement, grid execution, and rank-correlation analysis.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gapest/estimators.hpp"
#include "gapest/infomat.hpp"
#include "gapest/net.hpp"

namespace gapest::harness {

class BadSpec : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagic : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TruncatedFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CountMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class Diverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class Degenerate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataSource { synthetic_gaussian, synthetic_calibrated, idx_files };

struct DatasetSpec {
  DataSource source = DataSource::synthetic_gaussian;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  std::size_t downsample = 0;  // target side length; 0 keeps native size
  double difficulty = 1.0;     // scale of the gaussian class means
  net::Architecture generator_arch;  // synthetic_calibrated only
  std::string train_images, train_labels, test_images, test_labels;
};

struct Dataset {
  net::LabeledBatch train;
  net::LabeledBatch test;
  // synthetic_calibrated keeps the generating model so labels can be
  // re-derived exactly
  std::optional<net::ModelState> generator;
};

Dataset generate_synthetic(const DatasetSpec& spec);

/// IDX container parsing (big-endian headers), pixel scaling to [0,1],
/// optional mean-pooling to `downsample` pixels per side, one-hot labels.
net::LabeledBatch load_idx(const std::string& images_path,
                           const std::string& labels_path,
                           std::size_t downsample);

enum class Optimizer { adam, sgd };

struct TrainConfig {
  net::Architecture arch;
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  std::size_t batch_size = 100;
  std::size_t steps = 1;
  double weight_decay_c = 0.0;  // lambda = c / n_train
  std::uint64_t seed = 0;
};

struct TrainTrace {
  double final_grad_norm = 0.0;     // mean regularized gradient at the end
  double final_train_loss = 0.0;    // regularized loss at the end
  std::size_t steps = 0;
  double lambda = 0.0;
};

net::ModelState train(const TrainConfig& config, const net::LabeledBatch& data,
                      TrainTrace* trace = nullptr);

/// (unregularized-cost gap, regularized-loss gap); identical by cancellation
/// of the shared ridge term, both returned for audit.
std::pair<double, double> measure_gap(const net::ModelState& model,
                                      const net::LabeledBatch& train_data,
                                      const net::LabeledBatch& test_data,
                                      double lambda);

/// tr(C) and tr(F) on a split from per-sample norms only (no d×d assembly).
std::pair<double, double> trace_moments(const net::ModelState& model,
                                        const net::LabeledBatch& batch,
                                        std::size_t chunk_size = 256);

struct RunRecord {
  std::string run_id;
  std::string dataset;
  std::string arch;
  std::size_t n_train = 0;
  double c = 0.0;
  double lambda = 0.0;
  double lr = 0.0;
  std::size_t batch = 0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::optional<double> grad_norm, train_loss, test_loss, gap;
  std::optional<double> rank_f, rank2_f, logdet_f;
  std::optional<double> rank_kfac, logdet_kfac, rank_diag, logdet_diag;
  std::optional<double> trace_f, specnorm_f, trace_c;
  std::optional<double> ratio_train, ratio_test;
  std::optional<double> mse_train, unc_train, mse_test, unc_test;
  std::optional<double> cos_cb, cos_fs, cos_bs;
  std::string status = "OK";
};

extern const char* const kCsvHeader;

std::string csv_row(const RunRecord& record);
/// Parses one data row; throws BadSpec on column-count mismatch.
RunRecord parse_csv_row(const std::string& line);

struct GridSpec {
  DatasetSpec data;                 // n_train is overridden per cell
  net::Architecture arch;
  std::vector<std::size_t> n_train_values;
  std::vector<double> c_values;
  std::vector<std::uint64_t> seeds;
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  std::size_t batch_size = 100;
  std::size_t steps = 1000;
  std::size_t measure_chunk = 256;
};

/// Runs a single fully-specified cell end to end. When `model_out` is
/// non-null the trained model is returned through it.
RunRecord run_cell(const GridSpec& grid, std::size_t n_train, double c,
                   std::uint64_t seed, net::ModelState* model_out = nullptr);

/// Resumable: cells whose run_id already appears in the CSV are skipped;
/// rows are appended one flush per cell. Per-cell failures are recorded
/// with status FAILED and the grid continues.
std::vector<RunRecord> run_grid(const GridSpec& grid,
                                const std::string& csv_path);

/// Tie-corrected Kendall tau-b.
double kendall_tau(const std::vector<double>& xs,
                   const std::vector<double>& ys);

struct WindowTau {
  double center = 0.0;
  double tau = 0.0;
  bool missing = false;
};

/// Sliding window of `window_fraction` of the records (sorted by `key`),
/// reporting tau(xs, ys) per window.
std::vector<WindowTau> moving_window_tau(const std::vector<double>& key,
                                         const std::vector<double>& xs,
                                         const std::vector<double>& ys,
                                         double window_fraction = 0.5);

}  // namespace gapest::harness
