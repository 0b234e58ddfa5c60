#include "gapest/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace gapest::harness {

namespace {

using linalg::Matrix;

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void fill_gaussian_batch(std::mt19937_64& rng, const DatasetSpec& spec,
                         const std::vector<std::vector<double>>& means,
                         net::LabeledBatch& batch) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = batch.features.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = rng() % spec.classes;
    batch.labels(i, label) = 1.0;
    for (std::size_t j = 0; j < spec.input_dim; ++j)
      batch.features(i, j) = means[label][j] + gauss(rng);
  }
}

void fill_calibrated_batch(std::mt19937_64& rng, const net::ModelState& gen,
                           net::LabeledBatch& batch) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t n = batch.features.rows();
  const std::size_t k = batch.labels.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < batch.features.cols(); ++j)
      batch.features(i, j) = gauss(rng);
  const auto fwd = net::forward(gen, batch);
  for (std::size_t i = 0; i < n; ++i) {
    if (gen.arch.head == net::Head::softmax_ce) {
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
        batch.labels(i, a) = a == pick ? 1.0 : 0.0;
    } else {
      // gaussian head with unit covariance
      for (std::size_t a = 0; a < k; ++a)
        batch.labels(i, a) = fwd.natural(i, a) + gauss(rng);
    }
  }
}

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char buf[4];
  if (!f.read(reinterpret_cast<char*>(buf), 4))
    throw TruncatedFile("truncated IDX header: " + path);
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::optional<double> parse_field(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::strtod(s.c_str(), nullptr);
}

}  // namespace

Dataset generate_synthetic(const DatasetSpec& spec) {
  if (spec.n_train == 0) throw BadSpec("n_train must be positive");
  if (spec.input_dim == 0 || spec.classes < 2)
    throw BadSpec("need input_dim >= 1 and classes >= 2");

  Dataset out;
  out.train = {Matrix(spec.n_train, spec.input_dim),
               Matrix(spec.n_train, spec.classes)};
  out.test = {Matrix(spec.n_test, spec.input_dim),
              Matrix(spec.n_test, spec.classes)};
  std::mt19937_64 rng(mix_seed(spec.seed, 0));

  if (spec.source == DataSource::synthetic_gaussian) {
    if (spec.classes > spec.input_dim)
      throw BadSpec("gaussian source needs classes <= input_dim");
    // class means: scaled, centered standard-basis simplex
    std::vector<std::vector<double>> means(
        spec.classes, std::vector<double>(spec.input_dim, 0.0));
    for (std::size_t k = 0; k < spec.classes; ++k) {
      for (std::size_t j = 0; j < spec.classes; ++j)
        means[k][j] = spec.difficulty *
                      ((k == j ? 1.0 : 0.0) - 1.0 / spec.classes);
    }
    fill_gaussian_batch(rng, spec, means, out.train);
    fill_gaussian_batch(rng, spec, means, out.test);
  } else if (spec.source == DataSource::synthetic_calibrated) {
    net::Architecture gen_arch = spec.generator_arch;
    if (gen_arch.layer_sizes.empty())
      gen_arch = {{spec.input_dim, spec.classes}, net::Head::softmax_ce};
    if (gen_arch.input_dim() != spec.input_dim ||
        gen_arch.output_dim() != spec.classes)
      throw BadSpec("generator architecture does not match the data shape");
    out.generator = net::init_model(gen_arch, mix_seed(spec.seed, 1));
    fill_calibrated_batch(rng, *out.generator, out.train);
    fill_calibrated_batch(rng, *out.generator, out.test);
  } else {
    throw BadSpec("idx_files source must go through load_idx");
  }
  return out;
}

net::LabeledBatch load_idx(const std::string& images_path,
                           const std::string& labels_path,
                           std::size_t downsample) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw TruncatedFile("cannot open " + images_path);
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw TruncatedFile("cannot open " + labels_path);

  if (read_be32(imgs, images_path) != 0x00000803u)
    throw BadMagic("bad image magic in " + images_path);
  const std::size_t n = read_be32(imgs, images_path);
  const std::size_t rows = read_be32(imgs, images_path);
  const std::size_t cols = read_be32(imgs, images_path);
  if (read_be32(labs, labels_path) != 0x00000801u)
    throw BadMagic("bad label magic in " + labels_path);
  const std::size_t n_labels = read_be32(labs, labels_path);
  if (n != n_labels)
    throw CountMismatch("image/label counts differ: " + std::to_string(n) +
                        " vs " + std::to_string(n_labels));

  std::size_t side = rows;
  std::size_t pool = 1;
  if (downsample != 0) {
    if (rows != cols || rows % downsample != 0)
      throw BadSpec("downsample target must evenly divide a square image");
    side = downsample;
    pool = rows / downsample;
  } else if (rows != cols) {
    side = 0;  // non-square allowed without pooling
  }
  const std::size_t out_dim = downsample != 0 ? side * side : rows * cols;
  constexpr std::size_t kClasses = 10;

  net::LabeledBatch batch{Matrix(n, out_dim), Matrix(n, kClasses)};
  std::vector<unsigned char> pixel(rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    if (!imgs.read(reinterpret_cast<char*>(pixel.data()),
                   static_cast<std::streamsize>(pixel.size())))
      throw TruncatedFile("truncated image data in " + images_path);
    if (downsample == 0) {
      for (std::size_t j = 0; j < rows * cols; ++j)
        batch.features(i, j) = pixel[j] / 255.0;
    } else {
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
          double sum = 0.0;
          for (std::size_t dr = 0; dr < pool; ++dr)
            for (std::size_t dc = 0; dc < pool; ++dc)
              sum += pixel[(r * pool + dr) * cols + (c * pool + dc)];
          batch.features(i, r * side + c) = sum / (255.0 * pool * pool);
        }
    }
    char lab = 0;
    if (!labs.read(&lab, 1))
      throw TruncatedFile("truncated label data in " + labels_path);
    const auto value = static_cast<unsigned char>(lab);
    if (value >= kClasses)
      throw BadSpec("label out of range in " + labels_path);
    batch.labels(i, value) = 1.0;
  }
  return batch;
}

net::ModelState train(const TrainConfig& config, const net::LabeledBatch& data,
                      TrainTrace* trace) {
  data.validate();
  config.arch.validate();
  if (config.steps < 1) throw BadSpec("steps must be >= 1");
  const std::size_t n = data.features.rows();
  const std::size_t batch_size = std::min(config.batch_size, n);
  if (batch_size == 0) throw BadSpec("batch size must be >= 1");
  const double lambda = config.weight_decay_c / static_cast<double>(n);

  net::ModelState model = net::init_model(config.arch, config.seed);
  const std::size_t d = model.theta.size();
  std::mt19937_64 rng(mix_seed(config.seed, 17));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::size_t pos = 0;

  std::vector<double> m1(d, 0.0), m2(d, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (pos + batch_size > n) {
      std::shuffle(perm.begin(), perm.end(), rng);
      pos = 0;
    }
    double cost = 0.0;
    auto grad = net::mean_gradient(
        model, data, std::span<const std::size_t>(perm.data() + pos, batch_size),
        &cost);
    pos += batch_size;
    if (!std::isfinite(cost)) throw Diverged("training loss is non-finite");
    for (std::size_t j = 0; j < d; ++j) grad[j] += lambda * model.theta[j];

    if (config.optimizer == Optimizer::adam) {
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t j = 0; j < d; ++j) {
        m1[j] = beta1 * m1[j] + (1.0 - beta1) * grad[j];
        m2[j] = beta2 * m2[j] + (1.0 - beta2) * grad[j] * grad[j];
        model.theta[j] -= config.learning_rate * (m1[j] / bc1) /
                          (std::sqrt(m2[j] / bc2) + eps);
      }
    } else {
      for (std::size_t j = 0; j < d; ++j)
        model.theta[j] -= config.learning_rate * grad[j];
    }
    for (double v : model.theta)
      if (!std::isfinite(v)) throw Diverged("parameters became non-finite");
  }

  if (trace != nullptr) {
    double cost = 0.0;
    auto grad = net::mean_gradient(model, data, {}, &cost);
    double g2 = 0.0, t2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = grad[j] + lambda * model.theta[j];
      g2 += g * g;
      t2 += model.theta[j] * model.theta[j];
    }
    trace->final_grad_norm = std::sqrt(g2);
    trace->final_train_loss = cost + 0.5 * lambda * t2;
    trace->steps = config.steps;
    trace->lambda = lambda;
  }
  return model;
}

std::pair<double, double> measure_gap(const net::ModelState& model,
                                      const net::LabeledBatch& train_data,
                                      const net::LabeledBatch& test_data,
                                      double lambda) {
  const double train_cost = net::mean_cost(model, train_data);
  const double test_cost = net::mean_cost(model, test_data);
  double t2 = 0.0;
  for (double v : model.theta) t2 += v * v;
  const double ridge = 0.5 * lambda * t2;
  const double gap_cost = test_cost - train_cost;
  const double gap_regularized = (test_cost + ridge) - (train_cost + ridge);
  return {gap_cost, gap_regularized};
}

std::pair<double, double> trace_moments(const net::ModelState& model,
                                        const net::LabeledBatch& batch,
                                        std::size_t chunk_size) {
  const std::size_t n = batch.features.rows();
  if (chunk_size == 0) chunk_size = 256;
  double trace_c = 0.0, trace_f = 0.0;
  for (std::size_t lo = 0; lo < n; lo += chunk_size) {
    const std::size_t hi = std::min(n, lo + chunk_size);
    net::LabeledBatch sub{Matrix(hi - lo, batch.features.cols()),
                          Matrix(hi - lo, batch.labels.cols())};
    std::memcpy(sub.features.data(), batch.features.row(lo),
                (hi - lo) * batch.features.cols() * sizeof(double));
    std::memcpy(sub.labels.data(), batch.labels.row(lo),
                (hi - lo) * batch.labels.cols() * sizeof(double));
    const auto derivs = net::per_sample_derivatives(model, sub);
    const std::size_t k = sub.labels.cols();
    const std::size_t d = derivs.grads.cols();
    for (std::size_t i = 0; i < hi - lo; ++i) {
      for (std::size_t j = 0; j < d; ++j)
        trace_c += derivs.grads(i, j) * derivs.grads(i, j) / n;
      // tr(J^T Sigma J) = sum_ab Sigma(a,b) <J_a, J_b>
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          if (derivs.sigmas[i](a, b) == 0.0) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j)
            dot += derivs.jacobians[i](a, j) * derivs.jacobians[i](b, j);
          trace_f += derivs.sigmas[i](a, b) * dot / n;
        }
    }
  }
  return {trace_c, trace_f};
}

const char* const kCsvHeader =
    "run_id,dataset,arch,n_train,c,lambda,lr,batch,seed,steps,grad_norm,"
    "train_loss,test_loss,gap,rank_f,rank2_f,logdet_f,rank_kfac,logdet_kfac,"
    "rank_diag,logdet_diag,trace_f,specnorm_f,trace_c,ratio_train,ratio_test,"
    "mse_train,unc_train,mse_test,unc_test,cos_cb,cos_fs,cos_bs,status";

std::string csv_row(const RunRecord& r) {
  std::ostringstream out;
  out << r.run_id << ',' << r.dataset << ',' << r.arch << ',' << r.n_train
      << ',' << format_double(r.c) << ',' << format_double(r.lambda) << ','
      << format_double(r.lr) << ',' << r.batch << ',' << r.seed << ','
      << r.steps;
  for (const auto* f :
       {&r.grad_norm, &r.train_loss, &r.test_loss, &r.gap, &r.rank_f,
        &r.rank2_f, &r.logdet_f, &r.rank_kfac, &r.logdet_kfac, &r.rank_diag,
        &r.logdet_diag, &r.trace_f, &r.specnorm_f, &r.trace_c, &r.ratio_train,
        &r.ratio_test, &r.mse_train, &r.unc_train, &r.mse_test, &r.unc_test,
        &r.cos_cb, &r.cos_fs, &r.cos_bs})
    out << ',' << format_field(*f);
  out << ',' << r.status;
  return out.str();
}

RunRecord parse_csv_row(const std::string& line) {
  std::vector<std::string> cols;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cols.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cols.push_back(cur);
  if (cols.size() != 34)
    throw BadSpec("CSV row has " + std::to_string(cols.size()) +
                  " columns, expected 34");
  RunRecord r;
  r.run_id = cols[0];
  r.dataset = cols[1];
  r.arch = cols[2];
  r.n_train = std::stoull(cols[3]);
  r.c = std::strtod(cols[4].c_str(), nullptr);
  r.lambda = std::strtod(cols[5].c_str(), nullptr);
  r.lr = std::strtod(cols[6].c_str(), nullptr);
  r.batch = std::stoull(cols[7]);
  r.seed = std::stoull(cols[8]);
  r.steps = std::stoull(cols[9]);
  std::optional<double>* fields[] = {
      &r.grad_norm, &r.train_loss, &r.test_loss, &r.gap,        &r.rank_f,
      &r.rank2_f,   &r.logdet_f,   &r.rank_kfac, &r.logdet_kfac, &r.rank_diag,
      &r.logdet_diag, &r.trace_f,  &r.specnorm_f, &r.trace_c,   &r.ratio_train,
      &r.ratio_test, &r.mse_train, &r.unc_train, &r.mse_test,   &r.unc_test,
      &r.cos_cb,    &r.cos_fs,     &r.cos_bs};
  for (std::size_t i = 0; i < 23; ++i) *fields[i] = parse_field(cols[10 + i]);
  r.status = cols[33];
  return r;
}

namespace {

std::string make_run_id(std::size_t n_train, double c, std::uint64_t seed) {
  std::ostringstream id;
  id << "n" << n_train << "_c" << format_double(c) << "_s" << seed;
  return id.str();
}

std::string arch_string(const net::Architecture& arch) {
  std::ostringstream s;
  for (std::size_t i = 0; i < arch.layer_sizes.size(); ++i) {
    if (i > 0) s << '-';
    s << arch.layer_sizes[i];
  }
  return s.str();
}

Dataset make_dataset(const GridSpec& grid, std::size_t n_train,
                     std::uint64_t seed) {
  DatasetSpec ds = grid.data;
  ds.n_train = n_train;
  ds.seed = mix_seed(grid.data.seed, mix_seed(n_train, seed));
  if (ds.source != DataSource::idx_files) return generate_synthetic(ds);

  Dataset out;
  auto full_train = load_idx(ds.train_images, ds.train_labels, ds.downsample);
  auto full_test = load_idx(ds.test_images, ds.test_labels, ds.downsample);
  const std::size_t avail = full_train.features.rows();
  if (n_train > avail) throw BadSpec("n_train exceeds the IDX train set");
  std::mt19937_64 rng(ds.seed);
  std::vector<std::size_t> idx(avail);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t p = full_train.features.cols();
  const std::size_t k = full_train.labels.cols();
  out.train = {Matrix(n_train, p), Matrix(n_train, k)};
  for (std::size_t i = 0; i < n_train; ++i) {
    std::memcpy(out.train.features.row(i), full_train.features.row(idx[i]),
                p * sizeof(double));
    std::memcpy(out.train.labels.row(i), full_train.labels.row(idx[i]),
                k * sizeof(double));
  }
  const std::size_t n_test =
      ds.n_test == 0 ? full_test.features.rows()
                     : std::min(ds.n_test, full_test.features.rows());
  out.test = {Matrix(n_test, p), Matrix(n_test, k)};
  std::memcpy(out.test.features.data(), full_test.features.data(),
              n_test * p * sizeof(double));
  std::memcpy(out.test.labels.data(), full_test.labels.data(),
              n_test * k * sizeof(double));
  return out;
}

std::string dataset_name(const DatasetSpec& ds) {
  switch (ds.source) {
    case DataSource::synthetic_gaussian: return "synthetic_gaussian";
    case DataSource::synthetic_calibrated: return "synthetic_calibrated";
    case DataSource::idx_files: return "idx";
  }
  return "unknown";
}

}  // namespace

RunRecord run_cell(const GridSpec& grid, std::size_t n_train, double c,
                   std::uint64_t seed, net::ModelState* model_out) {
  RunRecord r;
  r.run_id = make_run_id(n_train, c, seed);
  r.dataset = dataset_name(grid.data);
  r.arch = arch_string(grid.arch);
  r.n_train = n_train;
  r.c = c;
  r.lambda = c / static_cast<double>(n_train);
  r.lr = grid.learning_rate;
  r.batch = grid.batch_size;
  r.seed = seed;
  r.steps = grid.steps;

  Dataset data = make_dataset(grid, n_train, seed);

  TrainConfig tc;
  tc.arch = grid.arch;
  tc.optimizer = grid.optimizer;
  tc.learning_rate = grid.learning_rate;
  tc.batch_size = grid.batch_size;
  tc.steps = grid.steps;
  tc.weight_decay_c = c;
  tc.seed = seed;
  TrainTrace trace;
  net::ModelState model = train(tc, data.train, &trace);
  r.grad_norm = trace.final_grad_norm;

  const auto [gap_cost, gap_regularized] =
      measure_gap(model, data.train, data.test, r.lambda);
  // identical up to one rounding of the cancelled ridge term
  if (std::abs(gap_cost - gap_regularized) >
      1e-12 * (1.0 + std::abs(gap_cost)))
    throw Degenerate("gap conventions disagree");
  r.train_loss = net::mean_cost(model, data.train);
  r.test_loss = net::mean_cost(model, data.test);
  r.gap = gap_cost;

  const auto fused =
      infomat::assemble_streamed(model, data.train, r.lambda, grid.measure_chunk);
  const auto table =
      estimators::complexity_table(fused.bundle, fused.kfac, fused.diag_f);
  r.rank_f = table.rank_f;
  r.rank2_f = table.rank2_f;
  r.logdet_f = table.logdet_f;
  r.rank_kfac = table.rank_kfac;
  r.logdet_kfac = table.logdet_kfac;
  r.rank_diag = table.rank_diag;
  r.logdet_diag = table.logdet_diag;
  r.trace_f = table.trace_f;
  r.specnorm_f = table.specnorm_f;
  r.trace_c = fused.bundle.C.trace();
  if (*r.trace_f >= 1e-12) r.ratio_train = *r.trace_c / *r.trace_f;

  const auto [tc_test, tf_test] =
      trace_moments(model, data.test, grid.measure_chunk);
  if (tf_test >= 1e-12) r.ratio_test = tc_test / tf_test;

  if (grid.arch.head == net::Head::softmax_ce) {
    const auto fwd_train = net::forward(model, data.train);
    const auto eu_train =
        estimators::mse_uncertainty(fwd_train.predictions, data.train.labels);
    r.mse_train = eu_train.mse;
    r.unc_train = eu_train.uncertainty;
    const auto fwd_test = net::forward(model, data.test);
    const auto eu_test =
        estimators::mse_uncertainty(fwd_test.predictions, data.test.labels);
    r.mse_test = eu_test.mse;
    r.unc_test = eu_test.uncertainty;
  }

  if (!fused.report.c_jbj_missing) r.cos_cb = fused.report.cos_c_jbj;
  if (!fused.report.f_jsj_missing) r.cos_fs = fused.report.cos_f_jsj;
  if (!fused.report.b_sigma_missing) r.cos_bs = fused.report.cos_b_sigma;
  r.status = "OK";
  if (model_out != nullptr) *model_out = std::move(model);
  return r;
}

std::vector<RunRecord> run_grid(const GridSpec& grid,
                                const std::string& csv_path) {
  std::set<std::string> done;
  std::vector<RunRecord> records;
  bool have_file = false;
  {
    std::ifstream in(csv_path);
    if (in) {
      have_file = true;
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
          first = false;
          continue;  // header
        }
        RunRecord r = parse_csv_row(line);
        done.insert(r.run_id);
        records.push_back(std::move(r));
      }
    }
  }
  if (!have_file) {
    const auto parent = std::filesystem::path(csv_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(csv_path);
    out << kCsvHeader << '\n';
  }

  std::ofstream out(csv_path, std::ios::app);
  for (std::size_t n_train : grid.n_train_values)
    for (double c : grid.c_values)
      for (std::uint64_t seed : grid.seeds) {
        const std::string id = make_run_id(n_train, c, seed);
        if (done.count(id) != 0) continue;
        RunRecord r;
        try {
          r = run_cell(grid, n_train, c, seed);
        } catch (const std::exception&) {
          r = RunRecord{};
          r.run_id = id;
          r.dataset = dataset_name(grid.data);
          r.arch = arch_string(grid.arch);
          r.n_train = n_train;
          r.c = c;
          r.lambda = c / static_cast<double>(n_train);
          r.lr = grid.learning_rate;
          r.batch = grid.batch_size;
          r.seed = seed;
          r.steps = grid.steps;
          r.status = "FAILED";
        }
        out << csv_row(r) << '\n';
        out.flush();
        records.push_back(std::move(r));
      }
  return records;
}

double kendall_tau(const std::vector<double>& xs,
                   const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  if (n != ys.size() || n < 2)
    throw BadSpec("kendall_tau: need two equal-length series of >= 2");
  long long concordant = 0, discordant = 0;
  long long ties_x = 0, ties_y = 0;
  bool x_varies = false, y_varies = false;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = xs[i] - xs[j];
      const double dy = ys[i] - ys[j];
      if (dx != 0.0) x_varies = true;
      if (dy != 0.0) y_varies = true;
      if (dx == 0.0 && dy == 0.0) {
        ++ties_x;
        ++ties_y;
      } else if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if (dx * dy > 0.0) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  if (!x_varies || !y_varies)
    throw Degenerate("kendall_tau: a series is constant");
  const double n0 = 0.5 * static_cast<double>(n) * (n - 1);
  const double denom = std::sqrt((n0 - static_cast<double>(ties_x)) *
                                 (n0 - static_cast<double>(ties_y)));
  return (static_cast<double>(concordant) - static_cast<double>(discordant)) /
         denom;
}

std::vector<WindowTau> moving_window_tau(const std::vector<double>& key,
                                         const std::vector<double>& xs,
                                         const std::vector<double>& ys,
                                         double window_fraction) {
  const std::size_t n = key.size();
  if (xs.size() != n || ys.size() != n || n < 4)
    throw BadSpec("moving_window_tau: need >= 4 aligned records");
  if (window_fraction <= 0.0 || window_fraction > 1.0)
    throw BadSpec("moving_window_tau: window fraction must be in (0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  const std::size_t w = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(window_fraction * n)));

  std::vector<WindowTau> out;
  for (std::size_t start = 0; start + w <= n; ++start) {
    std::vector<double> wx(w), wy(w);
    for (std::size_t i = 0; i < w; ++i) {
      wx[i] = xs[order[start + i]];
      wy[i] = ys[order[start + i]];
    }
    WindowTau wt;
    wt.center = key[order[start + w / 2]];
    try {
      wt.tau = kendall_tau(wx, wy);
    } catch (const Degenerate&) {
      wt.missing = true;
    }
    out.push_back(wt);
  }
  return out;
}

}  // namespace gapest::harness
