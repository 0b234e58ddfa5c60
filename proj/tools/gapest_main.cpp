// Command-line front end: train / estimate / grid / verify / report.
// Exit codes: 0 success, 1 runtime or verification failure, 2 usage/config
// error.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gapest/estimators.hpp"
#include "gapest/harness.hpp"
#include "gapest/infomat.hpp"
#include "gapest/linalg.hpp"
#include "gapest/net.hpp"
#include "gapest/verify.hpp"

namespace {

using gapest::harness::DatasetSpec;
using gapest::harness::DataSource;
using gapest::harness::GridSpec;
using gapest::harness::RunRecord;
using gapest::net::Architecture;
using gapest::net::Head;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// key=value config file: one pair per line, '#' starts a comment,
/// blank lines ignored. Unknown keys are a hard error with line numbers.
class Config {
 public:
  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    Config cfg;
    cfg.path_ = path;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": empty key");
      if (cfg.kv_.count(key))
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": duplicate key '" + key + "'");
      cfg.kv_[key] = {value, line_no};
    }
    return cfg;
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    auto it = kv_.find(key);
    used_.insert(key);
    return it == kv_.end() ? dflt : it->second.first;
  }

  std::string require_string(const std::string& key) {
    auto it = kv_.find(key);
    used_.insert(key);
    if (it == kv_.end())
      throw ConfigError(path_ + ": missing required key '" + key + "'");
    return it->second.first;
  }

  double get_double(const std::string& key, double dflt) {
    return has(key) ? parse_double(key, get_string(key, "")) : (used_.insert(key), dflt);
  }
  double require_double(const std::string& key) {
    return parse_double(key, require_string(key));
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) {
    return has(key) ? parse_u64(key, get_string(key, "")) : (used_.insert(key), dflt);
  }
  std::uint64_t require_u64(const std::string& key) {
    return parse_u64(key, require_string(key));
  }

  std::vector<double> require_double_list(const std::string& key) {
    std::vector<double> out;
    for (const auto& tok : split(require_string(key), ','))
      out.push_back(parse_double(key, tok));
    if (out.empty()) throw ConfigError(path_ + ": empty list for '" + key + "'");
    return out;
  }
  std::vector<std::uint64_t> require_u64_list(const std::string& key) {
    std::vector<std::uint64_t> out;
    for (const auto& tok : split(require_string(key), ','))
      out.push_back(parse_u64(key, tok));
    if (out.empty()) throw ConfigError(path_ + ": empty list for '" + key + "'");
    return out;
  }

  /// Layer sizes like "49-70-10".
  std::vector<std::size_t> require_arch(const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& tok : split(require_string(key), '-'))
      out.push_back(static_cast<std::size_t>(parse_u64(key, tok)));
    if (out.size() < 2)
      throw ConfigError(path_ + ": '" + key + "' needs at least two layers");
    return out;
  }

  void reject_unknown() const {
    std::string msg;
    for (const auto& [key, value] : kv_) {
      if (used_.count(key)) continue;
      if (!msg.empty()) msg += "; ";
      msg += path_ + ":" + std::to_string(value.second) + ": unknown key '" +
             key + "'";
    }
    if (!msg.empty()) throw ConfigError(msg);
  }

 private:
  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep))
      if (!tok.empty()) out.push_back(tok);
    return out;
  }
  double parse_double(const std::string& key, const std::string& value) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(path_ + ": key '" + key + "': not a number: '" +
                        value + "'");
    }
  }
  std::uint64_t parse_u64(const std::string& key,
                          const std::string& value) const {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(path_ + ": key '" + key + "': not a nonnegative "
                        "integer: '" + value + "'");
    }
  }

  std::string path_;
  std::map<std::string, std::pair<std::string, int>> kv_;
  std::set<std::string> used_;
};

Head parse_head(const std::string& name, const std::string& where) {
  if (name == "softmax") return Head::softmax_ce;
  if (name == "squared") return Head::squared_loss;
  throw ConfigError(where + ": head must be 'softmax' or 'squared', got '" +
                    name + "'");
}

DatasetSpec dataset_from_config(Config& cfg) {
  DatasetSpec spec;
  const std::string source = cfg.require_string("dataset");
  if (source == "gaussian") {
    spec.source = DataSource::synthetic_gaussian;
  } else if (source == "calibrated") {
    spec.source = DataSource::synthetic_calibrated;
  } else if (source == "idx") {
    spec.source = DataSource::idx_files;
  } else {
    throw ConfigError("dataset must be gaussian, calibrated, or idx; got '" +
                      source + "'");
  }
  spec.n_train = static_cast<std::size_t>(cfg.get_u64("n_train", 0));
  spec.n_test = static_cast<std::size_t>(cfg.get_u64("n_test", 1000));
  spec.seed = cfg.get_u64("data_seed", 1);
  if (spec.source == DataSource::idx_files) {
    spec.train_images = cfg.require_string("train_images");
    spec.train_labels = cfg.require_string("train_labels");
    spec.test_images = cfg.require_string("test_images");
    spec.test_labels = cfg.require_string("test_labels");
    spec.downsample = static_cast<std::size_t>(cfg.get_u64("downsample", 0));
    return spec;
  }
  spec.input_dim = static_cast<std::size_t>(cfg.require_u64("input_dim"));
  spec.classes = static_cast<std::size_t>(cfg.require_u64("classes"));
  spec.difficulty = cfg.get_double("difficulty", 1.0);
  if (spec.source == DataSource::synthetic_calibrated) {
    spec.generator_arch.layer_sizes = cfg.require_arch("generator_arch");
    spec.generator_arch.head =
        parse_head(cfg.get_string("generator_head", "softmax"), "config");
  }
  return spec;
}

GridSpec grid_from_config(Config& cfg, bool lists) {
  GridSpec grid;
  grid.data = dataset_from_config(cfg);
  grid.arch.layer_sizes = cfg.require_arch("arch");
  grid.arch.head = parse_head(cfg.get_string("head", "softmax"), "config");
  const std::string opt = cfg.get_string("optimizer", "adam");
  if (opt == "adam") {
    grid.optimizer = gapest::harness::Optimizer::adam;
  } else if (opt == "sgd") {
    grid.optimizer = gapest::harness::Optimizer::sgd;
  } else {
    throw ConfigError("optimizer must be 'adam' or 'sgd', got '" + opt + "'");
  }
  grid.learning_rate = cfg.get_double("lr", 1e-3);
  grid.batch_size = static_cast<std::size_t>(cfg.get_u64("batch", 100));
  grid.steps = static_cast<std::size_t>(cfg.get_u64("steps", 1000));
  grid.measure_chunk =
      static_cast<std::size_t>(cfg.get_u64("measure_chunk", 256));
  if (lists) {
    for (auto v : cfg.require_u64_list("n_train_values"))
      grid.n_train_values.push_back(static_cast<std::size_t>(v));
    grid.c_values = cfg.require_double_list("c_values");
    grid.seeds = cfg.require_u64_list("seeds");
  } else {
    grid.n_train_values = {static_cast<std::size_t>(cfg.require_u64("n_train"))};
    grid.c_values = {cfg.get_double("c", 0.0)};
    grid.seeds = {cfg.get_u64("seed", 0)};
  }
  return grid;
}

std::optional<std::uint64_t> gap_seed_override() {
  const char* env = std::getenv("GAP_SEED");
  if (env == nullptr || *env == '\0') return std::nullopt;
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(env, &pos);
    if (pos != std::string(env).size()) throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("GAP_SEED is not a nonnegative integer: ") +
                      env);
  }
}

void append_csv_row(const std::string& csv_path, const RunRecord& record) {
  const bool fresh = !std::filesystem::exists(csv_path);
  std::ofstream out(csv_path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + csv_path);
  if (fresh) out << gapest::harness::kCsvHeader << "\n";
  out << gapest::harness::csv_row(record) << "\n";
}

// ------------------------------------------------------------------- train

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_dir) {
  Config cfg = Config::load(config_path);
  GridSpec grid = grid_from_config(cfg, /*lists=*/false);
  cfg.reject_unknown();
  std::uint64_t run_seed = grid.seeds[0];
  if (auto env = gap_seed_override()) run_seed = *env;
  if (seed) run_seed = *seed;

  std::filesystem::create_directories(out_dir);
  gapest::net::ModelState model;
  RunRecord record =
      run_cell(grid, grid.n_train_values[0], grid.c_values[0], run_seed, &model);
  const std::string ckpt =
      (std::filesystem::path(out_dir) / "checkpoint.bin").string();
  gapest::net::save_checkpoint(ckpt, model);
  append_csv_row((std::filesystem::path(out_dir) / "runs.csv").string(),
                 record);
  std::printf("run_id,%s\n", record.run_id.c_str());
  std::printf("checkpoint,%s\n", ckpt.c_str());
  if (record.train_loss) std::printf("train_loss,%.17g\n", *record.train_loss);
  if (record.test_loss) std::printf("test_loss,%.17g\n", *record.test_loss);
  if (record.gap) std::printf("gap,%.17g\n", *record.gap);
  std::printf("status,%s\n", record.status.c_str());
  return record.status == "OK" ? 0 : 1;
}

// ---------------------------------------------------------------- estimate

int cmd_estimate(const std::string& ckpt_path, const std::string& data_path,
                 double lambda, bool dump, const std::string& out_dir) {
  if (lambda <= 0.0) {
    std::fprintf(stderr, "estimate: --lambda must be positive\n");
    return 2;
  }
  Config cfg = Config::load(data_path);
  DatasetSpec spec = dataset_from_config(cfg);
  cfg.reject_unknown();

  gapest::net::ModelState model = gapest::net::load_checkpoint(ckpt_path);
  gapest::net::LabeledBatch batch;
  if (spec.source == DataSource::idx_files) {
    batch = gapest::harness::load_idx(spec.train_images, spec.train_labels,
                                      spec.downsample);
  } else {
    batch = gapest::harness::generate_synthetic(spec).train;
  }
  if (batch.features.cols() != model.arch.input_dim() ||
      batch.labels.cols() != model.arch.output_dim()) {
    std::fprintf(stderr,
                 "estimate: checkpoint expects %zux%zu data, config gives "
                 "%zux%zu\n",
                 model.arch.input_dim(), model.arch.output_dim(),
                 batch.features.cols(), batch.labels.cols());
    return 2;
  }

  const char* current = "assembly";
  try {
    auto moments = gapest::infomat::assemble_streamed(model, batch, lambda);
    current = "complexity_table";
    auto table = gapest::estimators::complexity_table(
        moments.bundle, moments.kfac, moments.diag_f);
    std::printf("rank_f,%.17g\n", table.rank_f);
    std::printf("rank2_f,%.17g\n", table.rank2_f);
    std::printf("logdet_f,%.17g\n", table.logdet_f);
    std::printf("rank_kfac,%.17g\n", table.rank_kfac);
    std::printf("logdet_kfac,%.17g\n", table.logdet_kfac);
    std::printf("rank_diag,%.17g\n", table.rank_diag);
    std::printf("logdet_diag,%.17g\n", table.logdet_diag);
    std::printf("trace_f,%.17g\n", table.trace_f);
    std::printf("specnorm_f,%.17g\n", table.specnorm_f);
    std::printf("trace_c,%.17g\n", moments.bundle.C.trace());
    current = "tic_reg";
    auto summary = gapest::estimators::whitened_summary(moments.bundle, model);
    std::printf("tic_reg,%.17g\n", summary.tic);
    std::printf("l2_geometry,%.17g\n", summary.l2);
    current = "trace_ratio";
    std::printf("trace_ratio,%.17g\n",
                gapest::estimators::trace_ratio(moments.bundle).value);
    current = "soft_rank_gap";
    std::printf("soft_rank_gap,%.17g\n",
                gapest::estimators::soft_rank_gap(moments.bundle).value);
    current = "param_error";
    std::printf("param_error,%.17g\n",
                gapest::estimators::param_error_bound(moments.bundle).value);
    if (dump) {
      std::filesystem::create_directories(out_dir);
      gapest::infomat::save_bundle(out_dir, moments.bundle, spec.seed);
      gapest::linalg::save_matrix(
          (std::filesystem::path(out_dir) / "diag_f.bin").string(),
          moments.diag_f);
      std::printf("dump,%s\n", out_dir.c_str());
    }
  } catch (const gapest::linalg::NotPsd& e) {
    std::fprintf(stderr, "estimate: %s failed: %s\n", current, e.what());
    return 1;
  } catch (const gapest::linalg::NotPositiveDefinite& e) {
    std::fprintf(stderr, "estimate: %s failed: %s\n", current, e.what());
    return 1;
  } catch (const gapest::estimators::Singular& e) {
    std::fprintf(stderr, "estimate: %s failed: %s\n", current, e.what());
    return 1;
  } catch (const gapest::estimators::ZeroTrace& e) {
    std::fprintf(stderr, "estimate: %s failed: %s\n", current, e.what());
    return 1;
  }
  return 0;
}

// -------------------------------------------------------------------- grid

int cmd_grid(const std::string& config_path, const std::string& out_dir,
             unsigned workers) {
  (void)workers;  // accepted for interface stability; cells run serially
  Config cfg = Config::load(config_path);
  GridSpec grid = grid_from_config(cfg, /*lists=*/true);
  cfg.reject_unknown();
  if (auto env = gap_seed_override()) grid.seeds = {*env};
  std::filesystem::create_directories(out_dir);
  const std::string csv =
      (std::filesystem::path(out_dir) / "grid.csv").string();
  auto records = gapest::harness::run_grid(grid, csv);
  std::size_t failed = 0;
  for (const auto& r : records) {
    std::printf("%s,%s\n", r.run_id.c_str(), r.status.c_str());
    if (r.status != "OK") ++failed;
  }
  std::printf("csv,%s\n", csv.c_str());
  return failed == 0 ? 0 : 1;
}

// ------------------------------------------------------------------ verify

int cmd_verify(const std::string& suite) {
  std::vector<gapest::verify::PropertyResult> results;
  try {
    // "mutation" is the deliberate-breakage fixture: the pinching operator
    // is sign-flipped, so the affected properties must report FAIL
    if (suite == "mutation") {
      results = gapest::verify::run_suite("theorems", /*mutate_pinch=*/true);
    } else {
      results = gapest::verify::run_suite(suite);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "verify: %s\n", e.what());
    return 2;
  }
  for (const auto& r : results)
    std::printf("%s,%s,worst=%.17g,tol=%.17g\n", r.name.c_str(),
                r.pass ? "PASS" : "FAIL", r.worst, r.tolerance);
  return gapest::verify::all_pass(results) ? 0 : 1;
}

// ------------------------------------------------------------------ report

struct Column {
  const char* name;
  std::optional<double> RunRecord::* field;
};

constexpr Column kComplexityColumns[] = {
    {"rank_f", &RunRecord::rank_f},
    {"rank2_f", &RunRecord::rank2_f},
    {"logdet_f", &RunRecord::logdet_f},
    {"rank_kfac", &RunRecord::rank_kfac},
    {"logdet_kfac", &RunRecord::logdet_kfac},
    {"rank_diag", &RunRecord::rank_diag},
    {"logdet_diag", &RunRecord::logdet_diag},
    {"trace_f", &RunRecord::trace_f},
    {"specnorm_f", &RunRecord::specnorm_f},
};

int cmd_report(const std::string& csv_path, const std::string& out_dir) {
  std::ifstream in(csv_path);
  if (!in) {
    std::fprintf(stderr, "report: cannot open %s\n", csv_path.c_str());
    return 2;
  }
  std::vector<RunRecord> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      continue;  // header
    }
    RunRecord r = gapest::harness::parse_csv_row(line);
    if (r.status == "OK" && r.gap) rows.push_back(std::move(r));
  }
  if (rows.size() < 4) {
    std::fprintf(stderr,
                 "report: need at least 4 successful rows, found %zu\n",
                 rows.size());
    return 1;
  }
  std::filesystem::create_directories(out_dir);

  std::printf("column,tau,pairs\n");
  for (const auto& col : kComplexityColumns) {
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
      if (!(r.*col.field)) continue;
      xs.push_back(*(r.*col.field));
      ys.push_back(*r.gap);
    }
    std::string tau = "missing";
    if (xs.size() >= 2) {
      try {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g",
                      gapest::harness::kendall_tau(xs, ys));
        tau = buf;
      } catch (const gapest::harness::Degenerate&) {
        tau = "degenerate";
      }
    }
    std::printf("%s,%s,%zu\n", col.name, tau.c_str(), xs.size());

    // two-column scatter file, one per measure
    std::ofstream scatter(std::filesystem::path(out_dir) /
                          ("scatter_" + std::string(col.name) + "_vs_gap.txt"));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "%.17g %.17g\n", xs[i], ys[i]);
      scatter << buf;
    }
  }

  // moving-window tau of rank_f vs gap, sorted by the trace-ratio keys:
  // test split |tr(C)/tr(F) - 1| and train split tr(C)/tr(F)
  struct WindowSpec {
    const char* file;
    std::optional<double> RunRecord::* key;
    bool centered;
  };
  const WindowSpec windows[] = {
      {"window_tau_ratio_test.txt", &RunRecord::ratio_test, true},
      {"window_tau_ratio_train.txt", &RunRecord::ratio_train, false},
  };
  for (const auto& w : windows) {
    std::vector<double> key, xs, ys;
    for (const auto& r : rows) {
      if (!(r.*w.key) || !r.rank_f) continue;
      key.push_back(w.centered ? std::abs(*(r.*w.key) - 1.0) : *(r.*w.key));
      xs.push_back(*r.rank_f);
      ys.push_back(*r.gap);
    }
    std::ofstream file(std::filesystem::path(out_dir) / w.file);
    if (key.size() < 4) continue;
    try {
      for (const auto& wt : gapest::harness::moving_window_tau(key, xs, ys)) {
        if (wt.missing) continue;
        char buf[80];
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", wt.center, wt.tau);
        file << buf;
      }
    } catch (const gapest::harness::BadSpec&) {
      // too few usable rows for a window; leave the file empty
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"generalization-gap estimation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", ckpt_path, data_path, suite,
              csv_path;
  double lambda = 0.0;
  bool dump = false;
  unsigned workers = 1;
  std::optional<std::uint64_t> seed;

  auto* train = app.add_subcommand("train", "train one model from a config");
  train->add_option("--config", config_path, "key=value config file")
      ->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out", out_dir, "output directory");

  auto* estimate =
      app.add_subcommand("estimate", "print estimators for a checkpoint");
  estimate->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  estimate->add_option("--data", data_path, "dataset config file")->required();
  estimate->add_option("--lambda", lambda, "ridge strength")->required();
  estimate->add_flag("--dump", dump, "write matrix binaries");
  estimate->add_option("--out", out_dir, "dump directory");

  auto* grid = app.add_subcommand("grid", "run a full measurement grid");
  grid->add_option("--config", config_path, "grid config file")->required();
  grid->add_option("--out", out_dir, "output directory")->required();
  grid->add_option("--workers", workers, "worker count (cells run serially)");

  auto* verify = app.add_subcommand("verify", "run a property suite");
  verify
      ->add_option("--suite", suite,
                   "linalg|theorems|calibration|estimators|all|mutation")
      ->required();

  auto* report = app.add_subcommand("report", "tau tables and plot data");
  report->add_option("--csv", csv_path, "grid CSV")->required();
  report->add_option("--out", out_dir, "plot-data directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, seed, out_dir);
    if (estimate->parsed())
      return cmd_estimate(ckpt_path, data_path, lambda, dump, out_dir);
    if (grid->parsed()) return cmd_grid(config_path, out_dir, workers);
    if (verify->parsed()) return cmd_verify(suite);
    if (report->parsed()) return cmd_report(csv_path, out_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gapest::harness::BadSpec& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gapest::harness::Diverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
