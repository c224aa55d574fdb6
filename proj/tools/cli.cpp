#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "sfm/error.hpp"
#include "sfm/experiment.hpp"
#include "sfm/federation.hpp"
#include "sfm/io.hpp"
#include "sfm/secure_inference.hpp"

namespace sfm::cli {

namespace fs = std::filesystem;
using experiment::ExperimentConfig;
using nlohmann::json;

namespace {

constexpr const char* kOutputDirEnv = "SFM_OUTPUT_DIR";
constexpr const char* kDefaultOutputDir = "sfm-output";

// Raw option values; converted to an ExperimentConfig after parsing so that
// config-file and flag values go through the same validation.
struct Options {
  std::string config_file;
  std::string output_dir;
  std::string train;
  std::string test;
  std::string assignment;
  std::string model;
  int classes = 3;
  int per_class = 200;
  int test_per_class = 100;
  int dim = 16;
  double separation = 8.0;
  int clients = 100;
  double alpha = 0.1;
  double rho = 0.0;
  long batch_size = 100;
  std::string variant = "rms";
  std::uint64_t seed = 0;
  int threads = 1;
  bool tanh = false;
  double scale = 1.0;
  bool save_model = false;

  double epsilon = 1.0;
  double delta = 1e-5;
  std::string d = "1";
  std::string smoothing = "oracle";
  bool no_compare = false;

  int bits = 16;
  std::string backend = "plaintext";

  std::string format = "csv";
  std::vector<int> bench_bits{8, 16};
  std::size_t reps = 200;
};

double parse_number(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string("invalid ") + what + ": '" + text + "'");
}

ExperimentConfig to_config(const Options& o) {
  ExperimentConfig c;
  c.train_path = o.train;
  c.test_path = o.test;
  c.assignment_path = o.assignment;
  c.synthetic = {o.classes, o.per_class, o.test_per_class, o.dim, o.separation};
  c.clients = o.clients;
  c.alpha = o.alpha;
  if (o.rho != 0.0) c.rho = o.rho;
  c.batch_size = o.batch_size;
  const auto variant = folding::parse_variant(o.variant);
  if (!variant) throw ConfigError("unknown variant '" + o.variant + "' (expected rms, product, min or max)");
  c.variant = *variant;
  c.seed = o.seed;
  c.threads = o.threads;
  c.apply_tanh = o.tanh;
  c.scale = o.scale;
  c.output_dir = o.output_dir;
  c.save_model = o.save_model;
  return c;
}

experiment::DpConfig to_dp(const Options& o) {
  experiment::DpConfig dp;
  dp.params.epsilon = o.epsilon;
  dp.params.delta = o.delta;
  if (o.d == "auto") {
    dp.auto_d = true;
  } else {
    dp.params.d = parse_number(o.d, "adjacency bound d");
  }
  if (o.smoothing == "oracle") {
    dp.mode = privacy::SmoothingMode::oracle_stop();
  } else {
    const double m = parse_number(o.smoothing, "smoothing iteration count");
    if (m < 0 || m != static_cast<int>(m)) throw ConfigError("smoothing must be 'oracle' or an iteration count >= 0");
    dp.mode = privacy::SmoothingMode::fixed(static_cast<int>(m));
  }
  dp.compare_unsmoothed = !o.no_compare;
  if (!dp.auto_d) dp.params.validate();
  return dp;
}

federation::GlobalSfmModel load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("model file not found: " + path.string());
  try {
    return federation::GlobalSfmModel::load(in);
  } catch (const Error& e) {
    e.rethrow_with_context(path.string());
  }
  throw;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void add_pipeline_options(CLI::App& app, Options& o) {
  app.add_option("--train", o.train, "Training features (CSV or SFMF); synthetic blobs when omitted");
  app.add_option("--test", o.test, "Test features (CSV or SFMF)");
  app.add_option("--assignment", o.assignment, "Client assignment CSV (row_index,client_id)");
  app.add_option("--classes", o.classes, "Synthetic: number of classes");
  app.add_option("--per-class", o.per_class, "Synthetic: training rows per class");
  app.add_option("--test-per-class", o.test_per_class, "Synthetic: test rows per class");
  app.add_option("--dim", o.dim, "Synthetic: feature dimension");
  app.add_option("--separation", o.separation, "Synthetic: class mean separation in blob standard deviations");
  app.add_option("--clients", o.clients, "Number of clients Q");
  app.add_option("--alpha", o.alpha, "Dirichlet concentration");
  app.add_option("--rho", o.rho, "Long-tail imbalance ratio (0 disables subsampling)");
  app.add_option("--batch-size", o.batch_size, "Rows per KAHM batch");
  app.add_option("--variant", o.variant, "Folding measure variant: rms, product, min or max");
  app.add_flag("--tanh", o.tanh, "Apply tanh to every feature before scaling");
  app.add_option("--scale", o.scale, "Multiply every feature by this factor");
  app.add_flag("--save-model", o.save_model, "Write model.sfmg to the output directory");
}

void print_accuracy(std::ostream& out, const char* label, double fraction) {
  out << label << ": " << experiment::format_percent(fraction) << '\n';
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return kExitConfig;
    case ErrorKind::Data: return kExitData;
    case ErrorKind::Numerical: return kExitNumerical;
  }
  return kExitNumerical;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Federated space folding classifier", "sfm"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Key-value config file; flags override its values");
  auto* output_opt = app.add_option("--output-dir,-o", o.output_dir,
                                    std::string("Output directory (default: $") + kOutputDirEnv + " or " +
                                        kDefaultOutputDir + ")");
  app.add_option("--seed", o.seed, "Seed for every random stream");
  app.add_option("--threads", o.threads, "Worker threads for batch fitting and evaluation");
  add_pipeline_options(app, o);

  auto* gen = app.add_subcommand("gen", "Write synthetic train.{csv,sfmf} and test.{csv,sfmf}");
  gen->add_option("--format", o.format, "csv or sfmf")->check(CLI::IsMember({"csv", "sfmf"}));

  auto* partition = app.add_subcommand("partition", "Write a Dirichlet client assignment");

  auto* train = app.add_subcommand("train", "Build the global model, save it and report test accuracy");

  auto* eval = app.add_subcommand("eval", "Report test accuracy of a saved or freshly built model");
  eval->add_option("--model", o.model, "Saved model (model.sfmg); built from the data when omitted");

  auto* dp_eval = app.add_subcommand("dp-eval", "Differentially private build with kernel smoothing");
  dp_eval->add_option("--epsilon", o.epsilon, "Privacy parameter epsilon");
  dp_eval->add_option("--delta", o.delta, "Privacy parameter delta");
  dp_eval->add_option("--d", o.d, "Adjacency bound d, or 'auto' for the largest feature range");
  dp_eval->add_option("--smoothing", o.smoothing, "'oracle' or a fixed iteration count");
  dp_eval->add_flag("--no-compare", o.no_compare, "Skip the unsmoothed comparison build");

  auto* fhe_eval = app.add_subcommand("fhe-eval", "Encrypted-domain classification of the test set");
  fhe_eval->add_option("--model", o.model, "Saved model (model.sfmg); built from the data when omitted");
  fhe_eval->add_option("--bits", o.bits, "Fixed-point precision p");
  fhe_eval->add_option("--backend", o.backend, "Cipher backend")->check(CLI::IsMember({"plaintext"}));

  auto* bench = app.add_subcommand("bench", "Per-gate latency statistics to bench.csv");
  bench->add_option("--bits", o.bench_bits, "Precisions to benchmark");
  bench->add_option("--reps", o.reps, "Gate evaluations per precision");
  bench->add_option("--backend", o.backend, "Cipher backend")->check(CLI::IsMember({"plaintext"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (output_opt->count() == 0) {
      const char* env = std::getenv(kOutputDirEnv);
      o.output_dir = env && *env ? env : kDefaultOutputDir;
    }
    const fs::path out_dir = o.output_dir;

    if (gen->parsed()) {
      ExperimentConfig config = to_config(o);
      config.train_path.clear();
      const auto [train_set, test_set] = experiment::load_datasets(config);
      fs::create_directories(out_dir);
      const std::string ext = o.format == "sfmf" ? ".sfmf" : ".csv";
      io::save_features(out_dir / ("train" + ext), train_set);
      io::save_features(out_dir / ("test" + ext), test_set);
      out << "wrote " << (out_dir / ("train" + ext)).string() << " (" << train_set.size() << " rows) and "
          << (out_dir / ("test" + ext)).string() << " (" << test_set.size() << " rows)\n";
      return kExitOk;
    }

    if (partition->parsed()) {
      ExperimentConfig config = to_config(o);
      config.test_path = config.test_path.empty() ? config.train_path : config.test_path;
      config.validate();
      auto [train_set, test_set] = experiment::load_datasets(config);
      const int C = train_set.num_classes();
      const federation::PartitionSpec spec{config.clients, config.alpha, std::nullopt, config.seed};
      const auto assignment = federation::dirichlet_partition(train_set.labels(), C, spec);
      fs::create_directories(out_dir);
      std::ofstream file(out_dir / "assignment.csv");
      federation::write_assignment_csv(file, assignment);
      out << "wrote " << (out_dir / "assignment.csv").string() << " (" << assignment.size() << " rows, "
          << config.clients << " clients)\n";
      return kExitOk;
    }

    if (bench->parsed()) {
      fs::create_directories(out_dir);
      std::ofstream csv(out_dir / "bench.csv");
      csv << "gate,p,mean_ms,p95_ms\n";
      for (int bits : o.bench_bits) {
        secure::PlaintextBackend backend(bits);
        for (const auto& s : secure::benchmark_gates(backend, o.reps, o.seed)) {
          csv << s.gate << ',' << s.bits << ',' << s.mean_ms << ',' << s.p95_ms << '\n';
          out << s.gate << " p=" << s.bits << " mean_ms=" << s.mean_ms << " p95_ms=" << s.p95_ms << '\n';
        }
      }
      out << "wrote " << (out_dir / "bench.csv").string() << '\n';
      return kExitOk;
    }

    const bool with_model = (eval->parsed() || fhe_eval->parsed()) && !o.model.empty();
    if (with_model) {
      // Evaluate a saved model on the configured test set.
      ExperimentConfig config = to_config(o);
      if (!config.train_path.empty() && config.test_path.empty()) config.test_path = config.train_path;
      config.validate();
      const auto model = load_model(o.model);
      const auto test_set = experiment::load_datasets(config).second;
      json metrics = experiment::evaluation_metrics(model, test_set, config.threads);
      print_accuracy(out, "accuracy", metrics["accuracy"].get<double>());
      if (fhe_eval->parsed()) {
        const auto ev = federation::evaluate(model, test_set, config.threads);
        const json fhe = experiment::fhe_metrics(model, test_set, {o.bits, o.backend}, ev.predictions);
        print_accuracy(out, "secure accuracy", fhe["secure_accuracy"].get<double>());
        print_accuracy(out, "agreement", fhe["agreement"].get<double>());
        metrics["fhe"] = fhe;
      }
      fs::create_directories(out_dir);
      write_json(out_dir / "metrics.json", metrics);
      return kExitOk;
    }

    ExperimentConfig config = to_config(o);
    if (train->parsed()) config.save_model = true;
    if (dp_eval->parsed()) config.dp = to_dp(o);
    if (fhe_eval->parsed()) config.fhe = experiment::FheConfig{o.bits, o.backend};
    const auto result = experiment::run_experiment(config);
    const auto& m = result.metrics;
    print_accuracy(out, "accuracy", m["accuracy"].get<double>());
    if (config.dp) {
      const auto& p = m["privacy"];
      if (p.contains("unsmoothed_accuracy")) {
        print_accuracy(out, "unsmoothed accuracy", p["unsmoothed_accuracy"].get<double>());
      }
      out << "privacy: epsilon=" << p["epsilon"] << " delta=" << p["delta"] << " d=" << p["d"]
          << " batches=" << p["batches"].size() << '\n';
    }
    if (config.fhe) {
      print_accuracy(out, "secure accuracy", m["fhe"]["secure_accuracy"].get<double>());
      print_accuracy(out, "agreement", m["fhe"]["agreement"].get<double>());
    }
    out << "metrics: " << (out_dir / "metrics.json").string() << '\n';
    if (config.save_model) out << "model: " << (out_dir / "model.sfmg").string() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

}  // namespace sfm::cli
