#include "sfm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sfm/error.hpp"
#include "sfm/io.hpp"
#include "sfm/random.hpp"
#include "sfm/secure_inference.hpp"

namespace sfm::experiment {

using nlohmann::json;

namespace {

constexpr const char* kSchemaId = "sfm-metrics/1";

class StageClock {
 public:
  explicit StageClock(std::ostream* log) : log_(log) {}

  template <typename F>
  auto run(const std::string& stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      timings_[stage] = ms;
      if (log_) *log_ << json{{"event", "stage"}, {"stage", stage}, {"elapsed_ms", ms}}.dump() << '\n';
    };
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      finish();
    } else {
      auto out = body();
      finish();
      return out;
    }
  }

  void event(json e) {
    if (log_) *log_ << e.dump() << '\n';
  }

  const json& timings() const { return timings_; }

 private:
  std::ostream* log_;
  json timings_ = json::object();
};

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

const char* mode_name(const privacy::SmoothingMode& m) {
  return m.kind == privacy::SmoothingMode::Kind::OracleStop ? "oracle-stop" : "fixed";
}

json config_echo(const ExperimentConfig& c) {
  json j;
  j["train_path"] = c.train_path.string();
  j["test_path"] = c.test_path.string();
  j["assignment_path"] = c.assignment_path.string();
  if (c.train_path.empty()) {
    j["synthetic"] = {{"classes", c.synthetic.classes},
                      {"per_class", c.synthetic.per_class},
                      {"test_per_class", c.synthetic.test_per_class},
                      {"dim", c.synthetic.dim},
                      {"separation", c.synthetic.separation}};
  }
  j["clients"] = c.clients;
  j["alpha"] = c.alpha;
  j["rho"] = c.rho ? json(*c.rho) : json(nullptr);
  j["batch_size"] = c.batch_size;
  j["variant"] = std::string(folding::to_string(c.variant));
  j["seed"] = c.seed;
  j["tanh"] = c.apply_tanh;
  j["scale"] = c.scale;
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (clients < 1) throw ConfigError("clients must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (rho && !(*rho >= 1.0)) throw ConfigError("rho must be >= 1");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!std::isfinite(scale) || scale == 0.0) throw ConfigError("scale must be finite and nonzero");
  if (!train_path.empty()) {
    if (!std::filesystem::exists(train_path)) throw ConfigError("training file not found: " + train_path.string());
    if (test_path.empty()) throw ConfigError("a test file is required with a training file");
    if (!std::filesystem::exists(test_path)) throw ConfigError("test file not found: " + test_path.string());
  }
  if (!assignment_path.empty() && !std::filesystem::exists(assignment_path)) {
    throw ConfigError("assignment file not found: " + assignment_path.string());
  }
  if (dp) {
    if (!dp->auto_d) dp->params.validate();
    if (dp->mode.kind == privacy::SmoothingMode::Kind::FixedIterations && dp->mode.iterations < 0) {
      throw ConfigError("fixed smoothing iterations must be >= 0");
    }
  }
  if (fhe) {
    if (fhe->bits < 1 || fhe->bits > 32) throw ConfigError("fhe bit width must lie in [1, 32]");
    if (fhe->backend != "plaintext") throw ConfigError("unknown cipher backend: " + fhe->backend);
  }
}

std::pair<FeatureMatrix, FeatureMatrix> load_datasets(const ExperimentConfig& config) {
  auto [train, test] = [&]() -> std::pair<FeatureMatrix, FeatureMatrix> {
    if (config.train_path.empty()) {
      const Rng root(config.seed);
      const auto& s = config.synthetic;
      return {io::generate_synthetic(s.classes, s.per_class, s.dim, s.separation, root.derive({0x7a1})()),
              io::generate_synthetic(s.classes, s.test_per_class, s.dim, s.separation, root.derive({0x7e5})())};
    }
    return {io::load_features(config.train_path), io::load_features(config.test_path)};
  }();
  if (!train.has_labels() || !test.has_labels()) throw DimensionError("training and test files need labels");
  if (train.dim() != test.dim()) throw DimensionError("training and test dimensions differ");
  if (config.apply_tanh || config.scale != 1.0) {
    train = io::preprocess(train, config.apply_tanh, config.scale);
    test = io::preprocess(test, config.apply_tanh, config.scale);
  }
  return {std::move(train), std::move(test)};
}

json evaluation_metrics(const federation::GlobalSfmModel& model, const FeatureMatrix& test, int threads) {
  const auto ev = federation::evaluate(model, test, threads);
  json j;
  j["accuracy"] = ev.accuracy;
  j["accuracy_percent"] = format_percent(ev.accuracy);
  json per_class = json::array();
  for (double a : ev.per_class_accuracy) per_class.push_back(nullable(a));
  j["per_class_accuracy"] = per_class;
  j["confusion"] = ev.confusion;
  j["predictions_digest"] = [&] {
    // FNV-1a over the predictions, for cheap determinism checks.
    std::uint64_t h = 1469598103934665603ULL;
    for (int p : ev.predictions) h = (h ^ static_cast<std::uint64_t>(p)) * 1099511628211ULL;
    std::ostringstream s;
    s << std::hex << h;
    return s.str();
  }();
  return j;
}

json fhe_metrics(const federation::GlobalSfmModel& model, const FeatureMatrix& test, const FheConfig& fhe,
                 std::span<const int> clear_predictions) {
  if (fhe.backend != "plaintext") throw ConfigError("unknown cipher backend: " + fhe.backend);
  secure::PlaintextBackend plain(fhe.bits);
  secure::CountingBackend counter(plain);
  const auto& labels = test.labels();
  long agree = 0;
  long correct = 0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const int pred = secure::secure_classify(model, test.rows().row(i).transpose(), counter);
    agree += pred == clear_predictions[static_cast<std::size_t>(i)];
    correct += pred == labels[static_cast<std::size_t>(i)];
  }
  const auto rows = static_cast<double>(test.size());
  const long C = model.num_classes();
  const long Q = model.num_clients();
  json j;
  j["bits"] = fhe.bits;
  j["backend"] = counter.name();
  j["agreement"] = static_cast<double>(agree) / rows;
  j["secure_accuracy"] = static_cast<double>(correct) / rows;
  j["secure_accuracy_percent"] = format_percent(static_cast<double>(correct) / rows);
  j["gates"] = {{"min_per_query", static_cast<double>(counter.min_count()) / rows},
                {"eq_per_query", static_cast<double>(counter.eq_count()) / rows},
                {"expected_min", C * (Q - 1) + (C - 1)},
                {"expected_eq", C}};
  return j;
}

json privacy_manifest(const privacy::PrivateBatchBuilder& builder) {
  const auto& p = builder.params();
  json j;
  j["epsilon"] = p.epsilon;
  j["delta"] = p.delta;
  j["d"] = p.d;
  j["mode"] = mode_name(builder.mode());
  j["fixed_iterations"] = builder.mode().kind == privacy::SmoothingMode::Kind::FixedIterations
                              ? json(builder.mode().iterations)
                              : json(nullptr);
  json batches = json::array();
  for (const auto& r : builder.manifest()) {
    batches.push_back({{"class", r.id.class_id},
                       {"client", r.id.client_id},
                       {"batch", r.id.batch},
                       {"rows", r.rows},
                       {"m_star", r.m_star},
                       {"perturbations", r.perturbations}});
  }
  j["batches"] = batches;
  return j;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::ofstream log_file;
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    log_file.open(config.output_dir / "log.jsonl");
    if (!log_file) throw ConfigError("cannot write to output directory " + config.output_dir.string());
  }
  StageClock clock(config.output_dir.empty() ? nullptr : &log_file);
  clock.event({{"event", "start"}, {"config", config_echo(config)}});

  auto [train, test] = clock.run("load", [&] { return load_datasets(config); });
  if (config.rho) {
    train = clock.run("subsample", [&] { return federation::longtail_subsample(train, *config.rho, config.seed); });
  }
  const int C = std::max(train.num_classes(), test.num_classes());

  int Q = config.clients;
  const auto assignment = clock.run("partition", [&] {
    if (!config.assignment_path.empty()) {
      std::ifstream in(config.assignment_path);
      auto a = federation::read_assignment_csv(in, train.size());
      Q = *std::max_element(a.begin(), a.end()) + 1;
      return a;
    }
    federation::PartitionSpec spec{config.clients, config.alpha, config.rho, config.seed};
    return federation::dirichlet_partition(train.labels(), C, spec);
  });

  federation::BuildOptions options;
  options.batch_size = config.batch_size;
  options.variant = config.variant;
  options.threads = config.threads;

  json metrics;
  metrics["schema"] = kSchemaId;
  metrics["config"] = config_echo(config);
  metrics["privacy"] = nullptr;
  metrics["fhe"] = nullptr;

  std::optional<privacy::PrivateBatchBuilder> private_builder;
  std::optional<DpConfig> dp = config.dp;
  if (dp) {
    if (dp->auto_d) dp->params.d = privacy::suggest_adjacency_bound(train.rows());
    private_builder.emplace(dp->params, dp->mode, config.seed);
    options.batch_builder = private_builder->as_builder();
  }

  auto model = clock.run("build", [&] { return federation::build_global_model(train, assignment, C, Q, options); });
  const auto ev = clock.run("evaluate", [&] { return federation::evaluate(model, test, config.threads); });
  json eval = evaluation_metrics(model, test, config.threads);
  for (auto& [k, v] : eval.items()) metrics[k] = v;

  metrics["data"] = {{"train_rows", train.size()}, {"test_rows", test.size()}, {"dim", train.dim()},
                     {"classes", C}, {"clients", Q}};
  std::size_t missing = 0;
  for (int c = 0; c < C; ++c)
    for (int q = 0; q < Q; ++q) missing += model.cell(c, q).is_missing();
  metrics["model"] = {{"batches", model.batch_count()}, {"missing_cells", missing}};

  if (private_builder) {
    json manifest = privacy_manifest(*private_builder);
    for (const auto& b : manifest["batches"]) {
      if (b["perturbations"] != 1) throw Error(ErrorKind::Numerical, "batch perturbed more than once");
    }
    if (dp->compare_unsmoothed && !(dp->mode.kind == privacy::SmoothingMode::Kind::FixedIterations &&
                                    dp->mode.iterations == 0)) {
      privacy::PrivateBatchBuilder plain(dp->params, privacy::SmoothingMode::fixed(0), config.seed);
      auto unsmoothed_options = options;
      unsmoothed_options.batch_builder = plain.as_builder();
      const auto unsmoothed = clock.run("build_unsmoothed", [&] {
        return federation::build_global_model(train, assignment, C, Q, unsmoothed_options);
      });
      const double acc = federation::evaluate(unsmoothed, test, config.threads).accuracy;
      manifest["unsmoothed_accuracy"] = acc;
      manifest["unsmoothed_accuracy_percent"] = format_percent(acc);
    }
    metrics["privacy"] = manifest;
  }

  if (config.fhe) {
    metrics["fhe"] = clock.run("fhe", [&] { return fhe_metrics(model, test, *config.fhe, ev.predictions); });
  }
  metrics["timings_ms"] = clock.timings();

  if (!config.output_dir.empty()) {
    std::ofstream out(config.output_dir / "metrics.json");
    out << metrics.dump(2) << '\n';
    if (config.save_model) {
      std::ofstream model_out(config.output_dir / "model.sfmg", std::ios::binary);
      model.save(model_out);
    }
    clock.event({{"event", "done"}, {"accuracy", ev.accuracy}});
  }
  return {std::move(metrics), std::move(model)};
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

json strip_timings(json metrics) {
  metrics.erase("timings_ms");
  return metrics;
}

std::vector<std::string> validate_metrics(const json& m) {
  std::vector<std::string> errors;
  auto need = [&](const json& obj, const char* key, auto&& check, const char* type, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) {
      errors.push_back(path + key + ": missing");
      return;
    }
    if (!check(obj.at(key))) errors.push_back(path + key + ": expected " + type);
  };
  auto is_num = [](const json& v) { return v.is_number(); };
  auto is_str = [](const json& v) { return v.is_string(); };
  auto is_obj = [](const json& v) { return v.is_object(); };
  auto is_obj_or_null = [](const json& v) { return v.is_object() || v.is_null(); };
  auto is_fraction = [](const json& v) { return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0; };

  if (!m.is_object()) return {"metrics: expected object"};
  need(m, "schema", [](const json& v) { return v == kSchemaId; }, "\"sfm-metrics/1\"", "");
  need(m, "config", is_obj, "object", "");
  need(m, "data", is_obj, "object", "");
  need(m, "model", is_obj, "object", "");
  need(m, "accuracy", is_fraction, "number in [0, 1]", "");
  need(m, "accuracy_percent", is_str, "string", "");
  need(m, "per_class_accuracy", [](const json& v) {
    return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) {
      return e.is_null() || (e.is_number() && e.get<double>() >= 0.0 && e.get<double>() <= 1.0);
    });
  }, "array of fractions or nulls", "");
  need(m, "confusion", [](const json& v) {
    if (!v.is_array()) return false;
    for (const auto& row : v) {
      if (!row.is_array()) return false;
      for (const auto& e : row) if (!e.is_number_integer() || e.get<long>() < 0) return false;
    }
    return true;
  }, "matrix of non-negative integers", "");
  need(m, "privacy", is_obj_or_null, "object or null", "");
  need(m, "fhe", is_obj_or_null, "object or null", "");
  need(m, "timings_ms", is_obj, "object", "");
  if (m.contains("data") && m["data"].is_object()) {
    for (const char* k : {"train_rows", "test_rows", "dim", "classes", "clients"}) need(m["data"], k, is_num, "number", "data.");
  }
  if (m.contains("privacy") && m["privacy"].is_object()) {
    const auto& p = m["privacy"];
    for (const char* k : {"epsilon", "delta", "d"}) need(p, k, is_num, "number", "privacy.");
    need(p, "mode", is_str, "string", "privacy.");
    need(p, "batches", [](const json& v) {
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& b) {
        return b.is_object() && b.contains("m_star") && b["m_star"].is_number_integer() &&
               b.contains("perturbations") && b["perturbations"] == 1;
      });
    }, "array of batch records with m_star and a single perturbation", "privacy.");
  }
  if (m.contains("fhe") && m["fhe"].is_object()) {
    const auto& f = m["fhe"];
    need(f, "bits", is_num, "number", "fhe.");
    need(f, "agreement", is_fraction, "number in [0, 1]", "fhe.");
    need(f, "secure_accuracy", is_fraction, "number in [0, 1]", "fhe.");
    need(f, "gates", is_obj, "object", "fhe.");
  }
  return errors;
}

}  // namespace sfm::experiment
