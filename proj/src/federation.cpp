#include "sfm/federation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "sfm/binary_io.hpp"
#include "sfm/error.hpp"
#include "sfm/parallel.hpp"
#include "sfm/random.hpp"

namespace sfm::federation {

namespace {

constexpr char kMagic[] = "SFMG";
constexpr std::uint16_t kFormatVersion = 1;

// Shares are drawn per class from a stream keyed by the class id, so adding
// rows of one class never changes another class's split.
std::vector<double> dirichlet_shares(int clients, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> shares(static_cast<std::size_t>(clients));
  double total = 0.0;
  for (auto& s : shares) {
    s = gamma(rng);
    total += s;
  }
  if (!(total > 0.0)) {
    // Every draw underflowed (tiny alpha): all mass on one client.
    std::fill(shares.begin(), shares.end(), 0.0);
    shares[static_cast<std::size_t>(rng.uniform_open() * clients)] = 1.0;
    return shares;
  }
  for (auto& s : shares) s /= total;
  return shares;
}

}  // namespace

void PartitionSpec::validate() const {
  if (clients < 1) throw ConfigError("number of clients must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("Dirichlet alpha must be > 0");
  if (rho && !(*rho >= 1.0)) throw ConfigError("imbalance ratio rho must be >= 1");
}

std::vector<int> dirichlet_partition(std::span<const int> labels, int num_classes,
                                     const PartitionSpec& spec) {
  spec.validate();
  std::vector<int> assignment(labels.size(), 0);
  if (spec.clients == 1) return assignment;

  const Rng root(spec.seed);
  std::vector<std::vector<double>> cumulative(static_cast<std::size_t>(num_classes));
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    Rng rng = root.derive({0xd1c1, static_cast<std::uint64_t>(c)});
    auto shares = dirichlet_shares(spec.clients, spec.alpha, rng);
    std::partial_sum(shares.begin(), shares.end(), shares.begin());
    cumulative[static_cast<std::size_t>(c)] = std::move(shares);
    streams.push_back(rng);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= num_classes) {
      throw DimensionError("label " + std::to_string(c) + " at row " + std::to_string(i) +
                           " outside [0, " + std::to_string(num_classes) + ")");
    }
    const auto& cum = cumulative[static_cast<std::size_t>(c)];
    const double u = streams[static_cast<std::size_t>(c)].uniform_open() * cum.back();
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    assignment[i] = static_cast<int>(std::min<std::ptrdiff_t>(it - cum.begin(), spec.clients - 1));
  }
  return assignment;
}

FeatureMatrix longtail_subsample(const FeatureMatrix& data, double rho, std::uint64_t seed) {
  if (!(rho >= 1.0)) throw ConfigError("imbalance ratio rho must be >= 1");
  const int C = data.num_classes();
  const auto groups = rows_by_class(data, C);
  std::size_t n_max = 0;
  for (int c = 0; c < C; ++c) {
    if (groups[static_cast<std::size_t>(c)].empty()) {
      throw DimensionError("class " + std::to_string(c) + " has no rows to subsample");
    }
    n_max = std::max(n_max, groups[static_cast<std::size_t>(c)].size());
  }
  if (rho == 1.0 || C < 2) return data;

  const Rng root(seed);
  std::vector<Eigen::Index> kept;
  for (int c = 0; c < C; ++c) {
    auto idx = groups[static_cast<std::size_t>(c)];
    const double exact = static_cast<double>(n_max) * std::pow(rho, -static_cast<double>(c) / (C - 1));
    // Guard against products like 50.000000000001 rounding up.
    const auto target = static_cast<std::size_t>(std::ceil(exact - 1e-9));
    const std::size_t keep = std::min(idx.size(), std::max<std::size_t>(target, 1));
    Rng rng = root.derive({0x10a9, static_cast<std::uint64_t>(c)});
    // Partial Fisher-Yates: the first `keep` slots become a uniform sample.
    for (std::size_t i = 0; i < keep; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform_open() * static_cast<double>(idx.size() - i));
      std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
    }
    kept.insert(kept.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(kept.begin(), kept.end());
  return data.select(kept);
}

GlobalSfmModel::GlobalSfmModel(int classes, int clients, Eigen::Index dim, folding::Variant variant,
                               std::vector<folding::FoldingEvaluator> grid)
    : classes_(classes), clients_(clients), dim_(dim), variant_(variant), grid_(std::move(grid)) {
  if (classes_ < 1 || clients_ < 1) throw DimensionError("model needs >= 1 class and client");
  if (grid_.size() != static_cast<std::size_t>(classes_) * static_cast<std::size_t>(clients_)) {
    throw DimensionError("evaluator grid is incomplete");
  }
  for (int c = 0; c < classes_; ++c) {
    for (int q = 0; q < clients_; ++q) {
      const auto& ev = cell(c, q);
      if (ev.class_id() != c || ev.client_id() != q) {
        throw DimensionError("evaluator grid is out of order at (" + std::to_string(c) + ", " +
                             std::to_string(q) + ")");
      }
      if (ev.variant() != variant_) throw DimensionError("evaluators disagree on the variant");
      for (const auto& b : ev.batches()) {
        if (b.dim() != dim_) throw DimensionError("batch dimension does not match model");
      }
    }
  }
}

const folding::FoldingEvaluator& GlobalSfmModel::cell(int class_id, int client_id) const {
  return grid_.at(static_cast<std::size_t>(class_id) * static_cast<std::size_t>(clients_) +
                  static_cast<std::size_t>(client_id));
}

void GlobalSfmModel::check_dim(const Vector& x) const {
  if (x.size() != dim_) {
    throw DimensionError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(dim_));
  }
}

Matrix GlobalSfmModel::local_measures(const Vector& x) const {
  check_dim(x);
  Matrix out(classes_, clients_);
  for (int c = 0; c < classes_; ++c)
    for (int q = 0; q < clients_; ++q) out(c, q) = cell(c, q).evaluate(x);
  return out;
}

Vector GlobalSfmModel::global_measures(const Vector& x) const {
  check_dim(x);
  Vector out(classes_);
  for (int c = 0; c < classes_; ++c) {
    out(c) = folding::global_folding(
        std::span(grid_).subspan(static_cast<std::size_t>(c) * static_cast<std::size_t>(clients_),
                                 static_cast<std::size_t>(clients_)),
        x);
  }
  return out;
}

std::vector<int> GlobalSfmModel::feature_map(const Vector& x) const {
  return argmin_indicator(global_measures(x));
}

int GlobalSfmModel::classify(const Vector& x) const { return lowest_set_index(feature_map(x)); }

std::size_t GlobalSfmModel::batch_count() const {
  std::size_t total = 0;
  for (const auto& ev : grid_) total += ev.batches().size();
  return total;
}

std::vector<int> argmin_indicator(const Vector& measures) {
  const double best = measures.minCoeff();
  std::vector<int> out(static_cast<std::size_t>(measures.size()));
  for (Eigen::Index c = 0; c < measures.size(); ++c) out[static_cast<std::size_t>(c)] = measures(c) == best;
  return out;
}

int lowest_set_index(std::span<const int> indicator) {
  for (std::size_t c = 0; c < indicator.size(); ++c)
    if (indicator[c] != 0) return static_cast<int>(c);
  return 0;
}

GlobalSfmModel build_global_model(const FeatureMatrix& train, std::span<const int> assignment,
                                  int num_classes, int num_clients, const BuildOptions& options) {
  if (static_cast<Eigen::Index>(assignment.size()) != train.size()) {
    throw DimensionError("assignment covers " + std::to_string(assignment.size()) + " rows, data has " +
                         std::to_string(train.size()));
  }
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] < 0 || assignment[i] >= num_clients) {
      throw DimensionError("row " + std::to_string(i) + " assigned to unknown client " +
                           std::to_string(assignment[i]));
    }
  }
  if (options.batch_size < 2) throw ConfigError("batch size must be >= 2");

  const auto& labels = train.labels();
  train.check_labels(num_classes);
  const auto C = static_cast<std::size_t>(num_classes);
  const auto Q = static_cast<std::size_t>(num_clients);
  std::vector<std::vector<Eigen::Index>> cell_rows(C * Q);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cell_rows[static_cast<std::size_t>(labels[i]) * Q + static_cast<std::size_t>(assignment[i])]
        .push_back(static_cast<Eigen::Index>(i));
  }

  // Flatten to batch jobs so a single large cell does not serialize the build.
  struct Job {
    std::size_t cell;
    BatchId id;
    Eigen::Index start;
    Eigen::Index size;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> batches_per_cell(C * Q, 0);
  for (std::size_t cell = 0; cell < C * Q; ++cell) {
    const auto count = static_cast<Eigen::Index>(cell_rows[cell].size());
    if (count == 0) continue;
    Eigen::Index start = 0;
    int b = 0;
    for (auto s : folding::merged_batch_sizes(count, options.batch_size)) {
      jobs.push_back({cell, BatchId{static_cast<int>(cell / Q), static_cast<int>(cell % Q), b++}, start, s});
      start += s;
    }
    batches_per_cell[cell] = static_cast<std::size_t>(b);
  }

  const Matrix& X = train.rows();
  std::vector<std::optional<folding::HullModel>> built(jobs.size());
  parallel_for(jobs.size(), options.threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    Matrix block(job.size, X.cols());
    for (Eigen::Index r = 0; r < job.size; ++r) {
      block.row(r) = X.row(cell_rows[job.cell][static_cast<std::size_t>(job.start + r)]);
    }
    try {
      built[j] = options.batch_builder ? options.batch_builder(block, job.id)
                                       : folding::HullModel::fit(block);
    } catch (const Error& e) {
      e.rethrow_with_context("class " + std::to_string(job.id.class_id) + ", client " +
                             std::to_string(job.id.client_id) + ", batch " +
                             std::to_string(job.id.batch));
    }
  });

  std::vector<folding::FoldingEvaluator> grid;
  grid.reserve(C * Q);
  std::size_t j = 0;
  for (std::size_t cell = 0; cell < C * Q; ++cell) {
    const int c = static_cast<int>(cell / Q);
    const int q = static_cast<int>(cell % Q);
    if (batches_per_cell[cell] == 0) {
      grid.push_back(folding::FoldingEvaluator::missing(c, q, options.variant));
      continue;
    }
    std::vector<folding::HullModel> batches;
    for (std::size_t b = 0; b < batches_per_cell[cell]; ++b) batches.push_back(std::move(*built[j++]));
    grid.emplace_back(c, q, std::move(batches), options.variant);
  }
  return GlobalSfmModel(num_classes, num_clients, X.cols(), options.variant, std::move(grid));
}

Evaluation evaluate(const GlobalSfmModel& model, const Matrix& rows, std::span<const int> labels,
                    int threads) {
  if (rows.rows() == 0) throw EmptyTestSet("test set has no rows");
  if (static_cast<Eigen::Index>(labels.size()) != rows.rows()) {
    throw DimensionError("test labels do not match test rows");
  }
  const int C = model.num_classes();
  Evaluation ev;
  ev.predictions.resize(labels.size());
  parallel_for(labels.size(), threads, [&](std::size_t i) {
    ev.predictions[i] = model.classify(rows.row(static_cast<Eigen::Index>(i)).transpose());
  });

  int label_classes = C;
  for (int l : labels) label_classes = std::max(label_classes, l + 1);
  ev.confusion.assign(static_cast<std::size_t>(label_classes), std::vector<long>(static_cast<std::size_t>(C), 0));
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw DimensionError("negative test label");
    ++ev.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(ev.predictions[i])];
    correct += labels[i] == ev.predictions[i];
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < ev.confusion.size(); ++c) {
    long total = 0;
    for (long v : ev.confusion[c]) total += v;
    const long hit = c < static_cast<std::size_t>(C) ? ev.confusion[c][c] : 0;
    ev.per_class_accuracy.push_back(total == 0 ? std::nan("")
                                               : static_cast<double>(hit) / static_cast<double>(total));
  }
  return ev;
}

Evaluation evaluate(const GlobalSfmModel& model, const FeatureMatrix& test, int threads) {
  return evaluate(model, test.rows(), test.labels(), threads);
}

double evaluate_accuracy(const GlobalSfmModel& model, const FeatureMatrix& test) {
  return evaluate(model, test).accuracy;
}

std::vector<int> read_assignment_csv(std::istream& in, Eigen::Index rows) {
  std::vector<int> assignment(static_cast<std::size_t>(rows), -1);
  std::string line;
  long line_no = 0;
  Eigen::Index seen = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#' || (line_no == 1 && !std::isdigit(static_cast<unsigned char>(line[first])))) {
      continue;
    }
    std::istringstream fields(line);
    long long row = -1;
    long long client = -1;
    char comma = 0;
    if (!(fields >> row >> comma >> client) || comma != ',') {
      throw ParseError("assignment CSV line " + std::to_string(line_no) + ": expected row_index,client_id");
    }
    fields >> std::ws;
    if (!fields.eof()) {
      throw ParseError("assignment CSV line " + std::to_string(line_no) + ": trailing characters");
    }
    if (row < 0 || row >= rows) {
      throw ParseError("assignment CSV line " + std::to_string(line_no) + ": row index " +
                       std::to_string(row) + " out of range");
    }
    if (client < 0 || client > std::numeric_limits<int>::max()) {
      throw ParseError("assignment CSV line " + std::to_string(line_no) + ": invalid client id");
    }
    auto& slot = assignment[static_cast<std::size_t>(row)];
    if (slot != -1) {
      throw ParseError("assignment CSV line " + std::to_string(line_no) + ": row " +
                       std::to_string(row) + " assigned twice");
    }
    slot = static_cast<int>(client);
    ++seen;
  }
  if (seen != rows) {
    throw ParseError("assignment CSV covers " + std::to_string(seen) + " of " + std::to_string(rows) +
                     " rows");
  }
  return assignment;
}

void write_assignment_csv(std::ostream& out, std::span<const int> assignment) {
  out << "# row_index,client_id\n";
  for (std::size_t i = 0; i < assignment.size(); ++i) out << i << ',' << assignment[i] << '\n';
}

void GlobalSfmModel::save(std::ostream& out) const {
  using namespace binary;
  write_magic(out, std::string_view(kMagic, 4));
  write_uint<std::uint16_t>(out, kFormatVersion);
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(classes_));
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(clients_));
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  write_uint<std::uint8_t>(out, static_cast<std::uint8_t>(variant_));
  for (const auto& ev : grid_) {
    write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(ev.batches().size()));
    for (const auto& b : ev.batches()) {
      if (const auto* m = b.kahm()) {
        write_uint<std::uint8_t>(out, 0);
        m->save(out);
      } else {
        write_uint<std::uint8_t>(out, 1);
        write_matrix(out, b.point()->transpose());
      }
    }
  }
}

GlobalSfmModel GlobalSfmModel::load(std::istream& in) {
  using namespace binary;
  expect_magic(in, std::string_view(kMagic, 4));
  const auto version = read_uint<std::uint16_t>(in, "model version");
  if (version != kFormatVersion) throw ParseError("unsupported model version " + std::to_string(version));
  const auto C = static_cast<int>(read_uint<std::uint32_t>(in, "class count"));
  const auto Q = static_cast<int>(read_uint<std::uint32_t>(in, "client count"));
  const auto n = static_cast<Eigen::Index>(read_uint<std::uint32_t>(in, "dimension"));
  const auto variant_tag = read_uint<std::uint8_t>(in, "variant");
  if (variant_tag > static_cast<std::uint8_t>(folding::Variant::Max)) throw ParseError("unknown variant tag");
  const auto variant = static_cast<folding::Variant>(variant_tag);
  if (C < 1 || Q < 1 || n < 1) throw ParseError("inconsistent model header");

  std::vector<folding::FoldingEvaluator> grid;
  for (int c = 0; c < C; ++c) {
    for (int q = 0; q < Q; ++q) {
      const auto count = read_uint<std::uint32_t>(in, "batch count");
      if (count == 0) {
        grid.push_back(folding::FoldingEvaluator::missing(c, q, variant));
        continue;
      }
      std::vector<folding::HullModel> batches;
      for (std::uint32_t b = 0; b < count; ++b) {
        const auto kind = read_uint<std::uint8_t>(in, "batch kind");
        if (kind == 0) {
          batches.emplace_back(kahm::KahmModel::load(in));
        } else if (kind == 1) {
          Matrix row(1, n);
          read_matrix(in, row, "single-point batch");
          batches.push_back(folding::HullModel::single_point(row.row(0).transpose()));
        } else {
          throw ParseError("unknown batch kind " + std::to_string(kind));
        }
      }
      grid.emplace_back(c, q, std::move(batches), variant);
    }
  }
  return GlobalSfmModel(C, Q, n, variant, std::move(grid));
}

}  // namespace sfm::federation
