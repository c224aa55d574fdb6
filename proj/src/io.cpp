#include "sfm/io.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sfm/binary_io.hpp"
#include "sfm/error.hpp"
#include "sfm/random.hpp"

namespace sfm::io {

namespace {

constexpr char kMagic[] = "SFMF";
constexpr std::uint16_t kFormatVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string where(long line, std::size_t column) {
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

}  // namespace

FeatureMatrix read_features_csv(std::istream& in) {
  std::vector<double> values;
  std::vector<int> labels;
  long width = -1;
  long line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;

    std::vector<std::string> fields;
    std::stringstream ss(text);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(trim(f));
    if (text.back() == ',') fields.emplace_back();
    if (fields.size() < 2) {
      throw ParseError(where(line_no, 1) + ": expected a label and at least one feature");
    }
    if (width < 0) width = static_cast<long>(fields.size()) - 1;
    if (static_cast<long>(fields.size()) - 1 != width) {
      throw ParseError(where(line_no, 1) + ": expected " + std::to_string(width) + " features, found " +
                       std::to_string(fields.size() - 1));
    }

    int label = 0;
    const auto& lf = fields[0];
    const auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc{} || ptr != lf.data() + lf.size() || label < 0) {
      throw ParseError(where(line_no, 1) + ": invalid class label \"" + lf + "\"");
    }
    labels.push_back(label);

    for (std::size_t j = 1; j < fields.size(); ++j) {
      const std::string& f = fields[j];
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size()) {
        throw ParseError(where(line_no, j + 1) + ": invalid number \"" + f + "\"");
      }
      if (!std::isfinite(v)) throw NonFiniteValue(where(line_no, j + 1) + ": non-finite value \"" + f + "\"");
      values.push_back(v);
    }
  }
  if (labels.empty()) throw ParseError("CSV holds no data rows");

  const auto N = static_cast<Eigen::Index>(labels.size());
  Matrix rows = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), N, width);
  return FeatureMatrix(std::move(rows), std::move(labels));
}

FeatureMatrix read_features_binary(std::istream& in) {
  using namespace binary;
  expect_magic(in, std::string_view(kMagic, 4));
  const auto version = read_uint<std::uint16_t>(in, "version");
  if (version != kFormatVersion) {
    throw ParseError("offset 4: unsupported feature file version " + std::to_string(version));
  }
  const auto N = read_uint<std::uint32_t>(in, "row count");
  const auto n = read_uint<std::uint32_t>(in, "column count");
  const auto has_labels = read_uint<std::uint8_t>(in, "label flag");
  if (N == 0 || n == 0) throw ParseError("offset 6: empty feature matrix");
  if (has_labels > 1) throw ParseError("offset 14: label flag must be 0 or 1");

  Matrix rows(N, n);
  for (std::uint32_t i = 0; i < N; ++i) {
    for (std::uint32_t j = 0; j < n; ++j) {
      const double v = read_f64(in, "feature value");
      if (!std::isfinite(v)) {
        throw NonFiniteValue("non-finite value at row " + std::to_string(i) + ", column " + std::to_string(j));
      }
      rows(i, j) = v;
    }
  }
  if (!has_labels) return FeatureMatrix(std::move(rows));
  std::vector<int> labels(N);
  for (auto& l : labels) {
    const auto v = read_uint<std::uint32_t>(in, "label");
    if (v > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) throw ParseError("label out of range");
    l = static_cast<int>(v);
  }
  return FeatureMatrix(std::move(rows), std::move(labels));
}

void write_features_csv(std::ostream& out, const FeatureMatrix& data) {
  const auto& labels = data.labels();
  out.precision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out << labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << ',' << data.rows()(i, j);
    out << '\n';
  }
}

void write_features_binary(std::ostream& out, const FeatureMatrix& data) {
  using namespace binary;
  write_magic(out, std::string_view(kMagic, 4));
  write_uint<std::uint16_t>(out, kFormatVersion);
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim()));
  write_uint<std::uint8_t>(out, data.has_labels() ? 1 : 0);
  write_matrix(out, data.rows());
  if (data.has_labels()) {
    for (int l : data.labels()) write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(l));
  }
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open feature file " + path.string());
  char head[4] = {};
  in.read(head, 4);
  const bool binary = in.gcount() == 4 && std::string_view(head, 4) == std::string_view(kMagic, 4);
  in.clear();
  in.seekg(0);
  try {
    return binary ? read_features_binary(in) : read_features_csv(in);
  } catch (const Error& e) {
    e.rethrow_with_context(path.string());
  }
  return FeatureMatrix(Matrix::Zero(1, 1));  // unreachable
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write feature file " + path.string());
  if (path.extension() == ".sfmf") {
    write_features_binary(out, data);
  } else {
    write_features_csv(out, data);
  }
  if (!out) throw ParseError("failed writing " + path.string());
}

FeatureMatrix preprocess(const FeatureMatrix& data, bool apply_tanh, double scale) {
  Matrix rows = data.rows();
  if (apply_tanh) rows = rows.array().tanh().matrix();
  rows *= scale;
  if (data.has_labels()) return FeatureMatrix(std::move(rows), data.labels());
  return FeatureMatrix(std::move(rows));
}

FeatureMatrix generate_synthetic(int classes, int per_class, int dim, double separation,
                                 std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (per_class < 4) throw ConfigError("synthetic data needs at least 4 rows per class");
  if (dim < 1) throw ConfigError("synthetic dimension must be >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw ConfigError("separation must be >= 0");

  Matrix means = Matrix::Zero(classes, dim);
  if (dim >= classes) {
    for (int c = 0; c < classes; ++c) means(c, c) = separation / std::sqrt(2.0);
  } else {
    for (int c = 0; c < classes; ++c) means(c, 0) = separation * c;
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index N = static_cast<Eigen::Index>(classes) * per_class;
  Matrix rows(N, dim);
  std::vector<int> labels(static_cast<std::size_t>(N));
  Eigen::Index r = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i, ++r) {
      for (int j = 0; j < dim; ++j) rows(r, j) = means(c, j) + normal(rng);
      labels[static_cast<std::size_t>(r)] = c;
    }
  }
  return FeatureMatrix(std::move(rows), std::move(labels));
}

}  // namespace sfm::io
