#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "sfm/feature_matrix.hpp"

// Feature ingestion. Two encodings:
//   CSV     label,x1,...,xn per line; optional '#' header/comment lines.
//   binary  "SFMF", u16 version, u32 N, u32 n, u8 has_labels, N*n f64
//           row-major, then N u32 labels when has_labels. Little-endian.
namespace sfm::io {

FeatureMatrix read_features_csv(std::istream& in);
FeatureMatrix read_features_binary(std::istream& in);
void write_features_csv(std::ostream& out, const FeatureMatrix& data);
void write_features_binary(std::ostream& out, const FeatureMatrix& data);

/// Picks the encoding by sniffing the magic bytes.
FeatureMatrix load_features(const std::filesystem::path& path);
/// Binary when the extension is ".sfmf", CSV otherwise.
void save_features(const std::filesystem::path& path, const FeatureMatrix& data);

/// Elementwise tanh followed by multiplication with `scale`.
FeatureMatrix preprocess(const FeatureMatrix& data, bool apply_tanh, double scale);

/// Isotropic unit-variance Gaussian blobs. Class means sit at pairwise
/// distance `separation` (simplex corners when dim >= classes, otherwise
/// evenly spaced on the first axis). Rows are class-major.
FeatureMatrix generate_synthetic(int classes, int per_class, int dim, double separation,
                                 std::uint64_t seed);

}  // namespace sfm::io
