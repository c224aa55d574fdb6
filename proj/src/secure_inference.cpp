#include "sfm/secure_inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "sfm/random.hpp"

namespace sfm::secure {

namespace {

struct PlainPayload final : CiphertextPayload {
  PlainPayload(std::uint64_t v, const PlaintextBackend* o) : value(v), owner(o) {}
  std::uint64_t value;
  const PlaintextBackend* owner;
};

// Balanced-tree reduction: pairs (0,1), (2,3), ... per level, odd element
// carried up. Uses exactly size - 1 gates.
template <typename Gate>
Ciphertext tournament(std::vector<Ciphertext> level, Gate&& gate) {
  int depth = 0;
  while (level.size() > 1) {
    std::vector<Ciphertext> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
      next.push_back(gate(level[i], level[i + 1], depth, static_cast<int>(i / 2)));
    }
    if (level.size() % 2 == 1) next.push_back(level.back());
    level = std::move(next);
    ++depth;
  }
  return level.front();
}

}  // namespace

std::uint64_t encode_fixed_point(double t, int bits) {
  if (bits < 1 || bits > 32) throw ConfigError("bit width must lie in [1, 32]");
  if (!std::isfinite(t)) throw NonFiniteValue("cannot encode a non-finite measure");
  const double top = std::ldexp(1.0, bits) - 1.0;
  const double scaled = std::ceil(top * t);
  return static_cast<std::uint64_t>(std::clamp(scaled, 0.0, top));
}

BackendFailure::BackendFailure(std::string gate, int class_id, int index, const std::string& detail)
    : Error(ErrorKind::Numerical, "backend failure at " + gate + " gate (class " +
                                      std::to_string(class_id) + ", index " + std::to_string(index) +
                                      "): " + detail),
      gate_(std::move(gate)),
      class_id_(class_id),
      index_(index) {}

PlaintextBackend::PlaintextBackend(int bits) : bits_(bits) {
  if (bits < 1 || bits > 32) throw ConfigError("bit width must lie in [1, 32]");
  mask_ = (std::uint64_t{1} << bits) - 1;
}

std::uint64_t PlaintextBackend::value_of(const Ciphertext& c) const {
  const auto* p = dynamic_cast<const PlainPayload*>(c.payload());
  if (p == nullptr || p->owner != this) {
    throw BackendFailure("operand", -1, -1, "ciphertext does not belong to this backend");
  }
  return p->value;
}

Ciphertext PlaintextBackend::encrypt(std::uint64_t value) {
  return Ciphertext(std::make_shared<PlainPayload>(value & mask_, this));
}

std::uint64_t PlaintextBackend::decrypt(const Ciphertext& c) { return value_of(c); }

Ciphertext PlaintextBackend::min(const Ciphertext& a, const Ciphertext& b) {
  return Ciphertext(std::make_shared<PlainPayload>(std::min(value_of(a), value_of(b)), this));
}

Ciphertext PlaintextBackend::eq(const Ciphertext& a, const Ciphertext& b) {
  return Ciphertext(std::make_shared<PlainPayload>(value_of(a) == value_of(b) ? 1u : 0u, this));
}

Ciphertext CountingBackend::encrypt(std::uint64_t value) {
  ++encrypts_;
  return inner_.encrypt(value);
}

std::uint64_t CountingBackend::decrypt(const Ciphertext& c) {
  ++decrypts_;
  return inner_.decrypt(c);
}

Ciphertext CountingBackend::min(const Ciphertext& a, const Ciphertext& b) {
  ++mins_;
  return inner_.min(a, b);
}

Ciphertext CountingBackend::eq(const Ciphertext& a, const Ciphertext& b) {
  ++eqs_;
  return inner_.eq(a, b);
}

void CountingBackend::reset() noexcept {
  mins_ = 0;
  eqs_ = 0;
  encrypts_ = 0;
  decrypts_ = 0;
}

EncryptedScoreGrid encrypt_measures(const Matrix& measures, CipherBackend& backend) {
  EncryptedScoreGrid grid;
  grid.classes = static_cast<int>(measures.rows());
  grid.clients = static_cast<int>(measures.cols());
  grid.cells.reserve(static_cast<std::size_t>(measures.size()));
  for (Eigen::Index c = 0; c < measures.rows(); ++c)
    for (Eigen::Index q = 0; q < measures.cols(); ++q)
      grid.cells.push_back(backend.encrypt(encode_fixed_point(measures(c, q), backend.bit_width())));
  return grid;
}

std::vector<Ciphertext> encrypted_decision(const EncryptedScoreGrid& grid, CipherBackend& backend) {
  if (grid.classes < 1 || grid.clients < 1 ||
      grid.cells.size() != static_cast<std::size_t>(grid.classes) * static_cast<std::size_t>(grid.clients)) {
    throw DimensionError("encrypted score grid is incomplete");
  }
  auto guarded = [&](const char* gate, int class_id, int index, auto&& op) -> Ciphertext {
    Ciphertext out;
    try {
      out = op();
    } catch (const BackendFailure& e) {
      throw BackendFailure(gate, class_id, index, e.what());
    } catch (const std::exception& e) {
      throw BackendFailure(gate, class_id, index, e.what());
    }
    if (!out) throw BackendFailure(gate, class_id, index, "backend returned an empty handle");
    return out;
  };

  std::vector<Ciphertext> class_min;
  class_min.reserve(static_cast<std::size_t>(grid.classes));
  for (int c = 0; c < grid.classes; ++c) {
    std::vector<Ciphertext> row;
    for (int q = 0; q < grid.clients; ++q) row.push_back(grid.at(c, q));
    int gate_index = 0;
    class_min.push_back(tournament(std::move(row), [&](const auto& a, const auto& b, int, int) {
      return guarded("client-min", c, gate_index++, [&] { return backend.min(a, b); });
    }));
  }
  int gate_index = 0;
  const Ciphertext overall = tournament(class_min, [&](const auto& a, const auto& b, int, int) {
    return guarded("class-min", -1, gate_index++, [&] { return backend.min(a, b); });
  });
  std::vector<Ciphertext> bits;
  bits.reserve(class_min.size());
  for (int c = 0; c < grid.classes; ++c) {
    bits.push_back(guarded("eq", c, 0, [&] { return backend.eq(class_min[static_cast<std::size_t>(c)], overall); }));
  }
  return bits;
}

int secure_classify(const federation::GlobalSfmModel& model, const Vector& x, CipherBackend& backend) {
  const auto grid = encrypt_measures(model.local_measures(x), backend);
  const auto bits = encrypted_decision(grid, backend);
  std::vector<int> indicator;
  indicator.reserve(bits.size());
  for (const auto& b : bits) indicator.push_back(backend.decrypt(b) != 0 ? 1 : 0);
  return federation::lowest_set_index(indicator);
}

std::vector<GateStats> benchmark_gates(CipherBackend& backend, std::size_t repetitions, std::uint64_t seed) {
  if (repetitions == 0) throw ConfigError("benchmark needs at least one repetition");
  Rng rng(seed);
  const int bits = backend.bit_width();
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  auto time_gate = [&](const std::string& name, auto&& gate) {
    std::vector<double> ms;
    ms.reserve(repetitions);
    for (std::size_t r = 0; r < repetitions; ++r) {
      const auto a = backend.encrypt(rng() & mask);
      const auto b = backend.encrypt(rng() & mask);
      const auto start = std::chrono::steady_clock::now();
      const auto out = gate(a, b);
      const auto stop = std::chrono::steady_clock::now();
      (void)backend.decrypt(out);
      ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    GateStats s;
    s.gate = name;
    s.bits = bits;
    s.samples = ms.size();
    double total = 0.0;
    for (double v : ms) total += v;
    s.mean_ms = total / static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
    s.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
    return s;
  };
  return {time_gate("minimum", [&](const auto& a, const auto& b) { return backend.min(a, b); }),
          time_gate("equality-comparison", [&](const auto& a, const auto& b) { return backend.eq(a, b); })};
}

}  // namespace sfm::secure
