#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sfm/error.hpp"
#include "sfm/federation.hpp"

// The global decision rule as an unsigned-integer circuit: per-class minima
// over clients, a cross-class minimum, and one equality test per class. Any
// encrypted-integer library can run it by implementing CipherBackend.
namespace sfm::secure {

/// ceil((2^p - 1) t) clamped to [0, 2^p - 1]; p in [1, 32].
std::uint64_t encode_fixed_point(double t, int bits);

/// Opaque payload owned by a backend.
struct CiphertextPayload {
  virtual ~CiphertextPayload() = default;
};

/// Handle to an encrypted p-bit unsigned integer.
class Ciphertext {
 public:
  Ciphertext() = default;
  explicit Ciphertext(std::shared_ptr<const CiphertextPayload> payload) : payload_(std::move(payload)) {}
  const CiphertextPayload* payload() const noexcept { return payload_.get(); }
  explicit operator bool() const noexcept { return payload_ != nullptr; }

 private:
  std::shared_ptr<const CiphertextPayload> payload_;
};

/// Encrypted-integer provider. A lattice FHE library adapts by wrapping its
/// ciphertext type in a CiphertextPayload and mapping min / eq onto its
/// homomorphic operators; decrypt(encrypt(v)) must equal v mod 2^p.
class CipherBackend {
 public:
  virtual ~CipherBackend() = default;
  virtual std::string name() const = 0;
  virtual int bit_width() const = 0;
  /// Whether handles may be used concurrently from several threads.
  virtual bool thread_safe() const = 0;

  virtual Ciphertext encrypt(std::uint64_t value) = 0;
  virtual std::uint64_t decrypt(const Ciphertext& c) = 0;
  virtual Ciphertext min(const Ciphertext& a, const Ciphertext& b) = 0;
  /// Encrypted 1 if a == b, else encrypted 0.
  virtual Ciphertext eq(const Ciphertext& a, const Ciphertext& b) = 0;
};

/// A failing gate, with its position in the circuit.
class BackendFailure : public Error {
 public:
  BackendFailure(std::string gate, int class_id, int index, const std::string& detail);
  const std::string& gate() const noexcept { return gate_; }
  int class_id() const noexcept { return class_id_; }
  int index() const noexcept { return index_; }

 private:
  std::string gate_;
  int class_id_;
  int index_;
};

/// Plaintext integers with wrap-around modulo 2^p. Thread-safe.
class PlaintextBackend final : public CipherBackend {
 public:
  explicit PlaintextBackend(int bits = 16);
  std::string name() const override { return "plaintext"; }
  int bit_width() const override { return bits_; }
  bool thread_safe() const override { return true; }
  Ciphertext encrypt(std::uint64_t value) override;
  std::uint64_t decrypt(const Ciphertext& c) override;
  Ciphertext min(const Ciphertext& a, const Ciphertext& b) override;
  Ciphertext eq(const Ciphertext& a, const Ciphertext& b) override;

 private:
  std::uint64_t value_of(const Ciphertext& c) const;
  int bits_;
  std::uint64_t mask_;
};

/// Decorator that counts gate invocations on the wrapped backend.
class CountingBackend final : public CipherBackend {
 public:
  explicit CountingBackend(CipherBackend& inner) : inner_(inner) {}
  std::string name() const override { return "counting(" + inner_.name() + ")"; }
  int bit_width() const override { return inner_.bit_width(); }
  bool thread_safe() const override { return inner_.thread_safe(); }
  Ciphertext encrypt(std::uint64_t value) override;
  std::uint64_t decrypt(const Ciphertext& c) override;
  Ciphertext min(const Ciphertext& a, const Ciphertext& b) override;
  Ciphertext eq(const Ciphertext& a, const Ciphertext& b) override;

  std::uint64_t min_count() const noexcept { return mins_; }
  std::uint64_t eq_count() const noexcept { return eqs_; }
  std::uint64_t encrypt_count() const noexcept { return encrypts_; }
  std::uint64_t decrypt_count() const noexcept { return decrypts_; }
  void reset() noexcept;

 private:
  CipherBackend& inner_;
  std::atomic<std::uint64_t> mins_{0}, eqs_{0}, encrypts_{0}, decrypts_{0};
};

/// Row-major C x Q grid of encrypted local measures.
struct EncryptedScoreGrid {
  int classes = 0;
  int clients = 0;
  std::vector<Ciphertext> cells;

  const Ciphertext& at(int class_id, int client_id) const {
    return cells.at(static_cast<std::size_t>(class_id) * static_cast<std::size_t>(clients) +
                    static_cast<std::size_t>(client_id));
  }
};

/// Encodes and encrypts a C x Q matrix of measures in [0, 1].
EncryptedScoreGrid encrypt_measures(const Matrix& measures, CipherBackend& backend);

/// Balanced-tree min over each class row (Q - 1 gates), balanced-tree min
/// across the class minima (C - 1 gates), then eq(m_c, M) per class.
std::vector<Ciphertext> encrypted_decision(const EncryptedScoreGrid& grid, CipherBackend& backend);

/// Clear-text encode of every local measure, encrypted decision, decryption,
/// and the lowest-index tie-break.
int secure_classify(const federation::GlobalSfmModel& model, const Vector& x, CipherBackend& backend);

/// Per-gate latency statistics.
struct GateStats {
  std::string gate;
  int bits = 0;
  std::size_t samples = 0;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
};

/// Times `repetitions` min and eq gates on random p-bit operands.
std::vector<GateStats> benchmark_gates(CipherBackend& backend, std::size_t repetitions,
                                       std::uint64_t seed);

}  // namespace sfm::secure
