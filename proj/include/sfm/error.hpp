#pragma once

#include <stdexcept>
#include <string>

namespace sfm {

// Error categories map onto CLI exit codes: config errors exit 2, data
// errors exit 3, numerical failures exit 4.
enum class ErrorKind {
  Config,
  Data,
  Numerical,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  virtual ~Error() = default;
  ErrorKind kind() const noexcept { return kind_; }

  /// Rethrows this error with its dynamic type preserved and `context`
  /// prefixed to the message.
  [[noreturn]] virtual void rethrow_with_context(const std::string& context) const {
    throw Error(kind_, context + ": " + what());
  }

 private:
  ErrorKind kind_;
};

#define SFM_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(Kind, what) {}     \
    [[noreturn]] void rethrow_with_context(                           \
        const std::string& context) const override {                  \
      throw Name(context + ": " + what());                            \
    }                                                                 \
  }

SFM_DEFINE_ERROR(DimensionError, ErrorKind::Data);
SFM_DEFINE_ERROR(DegenerateData, ErrorKind::Data);
SFM_DEFINE_ERROR(NonFiniteValue, ErrorKind::Data);
SFM_DEFINE_ERROR(ParseError, ErrorKind::Data);
SFM_DEFINE_ERROR(EmptyTestSet, ErrorKind::Data);
SFM_DEFINE_ERROR(BatchTooSmall, ErrorKind::Data);
SFM_DEFINE_ERROR(NoConvergence, ErrorKind::Numerical);
SFM_DEFINE_ERROR(ConfigError, ErrorKind::Config);

#undef SFM_DEFINE_ERROR

}  // namespace sfm
