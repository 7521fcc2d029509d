#pragma once

#include <stdexcept>
#include <string>

namespace perfinline {

enum class ErrorKind {
  Config,             // invalid knob ranges, unknown region, out-of-grid values
  NotFound,           // unknown function or dangling call site
  RefusedInline,      // direct-recursive call site
  InvariantViolation, // malformed module, irreducible CFG
  UndefinedProfile,   // n_func == 0
  DivisionGuard,      // zero denominator in a speedup
  Protocol,           // measurement protocol misuse (runs < 3)
  InsufficientData,
  Schema,             // schema-version mismatch in a serialized artifact
  Overlap,            // train/test program sets intersect
  Io,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::NotFound: return "not found";
    case ErrorKind::RefusedInline: return "refused inline";
    case ErrorKind::InvariantViolation: return "model invariant violation";
    case ErrorKind::UndefinedProfile: return "undefined profile";
    case ErrorKind::DivisionGuard: return "division guard";
    case ErrorKind::Protocol: return "protocol error";
    case ErrorKind::InsufficientData: return "insufficient data";
    case ErrorKind::Schema: return "schema mismatch";
    case ErrorKind::Overlap: return "train/test overlap";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace perfinline
