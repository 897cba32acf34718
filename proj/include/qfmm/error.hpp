#pragma once

#include <stdexcept>
#include <string>

namespace qfmm {

enum class ErrorKind {
  Domain,        // argument outside the operation's domain
  Capacity,      // leaf box holds more than c particles
  Distribution,  // half-region overflow while routing registers
  Singularity,   // coincident particle positions
  OrderMismatch, // expansions of different order combined
  Input,         // malformed file or parameters
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace qfmm
