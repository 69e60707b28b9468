#pragma once

#include <stdexcept>
#include <string>

namespace canopyseg {

// Every recoverable failure in the library is reported as an Error with a
// distinct code, so callers (and tests) can tell failure modes apart without
// parsing messages.
enum class Errc {
  bad_magic,
  truncated_payload,
  dimension_mismatch,
  illegal_label,
  georef_mismatch,
  invalid_argument,
  out_of_bounds,
  architecture_mismatch,
  io_failure,
  missing_class,
  empty_evaluation,
  placement_failure,
  manifest_mismatch,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace canopyseg
