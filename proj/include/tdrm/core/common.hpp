#pragma once

#include <stdexcept>
#include <string>

namespace tdrm {

// Thrown when a caller breaks an interface precondition (shape mismatch,
// out-of-range argument, use-after-done, incompatible checkpoint, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Thrown when values leave the numeric domain (NaN/Inf where finite is required).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void contract_fail(const std::string& msg) { throw ContractError(msg); }

#define TDRM_CHECK(cond, msg)                  \
  do {                                         \
    if (!(cond)) ::tdrm::contract_fail((msg)); \
  } while (0)

#define TDRM_CHECK_FINITE(cond, msg)                 \
  do {                                               \
    if (!(cond)) throw ::tdrm::NumericError((msg));  \
  } while (0)

}  // namespace tdrm
