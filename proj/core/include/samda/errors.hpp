#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace samda {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API precondition (non-scalar backward, missing grad, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// User-supplied configuration or data is invalid.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Something that must hold bit-exactly did not (freeze audit, restore).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary file. Carries the byte offset where decoding stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace samda
