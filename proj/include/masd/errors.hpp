#pragma once

#include <stdexcept>
#include <string>

namespace masd {

// Shape disagreement between tensors (wrong rank, mismatched extents).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid static configuration (even kernel size, zero resize factor, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Violated call contract (non-scalar loss, label outside its domain, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// File-level failure: missing file, bad magic, truncation, checksum mismatch.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// A pipeline stage was invoked before its prerequisite completed.
struct PrereqError : std::runtime_error {
  explicit PrereqError(const std::string& stage)
      : std::runtime_error("missing prerequisite stage: " + stage), stage_name(stage) {}
  PrereqError(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_name(std::move(stage)) {}
  std::string stage_name;
};

}  // namespace masd
