#pragma once

#include <stdexcept>
#include <string>

namespace armour {

// Shape/rank violations in tensor operations. Messages name the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Softmax over a row that consists entirely of mask sentinels.
class MaskError : public std::runtime_error {
 public:
  explicit MaskError(const std::string& msg) : std::runtime_error(msg) {}
};

// Weight bundle does not contain exactly the tensors a variant requires.
class CensusError : public std::runtime_error {
 public:
  explicit CensusError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed architecture spec (unknown layer kind, bad dims, bad file).
class SpecError : public std::runtime_error {
 public:
  explicit SpecError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged (non-finite loss).
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Weight container I/O failures (bad magic, truncation, unwritable path).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace armour
