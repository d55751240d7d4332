#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace potrl {

// All training math runs in 64-bit by default; define POTRL_REAL_FLOAT to
// build a 32-bit speed variant. Gradient checks require the 64-bit build.
#ifdef POTRL_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

// Bad config file keys/values, out-of-domain parameters, unknown ids.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed runtime inputs: length mismatches, empty batches, bad token ids.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Symbol outside the vocabulary.
struct EncodingError : std::runtime_error {
  explicit EncodingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Constraint resampling exhausted or infeasible generation request.
struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Not enough usable data to finish a training/benchmark procedure.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace potrl
