#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "potrl/common.hpp"

namespace potrl {

inline Real logsumexp(std::span<const Real> x) {
  Real mx = -std::numeric_limits<Real>::infinity();
  for (Real v : x) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  Real s = 0;
  for (Real v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

inline void log_softmax(std::span<const Real> logits, std::span<Real> out) {
  Real lse = logsumexp(logits);
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

inline void softmax(std::span<const Real> logits, std::span<Real> out) {
  log_softmax(logits, out);
  for (auto& v : out) v = std::exp(v);
}

inline Real sigmoid(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  Real e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace potrl
