#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "potrl/common.hpp"

namespace potrl::algo {

struct GaeResult {
  std::vector<Real> advantage;
  std::vector<Real> ret;  // advantage + value, the value-head target
};

// Backward TD(lambda) pass over one trajectory. values[i] estimates the
// return from position i onward with the bootstrap after the last position
// fixed at zero (episodes always terminate).
GaeResult gae(std::span<const Real> rewards, std::span<const Real> values,
              Real gamma, Real lambda);

enum class ValueClipMode { kPaper, kStandard };

struct PpoTokenLoss {
  Real policy_loss = 0;
  Real value_loss = 0;
  Real d_logprob = 0;  // d(policy_loss)/d(logprob_new)
  Real d_value = 0;    // d(value_loss)/d(value_new)
  bool clipped = false;
};

// Clipped-surrogate policy term and clipped value term for one token.
// kPaper clips the value target residual against the advantage band;
// kStandard clips the value prediction against its rollout-time value.
PpoTokenLoss ppo_token_loss(Real logprob_new, Real logprob_old, Real advantage,
                            Real ret, Real value_new, Real value_old, Real eps,
                            ValueClipMode mode);

// (r - mean) / std over one sampled group, population std floored at 1e-8.
std::vector<Real> group_advantages(std::span<const Real> rewards);

// Exact KL between two categoricals given log-probabilities.
Real kl_categorical(std::span<const Real> logp_p, std::span<const Real> logp_q);

// Accumulates coeff * dKL/dlogits_p into dlogits, with
// dKL/dl_k = p_k * (logp_k - logq_k - KL).
void kl_grad_wrt_logits(std::span<const Real> logp_p, std::span<const Real> logp_q,
                        Real coeff, std::span<Real> dlogits);

struct AdamConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

struct AdamState {
  std::vector<Real> m, v;
  int64_t t = 0;
};

class Adam {
 public:
  Adam(const AdamConfig& cfg, size_t n);
  Adam(const AdamConfig& cfg, AdamState state);

  void step(std::span<Real> params, std::span<const Real> grad);

  const AdamConfig& config() const { return cfg_; }
  const AdamState& state() const { return state_; }
  void set_lr(Real lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace potrl::algo
