#include "potrl/algo.hpp"

#include <algorithm>
#include <cmath>

namespace potrl::algo {

GaeResult gae(std::span<const Real> rewards, std::span<const Real> values,
              Real gamma, Real lambda) {
  if (rewards.size() != values.size()) {
    throw InputError("gae: rewards and values must have equal length");
  }
  if (rewards.empty()) throw InputError("gae: empty trajectory");
  if (gamma < 0 || gamma > 1 || lambda < 0 || lambda > 1) {
    throw ConfigError("gae: gamma and lambda must lie in [0, 1]");
  }
  size_t n = rewards.size();
  GaeResult out;
  out.advantage.resize(n);
  out.ret.resize(n);
  Real next_value = 0;
  Real next_adv = 0;
  for (size_t i = n; i-- > 0;) {
    Real delta = rewards[i] + gamma * next_value - values[i];
    next_adv = delta + gamma * lambda * next_adv;
    out.advantage[i] = next_adv;
    out.ret[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

PpoTokenLoss ppo_token_loss(Real logprob_new, Real logprob_old, Real advantage,
                            Real ret, Real value_new, Real value_old, Real eps,
                            ValueClipMode mode) {
  if (eps <= 0) throw ConfigError("ppo: clip epsilon must be positive");
  PpoTokenLoss out;

  Real ratio = std::exp(logprob_new - logprob_old);
  Real clipped_ratio = std::clamp(ratio, 1 - eps, 1 + eps);
  Real surr = ratio * advantage;
  Real surr_clipped = clipped_ratio * advantage;
  if (surr <= surr_clipped) {
    out.policy_loss = -surr;
    out.d_logprob = -ratio * advantage;  // d(exp(x - c))/dx = ratio
  } else {
    out.policy_loss = -surr_clipped;
    out.d_logprob = 0;
    out.clipped = true;
  }

  Real err = value_new - ret;
  if (mode == ValueClipMode::kPaper) {
    Real resid = std::clamp(ret - value_new, advantage - eps, advantage + eps);
    if (err * err >= resid * resid) {
      out.value_loss = 0.5 * err * err;
      out.d_value = err;
    } else {
      out.value_loss = 0.5 * resid * resid;
      bool interior = (ret - value_new) > (advantage - eps) &&
                      (ret - value_new) < (advantage + eps);
      out.d_value = interior ? -resid : 0;
    }
  } else {
    Real v_clip = value_old + std::clamp(value_new - value_old, -eps, eps);
    Real err_clip = v_clip - ret;
    if (err * err >= err_clip * err_clip) {
      out.value_loss = 0.5 * err * err;
      out.d_value = err;
    } else {
      out.value_loss = 0.5 * err_clip * err_clip;
      bool interior = std::abs(value_new - value_old) < eps;
      out.d_value = interior ? err_clip : 0;
    }
  }
  return out;
}

std::vector<Real> group_advantages(std::span<const Real> rewards) {
  if (rewards.size() < 2) {
    throw InputError("group advantages need at least two rewards");
  }
  // An identical group carries no preference signal; short-circuit before
  // mean rounding can leak through the variance floor.
  bool all_equal = true;
  for (Real r : rewards) all_equal = all_equal && r == rewards.front();
  if (all_equal) return std::vector<Real>(rewards.size(), 0.0);
  Real mean = 0;
  for (Real r : rewards) mean += r;
  mean /= static_cast<Real>(rewards.size());
  Real var = 0;
  for (Real r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<Real>(rewards.size());
  Real sd = std::max(std::sqrt(var), Real(1e-8));
  std::vector<Real> out(rewards.size());
  for (size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

Real kl_categorical(std::span<const Real> logp_p, std::span<const Real> logp_q) {
  if (logp_p.size() != logp_q.size()) {
    throw InputError("kl: distribution size mismatch");
  }
  Real kl = 0;
  for (size_t i = 0; i < logp_p.size(); ++i) {
    Real p = std::exp(logp_p[i]);
    if (p > 0) kl += p * (logp_p[i] - logp_q[i]);
  }
  return std::max(kl, Real(0));
}

void kl_grad_wrt_logits(std::span<const Real> logp_p, std::span<const Real> logp_q,
                        Real coeff, std::span<Real> dlogits) {
  if (logp_p.size() != logp_q.size() || dlogits.size() != logp_p.size()) {
    throw InputError("kl grad: size mismatch");
  }
  Real kl = kl_categorical(logp_p, logp_q);
  for (size_t i = 0; i < logp_p.size(); ++i) {
    Real p = std::exp(logp_p[i]);
    dlogits[i] += coeff * p * (logp_p[i] - logp_q[i] - kl);
  }
}

Adam::Adam(const AdamConfig& cfg, size_t n) : cfg_(cfg) {
  state_.m.assign(n, 0);
  state_.v.assign(n, 0);
  state_.t = 0;
}

Adam::Adam(const AdamConfig& cfg, AdamState state) : cfg_(cfg), state_(std::move(state)) {
  if (state_.m.size() != state_.v.size()) {
    throw InputError("adam: moment buffers disagree in size");
  }
}

void Adam::step(std::span<Real> params, std::span<const Real> grad) {
  if (params.size() != state_.m.size() || grad.size() != state_.m.size()) {
    throw InputError("adam: parameter/gradient size mismatch");
  }
  ++state_.t;
  Real b1t = 1 - std::pow(cfg_.beta1, static_cast<Real>(state_.t));
  Real b2t = 1 - std::pow(cfg_.beta2, static_cast<Real>(state_.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Real g = grad[i];
    state_.m[i] = cfg_.beta1 * state_.m[i] + (1 - cfg_.beta1) * g;
    state_.v[i] = cfg_.beta2 * state_.v[i] + (1 - cfg_.beta2) * g * g;
    Real mhat = state_.m[i] / b1t;
    Real vhat = state_.v[i] / b2t;
    params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace potrl::algo
