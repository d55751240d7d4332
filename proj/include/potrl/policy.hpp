#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "potrl/algo.hpp"
#include "potrl/common.hpp"
#include "potrl/rng.hpp"

namespace potrl::policy {

struct ModelConfig {
  int vocab = 64;
  int emb = 32;
  int hidden = 64;
  int max_response = 96;  // sampled-token cap per trajectory

  bool operator==(const ModelConfig&) const = default;
};

// One flat parameter vector; every segment has a fixed offset so gradient
// checks and checkpoints can address coordinates stably.
class ParamLayout {
 public:
  struct Segment {
    size_t offset = 0;
    size_t rows = 0;
    size_t cols = 1;
    size_t size() const { return rows * cols; }
  };

  explicit ParamLayout(const ModelConfig& cfg);

  Segment emb, wz, uz, bz, wr, ur, br, wc, uc, bc, wo, bo, wv, bv;
  size_t total = 0;

  // Segment containing a flat coordinate, for diagnostics.
  std::string segment_name(size_t index) const;
};

struct Model {
  ModelConfig cfg;
  std::vector<Real> params;
};

// Weights uniform in [-0.08, 0.08]; all biases and the value head zero.
Model init_model(const ModelConfig& cfg, uint64_t seed);

// Everything the backward pass needs about one forward run. h/z/r/c/rh are
// T x hidden, where row t describes the update that consumed tokens[t].
struct Tape {
  int T = 0;
  std::vector<int> tokens;
  std::vector<Real> h, z, r, c, rh;
};

class Net {
 public:
  explicit Net(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }

  Tape forward(std::span<const Real> params, std::span<const int> tokens) const;

  // Heads read the hidden state after input position t (0 <= t < tape.T).
  void logits_at(std::span<const Real> params, const Tape& tape, int t,
                 std::span<Real> out) const;
  Real value_at(std::span<const Real> params, const Tape& tape, int t) const;

  // Reverse pass. dlogits is T x vocab and dvalue is T, zeros where a
  // position carries no loss. grad accumulates (caller zeroes).
  void backward(std::span<const Real> params, const Tape& tape,
                std::span<const Real> dlogits, std::span<const Real> dvalue,
                std::span<Real> grad) const;

  // Tape-free stepping for the sampling path.
  void consume(std::span<const Real> params, int token, std::vector<Real>& h) const;
  void logits_from(std::span<const Real> params, std::span<const Real> h,
                   std::span<Real> out) const;
  Real value_from(std::span<const Real> params, std::span<const Real> h) const;

 private:
  void step(std::span<const Real> params, int token, std::span<const Real> h_prev,
            std::span<Real> h, std::span<Real> z, std::span<Real> r,
            std::span<Real> c, std::span<Real> rh) const;

  ModelConfig cfg_;
  ParamLayout layout_;
};

// One sampled rollout. response includes the terminal <eos> unless the cap
// was hit. kl_ref holds the exact per-position KL between the sampling
// policy and the frozen reference, both at temperature 1.
struct Trajectory {
  std::vector<int> question;
  std::vector<int> response;
  bool truncated = false;
  std::vector<Real> logprob;
  std::vector<Real> value;
  std::vector<Real> kl_ref;
};

Trajectory sample_trajectory(const Net& net, const Model& actor, const Model& ref,
                             std::span<const int> question, Rng& rng);

// Teacher-forced scoring of a fixed response. Position i of the response
// reads logits from tape index prefix-1+i and value from prefix+i, with
// prefix = 1 + question length (the <bos>).
struct ScoredResponse {
  std::vector<Real> logprob;
  std::vector<Real> value;
  Tape tape;
  int prefix = 0;
};

ScoredResponse score_response(const Net& net, std::span<const Real> params,
                              std::span<const int> question,
                              std::span<const int> response);

Real response_logprob_sum(const Net& net, const Model& m,
                          std::span<const int> question,
                          std::span<const int> response);

struct SftItem {
  std::span<const int> question;
  std::span<const int> target;  // must end with <eos>
};

// Mean token cross-entropy over the batch; gradient accumulates into grad.
Real sft_loss_and_grad(const Net& net, const Model& m, std::span<const SftItem> items,
                       std::span<Real> grad);

struct Checkpoint {
  Model model;
  int64_t step = 0;
  std::string phase;  // free-form stage label
  std::optional<algo::AdamState> adam;
};

// Binary format: magic, version, JSON header, little-endian f64 payloads,
// trailing checksum. Loads reject mismatched magic, version, or checksum.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace potrl::policy
