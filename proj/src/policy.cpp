#include "potrl/policy.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "potrl/mathx.hpp"
#include "potrl/vocab.hpp"

namespace potrl::policy {
namespace {

using json = nlohmann::ordered_json;

// out[i] (+)= sum_j W[i,j] x[j]
void matvec(const Real* w, size_t rows, size_t cols, const Real* x, Real* out,
            bool accumulate) {
  for (size_t i = 0; i < rows; ++i) {
    Real s = accumulate ? out[i] : 0;
    const Real* wi = w + i * cols;
    for (size_t j = 0; j < cols; ++j) s += wi[j] * x[j];
    out[i] = s;
  }
}

// out[j] += sum_i W[i,j] y[i]
void matvec_t_acc(const Real* w, size_t rows, size_t cols, const Real* y, Real* out) {
  for (size_t i = 0; i < rows; ++i) {
    const Real* wi = w + i * cols;
    Real yi = y[i];
    if (yi == 0) continue;
    for (size_t j = 0; j < cols; ++j) out[j] += wi[j] * yi;
  }
}

// G[i,j] += y[i] x[j]
void outer_acc(Real* g, size_t rows, size_t cols, const Real* y, const Real* x) {
  for (size_t i = 0; i < rows; ++i) {
    Real yi = y[i];
    if (yi == 0) continue;
    Real* gi = g + i * cols;
    for (size_t j = 0; j < cols; ++j) gi[j] += yi * x[j];
  }
}

void check_tokens(std::span<const int> tokens, int vocab_size) {
  for (int t : tokens) {
    if (t < 0 || t >= vocab_size) {
      throw InputError("token id out of vocabulary range: " + std::to_string(t));
    }
  }
}

}  // namespace

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  if (cfg.vocab < 2 || cfg.emb < 1 || cfg.hidden < 1 || cfg.max_response < 2) {
    throw ConfigError("model dimensions out of range");
  }
  size_t v = static_cast<size_t>(cfg.vocab);
  size_t e = static_cast<size_t>(cfg.emb);
  size_t h = static_cast<size_t>(cfg.hidden);
  size_t at = 0;
  auto seg = [&](size_t rows, size_t cols) {
    Segment s{at, rows, cols};
    at += rows * cols;
    return s;
  };
  emb = seg(v, e);
  wz = seg(h, e);
  uz = seg(h, h);
  bz = seg(h, 1);
  wr = seg(h, e);
  ur = seg(h, h);
  br = seg(h, 1);
  wc = seg(h, e);
  uc = seg(h, h);
  bc = seg(h, 1);
  wo = seg(v, h);
  bo = seg(v, 1);
  wv = seg(h, 1);
  bv = seg(1, 1);
  total = at;
}

std::string ParamLayout::segment_name(size_t index) const {
  struct Named {
    const char* name;
    const Segment* seg;
  };
  const Named all[] = {{"emb", &emb}, {"wz", &wz}, {"uz", &uz}, {"bz", &bz},
                       {"wr", &wr}, {"ur", &ur}, {"br", &br}, {"wc", &wc},
                       {"uc", &uc}, {"bc", &bc}, {"wo", &wo}, {"bo", &bo},
                       {"wv", &wv}, {"bv", &bv}};
  for (const auto& n : all) {
    if (index >= n.seg->offset && index < n.seg->offset + n.seg->size()) return n.name;
  }
  return "out_of_range";
}

Model init_model(const ModelConfig& cfg, uint64_t seed) {
  ParamLayout layout(cfg);
  Model m;
  m.cfg = cfg;
  m.params.assign(layout.total, 0);
  Rng rng(derive_seed(seed, "init"));
  auto fill = [&](const ParamLayout::Segment& s) {
    for (size_t i = 0; i < s.size(); ++i) {
      m.params[s.offset + i] = (rng.uniform() * 2 - 1) * 0.08;
    }
  };
  // Biases and the whole value head stay zero.
  fill(layout.emb);
  fill(layout.wz);
  fill(layout.uz);
  fill(layout.wr);
  fill(layout.ur);
  fill(layout.wc);
  fill(layout.uc);
  fill(layout.wo);
  return m;
}

Net::Net(const ModelConfig& cfg) : cfg_(cfg), layout_(cfg) {}

void Net::step(std::span<const Real> params, int token, std::span<const Real> h_prev,
               std::span<Real> h, std::span<Real> z, std::span<Real> r,
               std::span<Real> c, std::span<Real> rh) const {
  size_t hd = static_cast<size_t>(cfg_.hidden);
  size_t ed = static_cast<size_t>(cfg_.emb);
  const Real* p = params.data();
  const Real* x = p + layout_.emb.offset + static_cast<size_t>(token) * ed;

  matvec(p + layout_.wz.offset, hd, ed, x, z.data(), false);
  matvec(p + layout_.uz.offset, hd, hd, h_prev.data(), z.data(), true);
  matvec(p + layout_.wr.offset, hd, ed, x, r.data(), false);
  matvec(p + layout_.ur.offset, hd, hd, h_prev.data(), r.data(), true);
  const Real* pbz = p + layout_.bz.offset;
  const Real* pbr = p + layout_.br.offset;
  for (size_t i = 0; i < hd; ++i) {
    z[i] = sigmoid(z[i] + pbz[i]);
    r[i] = sigmoid(r[i] + pbr[i]);
    rh[i] = r[i] * h_prev[i];
  }
  matvec(p + layout_.wc.offset, hd, ed, x, c.data(), false);
  matvec(p + layout_.uc.offset, hd, hd, rh.data(), c.data(), true);
  const Real* pbc = p + layout_.bc.offset;
  for (size_t i = 0; i < hd; ++i) {
    c[i] = std::tanh(c[i] + pbc[i]);
    h[i] = (1 - z[i]) * h_prev[i] + z[i] * c[i];
  }
}

Tape Net::forward(std::span<const Real> params, std::span<const int> tokens) const {
  if (params.size() != layout_.total) throw InputError("parameter vector size mismatch");
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  check_tokens(tokens, cfg_.vocab);

  size_t hd = static_cast<size_t>(cfg_.hidden);
  Tape tape;
  tape.T = static_cast<int>(tokens.size());
  tape.tokens.assign(tokens.begin(), tokens.end());
  size_t n = tokens.size() * hd;
  tape.h.resize(n);
  tape.z.resize(n);
  tape.r.resize(n);
  tape.c.resize(n);
  tape.rh.resize(n);

  std::vector<Real> h0(hd, 0);
  for (size_t t = 0; t < tokens.size(); ++t) {
    std::span<const Real> h_prev =
        t == 0 ? std::span<const Real>(h0)
               : std::span<const Real>(tape.h.data() + (t - 1) * hd, hd);
    step(params, tokens[t], h_prev, {tape.h.data() + t * hd, hd},
         {tape.z.data() + t * hd, hd}, {tape.r.data() + t * hd, hd},
         {tape.c.data() + t * hd, hd}, {tape.rh.data() + t * hd, hd});
  }
  return tape;
}

void Net::logits_at(std::span<const Real> params, const Tape& tape, int t,
                    std::span<Real> out) const {
  if (t < 0 || t >= tape.T) throw InputError("logits_at: position out of range");
  if (out.size() != static_cast<size_t>(cfg_.vocab)) {
    throw InputError("logits_at: bad output size");
  }
  size_t hd = static_cast<size_t>(cfg_.hidden);
  const Real* p = params.data();
  matvec(p + layout_.wo.offset, static_cast<size_t>(cfg_.vocab), hd,
         tape.h.data() + static_cast<size_t>(t) * hd, out.data(), false);
  const Real* pbo = p + layout_.bo.offset;
  for (int i = 0; i < cfg_.vocab; ++i) out[static_cast<size_t>(i)] += pbo[i];
}

Real Net::value_at(std::span<const Real> params, const Tape& tape, int t) const {
  if (t < 0 || t >= tape.T) throw InputError("value_at: position out of range");
  size_t hd = static_cast<size_t>(cfg_.hidden);
  const Real* p = params.data();
  const Real* wv = p + layout_.wv.offset;
  const Real* ht = tape.h.data() + static_cast<size_t>(t) * hd;
  Real s = p[layout_.bv.offset];
  for (size_t i = 0; i < hd; ++i) s += wv[i] * ht[i];
  return s;
}

void Net::backward(std::span<const Real> params, const Tape& tape,
                   std::span<const Real> dlogits, std::span<const Real> dvalue,
                   std::span<Real> grad) const {
  size_t hd = static_cast<size_t>(cfg_.hidden);
  size_t ed = static_cast<size_t>(cfg_.emb);
  size_t vd = static_cast<size_t>(cfg_.vocab);
  size_t T = static_cast<size_t>(tape.T);
  if (dlogits.size() != T * vd) throw InputError("backward: dlogits size mismatch");
  if (dvalue.size() != T) throw InputError("backward: dvalue size mismatch");
  if (grad.size() != layout_.total) throw InputError("backward: grad size mismatch");
  if (params.size() != layout_.total) throw InputError("backward: params size mismatch");

  const Real* p = params.data();
  Real* g = grad.data();
  std::vector<Real> h0(hd, 0);
  std::vector<Real> dh(hd, 0), dh_prev(hd), dz(hd), dc(hd), dr(hd), drh(hd),
      daz(hd), dar(hd), dac(hd), dx(ed);

  for (size_t t = T; t-- > 0;) {
    const Real* h_t = tape.h.data() + t * hd;
    const Real* h_prev = t == 0 ? h0.data() : tape.h.data() + (t - 1) * hd;
    const Real* z = tape.z.data() + t * hd;
    const Real* r = tape.r.data() + t * hd;
    const Real* c = tape.c.data() + t * hd;
    const Real* rh = tape.rh.data() + t * hd;
    const Real* x = p + layout_.emb.offset +
                    static_cast<size_t>(tape.tokens[t]) * ed;

    // Head contributions at this position.
    const Real* dl = dlogits.data() + t * vd;
    bool any_logit = false;
    for (size_t i = 0; i < vd; ++i) {
      if (dl[i] != 0) {
        any_logit = true;
        break;
      }
    }
    if (any_logit) {
      outer_acc(g + layout_.wo.offset, vd, hd, dl, h_t);
      for (size_t i = 0; i < vd; ++i) g[layout_.bo.offset + i] += dl[i];
      matvec_t_acc(p + layout_.wo.offset, vd, hd, dl, dh.data());
    }
    Real dv = dvalue[t];
    if (dv != 0) {
      const Real* wv = p + layout_.wv.offset;
      for (size_t i = 0; i < hd; ++i) {
        g[layout_.wv.offset + i] += dv * h_t[i];
        dh[i] += dv * wv[i];
      }
      g[layout_.bv.offset] += dv;
    }

    // Through h_t = (1-z) h_prev + z c.
    for (size_t i = 0; i < hd; ++i) {
      dz[i] = dh[i] * (c[i] - h_prev[i]);
      dc[i] = dh[i] * z[i];
      dh_prev[i] = dh[i] * (1 - z[i]);
      dac[i] = dc[i] * (1 - c[i] * c[i]);
      daz[i] = dz[i] * z[i] * (1 - z[i]);
    }

    outer_acc(g + layout_.wc.offset, hd, ed, dac.data(), x);
    outer_acc(g + layout_.uc.offset, hd, hd, dac.data(), rh);
    for (size_t i = 0; i < hd; ++i) g[layout_.bc.offset + i] += dac[i];
    std::fill(drh.begin(), drh.end(), Real(0));
    matvec_t_acc(p + layout_.uc.offset, hd, hd, dac.data(), drh.data());
    std::fill(dx.begin(), dx.end(), Real(0));
    matvec_t_acc(p + layout_.wc.offset, hd, ed, dac.data(), dx.data());

    for (size_t i = 0; i < hd; ++i) {
      dr[i] = drh[i] * h_prev[i];
      dh_prev[i] += drh[i] * r[i];
      dar[i] = dr[i] * r[i] * (1 - r[i]);
    }

    outer_acc(g + layout_.wr.offset, hd, ed, dar.data(), x);
    outer_acc(g + layout_.ur.offset, hd, hd, dar.data(), h_prev);
    for (size_t i = 0; i < hd; ++i) g[layout_.br.offset + i] += dar[i];
    matvec_t_acc(p + layout_.wr.offset, hd, ed, dar.data(), dx.data());
    matvec_t_acc(p + layout_.ur.offset, hd, hd, dar.data(), dh_prev.data());

    outer_acc(g + layout_.wz.offset, hd, ed, daz.data(), x);
    outer_acc(g + layout_.uz.offset, hd, hd, daz.data(), h_prev);
    for (size_t i = 0; i < hd; ++i) g[layout_.bz.offset + i] += daz[i];
    matvec_t_acc(p + layout_.wz.offset, hd, ed, daz.data(), dx.data());
    matvec_t_acc(p + layout_.uz.offset, hd, hd, daz.data(), dh_prev.data());

    Real* gx = g + layout_.emb.offset + static_cast<size_t>(tape.tokens[t]) * ed;
    for (size_t i = 0; i < ed; ++i) gx[i] += dx[i];

    std::swap(dh, dh_prev);
    std::fill(dh_prev.begin(), dh_prev.end(), Real(0));
  }
}

void Net::consume(std::span<const Real> params, int token, std::vector<Real>& h) const {
  size_t hd = static_cast<size_t>(cfg_.hidden);
  if (h.size() != hd) throw InputError("consume: bad hidden size");
  if (token < 0 || token >= cfg_.vocab) throw InputError("consume: bad token");
  std::vector<Real> h_prev = h;
  std::vector<Real> z(hd), r(hd), c(hd), rh(hd);
  step(params, token, h_prev, h, z, r, c, rh);
}

void Net::logits_from(std::span<const Real> params, std::span<const Real> h,
                      std::span<Real> out) const {
  size_t hd = static_cast<size_t>(cfg_.hidden);
  size_t vd = static_cast<size_t>(cfg_.vocab);
  if (h.size() != hd || out.size() != vd) throw InputError("logits_from: bad sizes");
  const Real* p = params.data();
  matvec(p + layout_.wo.offset, vd, hd, h.data(), out.data(), false);
  const Real* pbo = p + layout_.bo.offset;
  for (size_t i = 0; i < vd; ++i) out[i] += pbo[i];
}

Real Net::value_from(std::span<const Real> params, std::span<const Real> h) const {
  size_t hd = static_cast<size_t>(cfg_.hidden);
  if (h.size() != hd) throw InputError("value_from: bad hidden size");
  const Real* p = params.data();
  const Real* wv = p + layout_.wv.offset;
  Real s = p[layout_.bv.offset];
  for (size_t i = 0; i < hd; ++i) s += wv[i] * h[i];
  return s;
}

Trajectory sample_trajectory(const Net& net, const Model& actor, const Model& ref,
                             std::span<const int> question, Rng& rng) {
  if (actor.cfg != net.config() || ref.cfg != net.config()) {
    throw InputError("sample: model/network config mismatch");
  }
  check_tokens(question, net.config().vocab);
  size_t hd = static_cast<size_t>(net.config().hidden);
  size_t vd = static_cast<size_t>(net.config().vocab);

  Trajectory out;
  out.question.assign(question.begin(), question.end());

  std::vector<Real> actor_h(hd, 0), ref_h(hd, 0);
  net.consume(actor.params, Vocabulary::kBos, actor_h);
  net.consume(ref.params, Vocabulary::kBos, ref_h);
  for (int q : question) {
    net.consume(actor.params, q, actor_h);
    net.consume(ref.params, q, ref_h);
  }

  std::vector<Real> logits(vd), logp(vd), probs(vd), ref_logits(vd), ref_logp(vd);
  for (int i = 0; i < net.config().max_response; ++i) {
    net.logits_from(actor.params, actor_h, logits);
    log_softmax(logits, logp);
    for (size_t k = 0; k < vd; ++k) probs[k] = std::exp(logp[k]);
    int token = rng.categorical(probs);

    net.logits_from(ref.params, ref_h, ref_logits);
    log_softmax(ref_logits, ref_logp);

    out.response.push_back(token);
    out.logprob.push_back(logp[static_cast<size_t>(token)]);
    out.kl_ref.push_back(algo::kl_categorical(logp, ref_logp));

    net.consume(actor.params, token, actor_h);
    net.consume(ref.params, token, ref_h);
    out.value.push_back(net.value_from(actor.params, actor_h));

    if (token == Vocabulary::kEos) break;
  }
  out.truncated = out.response.back() != Vocabulary::kEos;
  return out;
}

ScoredResponse score_response(const Net& net, std::span<const Real> params,
                              std::span<const int> question,
                              std::span<const int> response) {
  if (response.empty()) throw InputError("score: empty response");
  check_tokens(question, net.config().vocab);
  check_tokens(response, net.config().vocab);

  std::vector<int> full;
  full.reserve(1 + question.size() + response.size());
  full.push_back(Vocabulary::kBos);
  full.insert(full.end(), question.begin(), question.end());
  full.insert(full.end(), response.begin(), response.end());

  ScoredResponse out;
  out.prefix = static_cast<int>(1 + question.size());
  out.tape = net.forward(params, full);

  size_t vd = static_cast<size_t>(net.config().vocab);
  std::vector<Real> logits(vd), logp(vd);
  for (size_t i = 0; i < response.size(); ++i) {
    net.logits_at(params, out.tape, out.prefix - 1 + static_cast<int>(i), logits);
    log_softmax(logits, logp);
    out.logprob.push_back(logp[static_cast<size_t>(response[i])]);
    out.value.push_back(net.value_at(params, out.tape, out.prefix + static_cast<int>(i)));
  }
  return out;
}

Real response_logprob_sum(const Net& net, const Model& m,
                          std::span<const int> question,
                          std::span<const int> response) {
  auto scored = score_response(net, m.params, question, response);
  Real s = 0;
  for (Real lp : scored.logprob) s += lp;
  return s;
}

Real sft_loss_and_grad(const Net& net, const Model& m, std::span<const SftItem> items,
                       std::span<Real> grad) {
  if (items.empty()) throw InputError("sft: empty batch");
  size_t total_tokens = 0;
  for (const auto& it : items) {
    if (it.target.empty() || it.target.back() != Vocabulary::kEos) {
      throw InputError("sft: target must end with <eos>");
    }
    total_tokens += it.target.size();
  }
  size_t vd = static_cast<size_t>(net.config().vocab);
  Real inv = Real(1) / static_cast<Real>(total_tokens);
  Real loss = 0;

  std::vector<Real> logits(vd), logp(vd);
  for (const auto& it : items) {
    auto scored = score_response(net, m.params, it.question, it.target);
    size_t T = static_cast<size_t>(scored.tape.T);
    std::vector<Real> dlogits(T * vd, 0);
    std::vector<Real> dvalue(T, 0);
    for (size_t i = 0; i < it.target.size(); ++i) {
      int pos = scored.prefix - 1 + static_cast<int>(i);
      net.logits_at(m.params, scored.tape, pos, logits);
      log_softmax(logits, logp);
      loss -= logp[static_cast<size_t>(it.target[i])] * inv;
      Real* row = dlogits.data() + static_cast<size_t>(pos) * vd;
      for (size_t k = 0; k < vd; ++k) row[k] = std::exp(logp[k]) * inv;
      row[static_cast<size_t>(it.target[i])] -= inv;
    }
    net.backward(m.params, scored.tape, dlogits, dvalue, grad);
  }
  return loss;
}

namespace {

constexpr char kMagic[8] = {'P', 'O', 'T', 'R', 'L', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a64_bytes(const std::string& data) {
  uint64_t hash = 1469598103934665603ull;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

struct Reader {
  const std::string& data;
  size_t pos = 0;
  explicit Reader(const std::string& d) : data(d) {}
  void need(size_t n) const {
    if (pos + n > data.size()) throw IoError("checkpoint truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<unsigned char>(data[pos + static_cast<size_t>(i)]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<uint64_t>(static_cast<unsigned char>(data[pos + static_cast<size_t>(i)]))
           << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  ParamLayout layout(ck.model.cfg);
  if (ck.model.params.size() != layout.total) {
    throw InputError("checkpoint: parameter count does not match the config");
  }
  if (ck.adam && (ck.adam->m.size() != layout.total || ck.adam->v.size() != layout.total)) {
    throw InputError("checkpoint: optimizer state size mismatch");
  }

  json header;
  header["vocab"] = ck.model.cfg.vocab;
  header["emb"] = ck.model.cfg.emb;
  header["hidden"] = ck.model.cfg.hidden;
  header["max_response"] = ck.model.cfg.max_response;
  header["step"] = ck.step;
  header["phase"] = ck.phase;
  header["param_count"] = layout.total;
  header["has_adam"] = ck.adam.has_value();
  header["adam_t"] = ck.adam ? ck.adam->t : 0;
  std::string header_text = header.dump();

  std::string buf;
  buf.reserve(64 + header_text.size() + layout.total * 8 * (ck.adam ? 3 : 1));
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kVersion);
  put_u64(buf, header_text.size());
  buf += header_text;
  for (Real p : ck.model.params) put_f64(buf, static_cast<double>(p));
  if (ck.adam) {
    for (Real p : ck.adam->m) put_f64(buf, static_cast<double>(p));
    for (Real p : ck.adam->v) put_f64(buf, static_cast<double>(p));
  }
  put_u64(buf, fnv1a64_bytes(buf));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (data.size() < sizeof(kMagic) + 4 + 8 + 8) throw IoError("checkpoint truncated");
  std::string body = data.substr(0, data.size() - 8);
  Reader tail(data);
  tail.pos = data.size() - 8;
  if (tail.u64() != fnv1a64_bytes(body)) {
    throw IoError("checkpoint checksum mismatch: " + path.string());
  }

  Reader rd(body);
  if (std::memcmp(body.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  rd.pos = sizeof(kMagic);
  uint32_t version = rd.u32();
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  uint64_t hlen = rd.u64();
  rd.need(hlen);
  json header;
  try {
    header = json::parse(body.substr(rd.pos, hlen));
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what());
  }
  rd.pos += hlen;

  Checkpoint ck;
  try {
    ck.model.cfg.vocab = header.at("vocab").get<int>();
    ck.model.cfg.emb = header.at("emb").get<int>();
    ck.model.cfg.hidden = header.at("hidden").get<int>();
    ck.model.cfg.max_response = header.at("max_response").get<int>();
    ck.step = header.at("step").get<int64_t>();
    ck.phase = header.at("phase").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what());
  }
  ParamLayout layout(ck.model.cfg);
  if (header.at("param_count").get<uint64_t>() != layout.total) {
    throw IoError("checkpoint parameter count disagrees with its config");
  }
  ck.model.params.resize(layout.total);
  for (auto& p : ck.model.params) p = static_cast<Real>(rd.f64());
  if (header.at("has_adam").get<bool>()) {
    algo::AdamState st;
    st.m.resize(layout.total);
    st.v.resize(layout.total);
    for (auto& p : st.m) p = static_cast<Real>(rd.f64());
    for (auto& p : st.v) p = static_cast<Real>(rd.f64());
    st.t = header.at("adam_t").get<int64_t>();
    ck.adam = std::move(st);
  }
  if (rd.pos != body.size()) throw IoError("checkpoint has trailing bytes");
  return ck;
}

}  // namespace potrl::policy
