#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dplan/rng.hpp"
#include "dplan/tensor.hpp"
#include "dplan/tokenizer.hpp"

namespace dplan {

struct ModelConfig {
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int vocab_size = 76;
  int max_seq_len = 1024;
  uint64_t seed = 0;

  void validate() const {
    require(n_layers >= 0 && d_model > 0 && n_heads > 0 && d_ff > 0, "model: bad dimensions");
    require(d_model % n_heads == 0, "model: d_model not divisible by n_heads");
    require(vocab_size > 0 && max_seq_len > 0, "model: bad vocab/context sizes");
  }

  // Closed-form parameter count; the constructor's allocations must sum to it.
  int64_t param_count() const {
    int64_t per_layer = 2LL * d_model + 4LL * d_model * d_model + 4LL * d_model +
                        2LL * d_model + 1LL * d_model * d_ff + d_ff + 1LL * d_ff * d_model +
                        d_model;
    return 1LL * vocab_size * d_model + 1LL * max_seq_len * d_model + n_layers * per_layer +
           2LL * d_model + 1LL * d_model * vocab_size + vocab_size;
  }

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig teacher_default(uint64_t seed = 0) { return {4, 128, 4, 512, 76, 1024, seed}; }
  static ModelConfig student_default(uint64_t seed = 0) { return {2, 64, 2, 256, 76, 1024, seed}; }
};

struct SampleResult {
  std::vector<int> ids;            // includes the terminating EOS when reached
  std::vector<double> logprobs;    // raw-model (temperature 1) log-probabilities
  bool hit_eos = false;
};

// Decoder-only autoregressive transformer: learned absolute positions,
// pre-norm blocks, exact-GELU MLP, causal attention.
class PlannerModel {
 public:
  PlannerModel() = default;

  explicit PlannerModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(Rng::mix(0x706c616e6e6572ull, cfg.seed));
    auto weight = [&](std::string name, int r, int c) {
      add_param(std::move(name), Tensor::randn(rng, {r, c}, 0.02, true));
    };
    auto vec = [&](std::string name, int n, double fill) {
      Tensor t = Tensor::zeros({n}, true);
      if (fill != 0.0)
        for (double& v : t.mutable_data()) v = fill;
      add_param(std::move(name), t);
    };
    weight("tok_emb", cfg.vocab_size, cfg.d_model);
    weight("pos_emb", cfg.max_seq_len, cfg.d_model);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string p = "layers." + std::to_string(l) + ".";
      vec(p + "ln1.g", cfg.d_model, 1.0);
      vec(p + "ln1.b", cfg.d_model, 0.0);
      for (const char* w : {"wq", "wk", "wv", "wo"}) weight(p + "attn." + w, cfg.d_model, cfg.d_model);
      for (const char* b : {"bq", "bk", "bv", "bo"}) vec(p + "attn." + b, cfg.d_model, 0.0);
      vec(p + "ln2.g", cfg.d_model, 1.0);
      vec(p + "ln2.b", cfg.d_model, 0.0);
      weight(p + "mlp.w1", cfg.d_model, cfg.d_ff);
      vec(p + "mlp.b1", cfg.d_ff, 0.0);
      weight(p + "mlp.w2", cfg.d_ff, cfg.d_model);
      vec(p + "mlp.b2", cfg.d_model, 0.0);
    }
    vec("lnf.g", cfg.d_model, 1.0);
    vec("lnf.b", cfg.d_model, 0.0);
    weight("head.w", cfg.d_model, cfg.vocab_size);
    vec("head.b", cfg.vocab_size, 0.0);

    int64_t total = 0;
    for (const Tensor& t : params_) total += static_cast<int64_t>(t.numel());
    require(total == cfg.param_count(), "model: allocation does not match the closed form");
  }

  const ModelConfig& config() const { return cfg_; }

  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  const Tensor& param(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    fail("model: no parameter named " + name);
  }

  int64_t param_count() const {
    int64_t total = 0;
    for (const Tensor& t : params_) total += static_cast<int64_t>(t.numel());
    return total;
  }

  // Overwrites parameter values; configs must agree except for the seed.
  void copy_params_from(const PlannerModel& other) {
    ModelConfig a = cfg_, b = other.cfg_;
    a.seed = b.seed = 0;
    require(a == b, "model: config mismatch in copy_params_from");
    for (size_t i = 0; i < params_.size(); ++i) {
      auto dst = params_[i].mutable_data();
      auto src = other.params_[i].data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  // Logits for every position: row t is the pre-softmax distribution over
  // token t+1. Causal masking keeps rows independent of later tokens.
  Tensor forward(std::span<const int> tokens, Tape* tape) const {
    return forward_impl(tokens, tape, nullptr);
  }

 private:
  struct CacheCapture {
    std::vector<std::vector<double>> k, v;  // per layer, [len * d_model]
  };

  Tensor forward_impl(std::span<const int> tokens, Tape* tape, CacheCapture* cap) const {
    const int len = static_cast<int>(tokens.size());
    require(len > 0, "forward: empty token sequence");
    require(len <= cfg_.max_seq_len, "forward: sequence exceeds max_seq_len");
    for (int id : tokens)
      require(id >= 0 && id < cfg_.vocab_size, "forward: token id out of range");

    std::vector<int> ids(tokens.begin(), tokens.end());
    Tensor x = add(tape, embedding_gather(tape, param_ref(kTokEmb), ids),
                   slice_rows(tape, param_ref(kPosEmb), 0, len));

    Tensor mask = causal_mask(len);
    const int dh = cfg_.d_model / cfg_.n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    int idx = kFirstLayer;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const Tensor& ln1g = params_[idx++];
      const Tensor& ln1b = params_[idx++];
      const Tensor& wq = params_[idx++];
      const Tensor& wk = params_[idx++];
      const Tensor& wv = params_[idx++];
      const Tensor& wo = params_[idx++];
      const Tensor& bq = params_[idx++];
      const Tensor& bk = params_[idx++];
      const Tensor& bv = params_[idx++];
      const Tensor& bo = params_[idx++];
      const Tensor& ln2g = params_[idx++];
      const Tensor& ln2b = params_[idx++];
      const Tensor& w1 = params_[idx++];
      const Tensor& b1 = params_[idx++];
      const Tensor& w2 = params_[idx++];
      const Tensor& b2 = params_[idx++];

      Tensor h = layer_norm(tape, x, ln1g, ln1b);
      Tensor q = add_bias(tape, matmul(tape, h, wq), bq);
      Tensor k = add_bias(tape, matmul(tape, h, wk), bk);
      Tensor v = add_bias(tape, matmul(tape, h, wv), bv);
      if (cap) {
        cap->k.emplace_back(k.data().begin(), k.data().end());
        cap->v.emplace_back(v.data().begin(), v.data().end());
      }
      std::vector<Tensor> heads;
      heads.reserve(cfg_.n_heads);
      for (int hh = 0; hh < cfg_.n_heads; ++hh) {
        Tensor qh = slice_cols(tape, q, hh * dh, dh);
        Tensor kh = slice_cols(tape, k, hh * dh, dh);
        Tensor vh = slice_cols(tape, v, hh * dh, dh);
        Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_dh);
        Tensor probs = softmax(tape, add(tape, scores, mask));
        heads.push_back(matmul(tape, probs, vh));
      }
      Tensor attn = concat_cols(tape, heads);
      x = add(tape, x, add_bias(tape, matmul(tape, attn, wo), bo));

      Tensor h2 = layer_norm(tape, x, ln2g, ln2b);
      Tensor inner = gelu(tape, add_bias(tape, matmul(tape, h2, w1), b1));
      x = add(tape, x, add_bias(tape, matmul(tape, inner, w2), b2));
    }
    Tensor xf = layer_norm(tape, x, params_[idx], params_[idx + 1]);
    return add_bias(tape, matmul(tape, xf, params_[idx + 2]), params_[idx + 3]);
  }

 public:
  // Log-probability of each response token given the prompt and the response
  // prefix. Prompt tokens contribute no entries.
  std::vector<double> sequence_logprobs(std::span<const int> prompt,
                                        std::span<const int> response) const {
    if (response.empty()) return {};
    require(!prompt.empty(), "sequence_logprobs: empty prompt");
    std::vector<int> all(prompt.begin(), prompt.end());
    all.insert(all.end(), response.begin(), response.end());
    Tensor logits = forward(all, nullptr);
    const int v = cfg_.vocab_size;
    std::vector<double> out(response.size());
    std::vector<double> lsm(v);
    for (size_t n = 0; n < response.size(); ++n) {
      const double* row = logits.data().data() + (prompt.size() - 1 + n) * v;
      detail::log_softmax_row(row, lsm.data(), v);
      out[n] = lsm[response[n]];
    }
    return out;
  }

  // Autoregressive decoding. temperature == 0 is greedy with ties broken to
  // the lowest id; the returned per-token log-probs are always under the raw
  // model (temperature 1), whatever the sampling temperature.
  SampleResult sample(std::span<const int> prompt, double temperature, int max_new_tokens,
                      Rng& rng, int eos_id = Vocab::kEos) const {
    require(temperature >= 0.0, "sample: negative temperature");
    require(!prompt.empty(), "sample: empty prompt");
    require(static_cast<int>(prompt.size()) <= cfg_.max_seq_len, "sample: prompt exceeds context");

    DecodeState state(*this);
    std::vector<double> logits = state.prefill(prompt);
    SampleResult out;
    std::vector<double> lsm(cfg_.vocab_size);
    while (static_cast<int>(out.ids.size()) < max_new_tokens) {
      detail::log_softmax_row(logits.data(), lsm.data(), cfg_.vocab_size);
      int tok = pick_token(logits, temperature, rng);
      out.ids.push_back(tok);
      out.logprobs.push_back(lsm[tok]);
      if (tok == eos_id) {
        out.hit_eos = true;
        break;
      }
      if (state.length() >= cfg_.max_seq_len) break;  // context exhausted
      logits = state.step(tok);
    }
    return out;
  }

 private:
  static constexpr int kTokEmb = 0;
  static constexpr int kPosEmb = 1;
  static constexpr int kFirstLayer = 2;
  static constexpr int kParamsPerLayer = 16;

  void add_param(std::string name, Tensor t) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(t));
  }

  const Tensor& param_ref(int idx) const { return params_[idx]; }

  Tensor causal_mask(int len) const {
    Tensor m = Tensor::zeros({len, len});
    auto d = m.mutable_data();
    for (int i = 0; i < len; ++i)
      for (int j = i + 1; j < len; ++j) d[size_t(i) * len + j] = -1e30;
    return m;
  }

  int pick_token(const std::vector<double>& logits, double temperature, Rng& rng) const {
    const int v = cfg_.vocab_size;
    if (temperature == 0.0) {
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (logits[j] > logits[best]) best = j;
      return best;
    }
    double mx = logits[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
    std::vector<double> w(v);
    double total = 0;
    for (int j = 0; j < v; ++j) {
      w[j] = std::exp((logits[j] - mx) / temperature);
      total += w[j];
    }
    double r = rng.uniform() * total;
    double cum = 0;
    for (int j = 0; j < v; ++j) {
      cum += w[j];
      if (r < cum) return j;
    }
    return v - 1;  // guard against accumulated rounding
  }

  // Incremental decoding over cached per-layer key/value rows. Produces the
  // same next-token distributions as the full forward pass; only sample()
  // uses it, so training and evaluation logits always come from forward().
  class DecodeState {
   public:
    explicit DecodeState(const PlannerModel& m) : m_(m) {
      k_.resize(m.cfg_.n_layers);
      v_.resize(m.cfg_.n_layers);
      for (int l = 0; l < m.cfg_.n_layers; ++l) {
        k_[l].reserve(size_t(m.cfg_.max_seq_len) * m.cfg_.d_model);
        v_[l].reserve(size_t(m.cfg_.max_seq_len) * m.cfg_.d_model);
      }
    }

    int length() const { return len_; }

    // Consumes the whole prompt via the batched forward pass, capturing the
    // per-layer key/value rows, and returns the last logits row.
    std::vector<double> prefill(std::span<const int> prompt) {
      const ModelConfig& cfg = m_.cfg_;
      const int len = static_cast<int>(prompt.size());
      CacheCapture cap;
      Tensor logits = m_.forward_impl(prompt, nullptr, &cap);
      for (int l = 0; l < cfg.n_layers; ++l) {
        k_[l] = std::move(cap.k[l]);
        v_[l] = std::move(cap.v[l]);
      }
      len_ = len;
      const double* last = logits.data().data() + size_t(len - 1) * cfg.vocab_size;
      return std::vector<double>(last, last + cfg.vocab_size);
    }

    // Appends one token and returns the logits row for the next position.
    std::vector<double> step(int token) {
      const ModelConfig& cfg = m_.cfg_;
      require(len_ < cfg.max_seq_len, "decode: context exhausted");
      const int d = cfg.d_model, dh = d / cfg.n_heads;
      const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
      const int pos = len_;

      Eigen::RowVectorXd x(d);
      {
        auto te = m_.params_[kTokEmb].data();
        auto pe = m_.params_[kPosEmb].data();
        for (int j = 0; j < d; ++j)
          x(j) = te[size_t(token) * d + j] + pe[size_t(pos) * d + j];
      }
      Eigen::RowVectorXd h(d), q(d), k(d), v(d), attn(d);
      for (int l = 0; l < cfg.n_layers; ++l) {
        const int base = kFirstLayer + l * kParamsPerLayer;
        row_layer_norm(x, m_.params_[base], m_.params_[base + 1], h);
        linear(h, m_.params_[base + 2], m_.params_[base + 6], q);
        linear(h, m_.params_[base + 3], m_.params_[base + 7], k);
        linear(h, m_.params_[base + 4], m_.params_[base + 8], v);
        k_[l].insert(k_[l].end(), k.data(), k.data() + d);
        v_[l].insert(v_[l].end(), v.data(), v.data() + d);
        const int rows = pos + 1;
        for (int hh = 0; hh < cfg.n_heads; ++hh) {
          const int off = hh * dh;
          scores_.resize(rows);
          double mx = -std::numeric_limits<double>::infinity();
          for (int r = 0; r < rows; ++r) {
            const double* kr = k_[l].data() + size_t(r) * d + off;
            double s = 0;
            for (int j = 0; j < dh; ++j) s += q(off + j) * kr[j];
            s *= inv_sqrt_dh;
            scores_[r] = s;
            mx = std::max(mx, s);
          }
          double total = 0;
          for (int r = 0; r < rows; ++r) {
            scores_[r] = std::exp(scores_[r] - mx);
            total += scores_[r];
          }
          for (int j = 0; j < dh; ++j) attn(off + j) = 0;
          for (int r = 0; r < rows; ++r) {
            double p = scores_[r] / total;
            const double* vr = v_[l].data() + size_t(r) * d + off;
            for (int j = 0; j < dh; ++j) attn(off + j) += p * vr[j];
          }
        }
        linear(attn, m_.params_[base + 5], m_.params_[base + 9], h);
        x += h;
        row_layer_norm(x, m_.params_[base + 10], m_.params_[base + 11], h);
        Eigen::RowVectorXd inner(cfg.d_ff);
        linear(h, m_.params_[base + 12], m_.params_[base + 13], inner);
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        for (int j = 0; j < cfg.d_ff; ++j)
          inner(j) = 0.5 * inner(j) * (1.0 + std::erf(inner(j) * inv_sqrt2));
        Eigen::RowVectorXd mlp(d);
        linear(inner, m_.params_[base + 14], m_.params_[base + 15], mlp);
        x += mlp;
      }
      const int fbase = kFirstLayer + cfg.n_layers * kParamsPerLayer;
      row_layer_norm(x, m_.params_[fbase], m_.params_[fbase + 1], h);
      Eigen::RowVectorXd logits(cfg.vocab_size);
      linear(h, m_.params_[fbase + 2], m_.params_[fbase + 3], logits);
      ++len_;
      return std::vector<double>(logits.data(), logits.data() + cfg.vocab_size);
    }

   private:
    static void linear(const Eigen::RowVectorXd& in, const Tensor& w, const Tensor& b,
                       Eigen::RowVectorXd& out) {
      ECMap W(w.data().data(), w.shape()[0], w.shape()[1]);
      out.noalias() = in * W;
      for (int j = 0; j < out.size(); ++j) out(j) += b.data()[j];
    }

    static void row_layer_norm(const Eigen::RowVectorXd& in, const Tensor& g, const Tensor& b,
                               Eigen::RowVectorXd& out) {
      const int n = static_cast<int>(in.size());
      out.resize(n);
      double mean = in.mean();
      double var = 0;
      for (int j = 0; j < n; ++j) var += (in(j) - mean) * (in(j) - mean);
      var /= n;
      double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int j = 0; j < n; ++j) out(j) = (in(j) - mean) * inv * g.data()[j] + b.data()[j];
    }

    const PlannerModel& m_;
    int len_ = 0;
    std::vector<std::vector<double>> k_, v_;
    std::vector<double> scores_;
  };

  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

}  // namespace dplan
