#pragma once

#include <span>
#include <vector>

#include "dplan/model.hpp"
#include "dplan/tensor.hpp"

namespace dplan {

struct GKDConfig {
  double beta = 0.5;                // JSD interpolation weight
  double lambda = 0.5;              // fraction of on-policy student sequences
  double on_policy_temperature = 1.0;
  int max_new_tokens = 512;

  void validate() const {
    require(beta >= 0.0 && beta <= 1.0, "gkd: beta outside [0,1]");
    require(lambda >= 0.0 && lambda <= 1.0, "gkd: lambda outside [0,1]");
    require(on_policy_temperature >= 0.0, "gkd: negative temperature");
    require(max_new_tokens > 0, "gkd: max_new_tokens must be positive");
  }
};

struct RLConfig {
  double rollout_temperature = 0.7;
  int max_new_tokens = 512;

  void validate() const {
    require(rollout_temperature > 0.0, "rl: rollout temperature must be positive");
    require(max_new_tokens > 0, "rl: max_new_tokens must be positive");
  }
};

// Student logits rows at response positions: row n predicts response token n
// given the prompt and the response prefix. Prompt positions are excluded by
// construction, so no loss below can touch them.
inline Tensor response_logits(Tape* tape, const PlannerModel& model, std::span<const int> prompt,
                              std::span<const int> response) {
  require(!prompt.empty(), "response_logits: empty prompt");
  require(!response.empty(), "response_logits: empty response");
  std::vector<int> all(prompt.begin(), prompt.end());
  all.insert(all.end(), response.begin(), response.end());
  Tensor logits = model.forward(all, tape);
  return slice_rows(tape, logits, static_cast<int>(prompt.size()) - 1,
                    static_cast<int>(response.size()));
}

// Mean cross-entropy over response positions only.
inline Tensor sft_loss(Tape* tape, const PlannerModel& model, std::span<const int> prompt,
                       std::span<const int> response) {
  require(!response.empty(), "sft_loss: empty response");
  Tensor rows = response_logits(tape, model, prompt, response);
  return cross_entropy(tape, rows, std::vector<int>(response.begin(), response.end()));
}

// Token-averaged generalized JSD between teacher and student next-token
// distributions along a fixed response. The teacher rows are constants; the
// response itself is a constant prefix (no gradient flows into sampling).
inline Tensor gkd_loss_on_response(Tape* tape, const PlannerModel& teacher,
                                   const PlannerModel& student, std::span<const int> prompt,
                                   std::span<const int> response, double beta) {
  require(teacher.config().vocab_size == student.config().vocab_size,
          "gkd: teacher and student must share the vocabulary");
  Tensor student_rows = response_logits(tape, student, prompt, response);
  Tensor teacher_rows = response_logits(nullptr, teacher, prompt, response);
  return jsd_rows(tape, student_rows, teacher_rows, beta);
}

struct GKDOutcome {
  Tensor loss;
  bool on_policy = false;
  bool skipped = false;        // sampling produced zero tokens
  int response_tokens = 0;
};

// One GKD example: with probability lambda the supervision context is a fresh
// student sample, otherwise the ground-truth response.
inline GKDOutcome gkd_loss(Tape* tape, const PlannerModel& teacher, const PlannerModel& student,
                           std::span<const int> prompt, std::span<const int> gt_response,
                           const GKDConfig& cfg, Rng& rng) {
  cfg.validate();
  GKDOutcome out;
  std::vector<int> sampled;
  std::span<const int> response = gt_response;
  if (rng.bernoulli(cfg.lambda)) {
    out.on_policy = true;
    int room = student.config().max_seq_len - static_cast<int>(prompt.size());
    SampleResult s = student.sample(prompt, cfg.on_policy_temperature,
                                    std::min(cfg.max_new_tokens, room), rng);
    sampled = std::move(s.ids);
    response = sampled;
  }
  if (response.empty()) {
    out.skipped = true;
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  out.response_tokens = static_cast<int>(response.size());
  out.loss = gkd_loss_on_response(tape, teacher, student, prompt, response, cfg.beta);
  return out;
}

// Per-token advantages A_n = log p_T - log p_S at the sampled tokens, plain
// constants (stop-gradient): positive when the teacher assigns higher
// probability to the token than the student does.
inline std::vector<double> rl_advantages(const PlannerModel& teacher, const PlannerModel& student,
                                         std::span<const int> prompt,
                                         std::span<const int> rollout) {
  require(!rollout.empty(), "rl_advantages: empty rollout");
  require(teacher.config().vocab_size == student.config().vocab_size,
          "rl: teacher and student must share the vocabulary");
  std::vector<double> t = teacher.sequence_logprobs(prompt, rollout);
  std::vector<double> s = student.sequence_logprobs(prompt, rollout);
  std::vector<double> a(t.size());
  for (size_t i = 0; i < a.size(); ++i) a[i] = t[i] - s[i];
  return a;
}

// REINFORCE objective -(1/|y|) sum_n A_n log p_S(y_n | prefix). No KL penalty
// toward a reference policy.
inline Tensor rl_loss(Tape* tape, const PlannerModel& student, std::span<const int> prompt,
                      std::span<const int> rollout, const std::vector<double>& advantages) {
  require(advantages.size() == rollout.size(), "rl_loss: |advantages| != |rollout|");
  require(!rollout.empty(), "rl_loss: empty rollout");
  Tensor rows = response_logits(tape, student, prompt, rollout);
  return weighted_nll(tape, rows, std::vector<int>(rollout.begin(), rollout.end()), advantages);
}

}  // namespace dplan
