#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstring>

#include "dplan/model.hpp"

using namespace dplan;

namespace {

ModelConfig tiny_config(uint64_t seed = 1) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 11;
  c.max_seq_len = 32;
  c.seed = seed;
  return c;
}

void zero_params(PlannerModel& m) {
  for (const Tensor& p : m.params()) {
    Tensor& t = const_cast<Tensor&>(p);
    for (double& v : t.mutable_data()) v = 0.0;
  }
}

}  // namespace

TEST_CASE("config validation and parameter counts") {
  ModelConfig bad = tiny_config();
  bad.n_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(PlannerModel(bad), Error);

  PlannerModel m(tiny_config());
  CHECK(m.param_count() == tiny_config().param_count());

  // default teacher/student land near the intended 5x compression
  double ratio = static_cast<double>(ModelConfig::teacher_default().param_count()) /
                 static_cast<double>(ModelConfig::student_default().param_count());
  CHECK(ratio > 5.0 * 0.85);
  CHECK(ratio < 5.0 * 1.15);
}

TEST_CASE("forward basics") {
  PlannerModel m(tiny_config());
  SECTION("single token gives one finite logits row") {
    std::vector<int> toks = {1};
    Tensor logits = m.forward(toks, nullptr);
    CHECK(logits.shape() == std::vector<int>{1, 11});
    for (double v : logits.data()) CHECK(std::isfinite(v));
  }
  SECTION("sequence too long / id out of range") {
    std::vector<int> toosmall;
    CHECK_THROWS_AS(m.forward(toosmall, nullptr), Error);
    std::vector<int> toolong(33, 1);
    CHECK_THROWS_AS(m.forward(toolong, nullptr), Error);
    std::vector<int> badid = {1, 11};
    CHECK_THROWS_AS(m.forward(badid, nullptr), Error);
  }
}

TEST_CASE("causality: earlier logits rows are bit-identical under later edits") {
  PlannerModel m(tiny_config(3));
  Rng rng(5);
  std::vector<int> toks(20);
  for (int& t : toks) t = rng.uniform_int(11);
  Tensor base = m.forward(toks, nullptr);
  for (int edit_pos : {10, 14, 19}) {
    std::vector<int> mod = toks;
    mod[edit_pos] = (mod[edit_pos] + 1) % 11;
    Tensor alt = m.forward(mod, nullptr);
    for (int i = 0; i < edit_pos; ++i)
      for (int j = 0; j < 11; ++j)
        CHECK(base.data()[i * 11 + j] == alt.data()[i * 11 + j]);
  }
}

TEST_CASE("zero-weight model is uniform: every response logprob is -ln V") {
  PlannerModel m(tiny_config());
  zero_params(m);
  std::vector<int> prompt = {1, 2, 3};
  std::vector<int> response = {4, 5, 6, 2};
  auto lp = m.sequence_logprobs(prompt, response);
  REQUIRE(lp.size() == 4);
  for (double v : lp) CHECK(v == Catch::Approx(-std::log(11.0)).margin(1e-12));
}

TEST_CASE("sequence_logprobs matches gathered log_softmax(forward) exactly") {
  PlannerModel m(tiny_config(9));
  std::vector<int> prompt = {1, 4, 7, 2};
  std::vector<int> response = {3, 3, 9, 2};
  auto lp = m.sequence_logprobs(prompt, response);
  REQUIRE(lp.size() == response.size());

  std::vector<int> all = prompt;
  all.insert(all.end(), response.begin(), response.end());
  Tensor logits = m.forward(all, nullptr);
  Tensor lsm = log_softmax(nullptr, logits);
  for (size_t n = 0; n < response.size(); ++n) {
    double expect = lsm.data()[(prompt.size() - 1 + n) * 11 + response[n]];
    CHECK(lp[n] == expect);
  }
  for (double v : lp) {
    CHECK(std::exp(v) > 0.0);
    CHECK(std::exp(v) <= 1.0);
  }

  std::vector<int> empty;
  CHECK(m.sequence_logprobs(prompt, empty).empty());
}

TEST_CASE("greedy sampling is deterministic and respects the cap") {
  PlannerModel m(tiny_config(11));
  std::vector<int> prompt = {1, 5, 2};
  Rng r1(0), r2(99);  // greedy must ignore the rng entirely
  SampleResult a = m.sample(prompt, 0.0, 5, r1);
  SampleResult b = m.sample(prompt, 0.0, 5, r2);
  CHECK(a.ids == b.ids);
  CHECK(a.logprobs == b.logprobs);
  if (!a.hit_eos) CHECK(a.ids.size() == 5);

  // greedy tokens are argmaxes of the corresponding full-forward rows
  std::vector<int> all = prompt;
  for (size_t n = 0; n < a.ids.size(); ++n) {
    Tensor logits = m.forward(all, nullptr);
    const double* row = logits.data().data() + (all.size() - 1) * 11;
    double best = row[a.ids[n]];
    for (int j = 0; j < 11; ++j) CHECK(row[j] <= best + 1e-9);
    all.push_back(a.ids[n]);
  }
}

TEST_CASE("zero-layer model with crafted bias samples at softmax frequencies") {
  // n_layers = 0 and zero weights make the logits equal head.b on every step.
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 0;
  cfg.vocab_size = 3;
  PlannerModel m(cfg);
  zero_params(m);
  {
    Tensor& bias = const_cast<Tensor&>(m.param("head.b"));
    auto d = bias.mutable_data();
    d[0] = 0.3;
    d[1] = -0.4;
    d[2] = 1.1;
  }
  std::vector<int> prompt = {0};
  Tensor row = m.forward(prompt, nullptr);
  std::array<double, 3> p{};
  double total = 0;
  for (int j = 0; j < 3; ++j) total += std::exp(row.data()[j]);
  for (int j = 0; j < 3; ++j) p[j] = std::exp(row.data()[j]) / total;

  Rng rng(123);
  const int draws = 100000;
  std::array<int, 3> counts{};
  for (int i = 0; i < draws; ++i) {
    SampleResult s = m.sample(prompt, 1.0, 1, rng);
    counts[s.ids[0]]++;
  }
  for (int j = 0; j < 3; ++j) {
    double sigma = std::sqrt(p[j] * (1 - p[j]) * draws);
    CHECK(std::fabs(counts[j] - p[j] * draws) < 3 * sigma + 1.0);
  }
}

TEST_CASE("tempered sampling returns raw-model logprobs") {
  PlannerModel m(tiny_config(21));
  std::vector<int> prompt = {1, 3, 2};
  Rng rng(7);
  SampleResult s = m.sample(prompt, 0.7, 6, rng);
  // recompute under the raw model via teacher forcing
  auto lp = m.sequence_logprobs(prompt, s.ids);
  REQUIRE(lp.size() == s.logprobs.size());
  for (size_t n = 0; n < lp.size(); ++n)
    CHECK(s.logprobs[n] == Catch::Approx(lp[n]).margin(1e-9));
}

TEST_CASE("seeded model has reproducible construction and golden logits") {
  PlannerModel a(tiny_config(42)), b(tiny_config(42));
  std::vector<int> toks = {1, 2, 3, 4, 5};
  Tensor la = a.forward(toks, nullptr), lb = b.forward(toks, nullptr);
  REQUIRE(la.numel() == lb.numel());
  for (size_t i = 0; i < la.numel(); ++i) CHECK(la.data()[i] == lb.data()[i]);

  // golden hash recorded at first build; pins bit-exact inference for this
  // toolchain and ISA
  uint64_t h = 0xcbf29ce484222325ull;
  for (double v : la.data()) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
  INFO("golden logits hash: " << hex64(h));
  CHECK(hex64(h) == DPLAN_GOLDEN_LOGITS_HASH);
}

TEST_CASE("copy_params_from transfers exactly") {
  PlannerModel a(tiny_config(1)), b(tiny_config(2));
  b.copy_params_from(a);
  std::vector<int> toks = {1, 2, 3};
  Tensor la = a.forward(toks, nullptr), lb = b.forward(toks, nullptr);
  for (size_t i = 0; i < la.numel(); ++i) CHECK(la.data()[i] == lb.data()[i]);

  PlannerModel c((ModelConfig::student_default()));
  CHECK_THROWS_AS(c.copy_params_from(a), Error);
}
