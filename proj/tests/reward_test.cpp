// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "trivia/reward.hpp"

using namespace trivia;

namespace {

// Answers from a lookup keyed by question text.
class Answerer : public ChatBackend {
 public:
  explicit Answerer(std::map<std::string, std::string> replies) : replies_(std::move(replies)) {}
  ChatReply complete(const ChatRequest& r) override {
    const std::string& text = r.messages.at(0).parts.at(0).value;
    last_prompt = text;
    ChatReply rep;
    for (const auto& [q, a] : replies_) {
      if (text.find("Question: " + q) != std::string::npos) {
        rep.choices = {a};
        return rep;
      }
    }
    rep.choices = {"<answer>Not answerable</answer>"};
    return rep;
  }
  std::string last_prompt;

 private:
  std::map<std::string, std::string> replies_;
};

QaCandidate qa(int idx, std::string q, std::string a) {
  QaCandidate c;
  c.qa_index = idx;
  c.question = std::move(q);
  c.answer = std::move(a);
  c.validity = Validity::kValid;
  return c;
}

ResponseGroup rewarded(const std::vector<std::optional<double>>& rewards) {
  ResponseGroup g;
  g.image_id = "img";
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    g.responses.push_back(rewards[i] ? "<fcel>a<nl>" : "<fcel>a");
    g.legal.push_back(rewards[i].has_value());
    g.illegal_reasons.push_back(rewards[i] ? "" : "parse");
    g.rewards.push_back(rewards[i]);
  }
  g.advantages.resize(rewards.size());
  g.transcripts.resize(rewards.size());
  return g;
}

}  // namespace

TEST_CASE("qa_reward") {
  Gateway gw;
  RoleConfig c;
  c.vision = false;
  auto answerer = std::make_shared<Answerer>(std::map<std::string, std::string>{
      {"What is the market cap in Rmb mn?", "<answer>13,650.6</answer>"},
      {"What is the 12 month price target?", "The price is <answer>99</answer>"},
      {"empty?", "<answer></answer>"}});
  gw.configure(Role::kAnswerer, c, answerer);
  QaSet set;
  set.qas = {qa(0, "What is the market cap in Rmb mn?", "13,650.6"),
             qa(1, "What is the 12 month price target?", "24.80")};
  const std::string otsl = "<fcel>Market cap<fcel>13,650.6<nl><fcel>Target<fcel>24.80<nl>";
  RewardResult r = qa_reward(gw, otsl, set, PromptSet::defaults());
  CHECK(r.reward == doctest::Approx(0.5));
  REQUIRE(r.transcripts.size() == 2);
  CHECK(r.transcripts[0].f1 == 1.0);
  CHECK(r.transcripts[1].extracted_answer == "99");
  // The answerer sees HTML even though the response is OTSL.
  CHECK(answerer->last_prompt.find("HTML Table: <table><tr><td>Market cap</td>") != std::string::npos);

  set.qas = {qa(0, "What is the market cap in Rmb mn?", "13,650.6")};
  CHECK(qa_reward(gw, otsl, set, PromptSet::defaults()).reward == 1.0);

  set.qas = {qa(0, "unknown question", "13,650.6")};
  CHECK(qa_reward(gw, otsl, set, PromptSet::defaults()).reward == 0.0);

  set.qas = {qa(0, "empty?", "x")};
  r = qa_reward(gw, otsl, set, PromptSet::defaults());
  CHECK(r.reward == 0.0);
  CHECK(r.transcripts[0].empty_reply);

  CHECK_THROWS_AS(qa_reward(gw, "<fcel>a", set, PromptSet::defaults()), std::invalid_argument);

  // Chinese questions get the Chinese template.
  QaCandidate zh = qa(0, "市值是多少", "13,650.6");
  zh.lang = Lang::kZh;
  set.qas = {zh};
  qa_reward(gw, otsl, set, PromptSet::defaults());
  CHECK(answerer->last_prompt.find("问题: 市值是多少") != std::string::npos);
}

TEST_CASE("reward is invariant under QA permutation") {
  Gateway gw;
  RoleConfig c;
  c.vision = false;
  gw.configure(Role::kAnswerer, c,
               std::make_shared<Answerer>(std::map<std::string, std::string>{
                   {"q0", "<answer>a b</answer>"}, {"q1", "<answer>c</answer>"}, {"q2", "d e f"}}));
  QaSet set;
  set.qas = {qa(0, "q0", "a"), qa(1, "q1", "c"), qa(2, "q2", "d e")};
  const double base = qa_reward(gw, "<fcel>x<nl>", set, PromptSet::defaults()).reward;
  std::swap(set.qas[0], set.qas[2]);
  CHECK(qa_reward(gw, "<fcel>x<nl>", set, PromptSet::defaults()).reward == doctest::Approx(base));
  CHECK(base >= 0.0);
  CHECK(base <= 1.0);
}

TEST_CASE("filter_illegal") {
  ResponseGroup g = rewarded({0.5, std::nullopt, 0.0, 1.0});
  CHECK(filter_illegal(g).indices == std::vector<std::size_t>{0, 2, 3});
  CHECK(filter_illegal(g, true).indices == std::vector<std::size_t>{0, 3});
  std::vector<std::optional<double>> all(16, 0.5);
  CHECK(filter_illegal(rewarded(all)).indices.size() == 16);

  std::vector<std::optional<double>> mostly(16, std::nullopt);
  mostly[3] = 0.7;
  ResponseGroup deg = rewarded(mostly);
  assign_advantages(deg);
  CHECK(deg.degenerate);
  CHECK(*deg.advantages[3] == 0.0);
  for (std::size_t i = 0; i < 16; ++i)
    if (i != 3) CHECK_FALSE(deg.advantages[i]);
}

TEST_CASE("make_group legality") {
  ResponseGroup g = make_group("i", {"<fcel>a<nl>", "garbage", "<table><tr><td>x</td></tr></table>"});
  CHECK(g.legal == std::vector<bool>{true, false, true});
  CHECK(g.illegal_reasons[1] == "parse");
}

TEST_CASE("compute_advantages") {
  auto a = compute_advantages({0.2, 0.4, 0.6});
  CHECK(a[0] == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(std::abs(a[1]) < 1e-9);
  CHECK(a[2] == doctest::Approx(1.2247).epsilon(1e-3));
  for (double x : compute_advantages({0.3, 0.3, 0.3})) CHECK(x == 0.0);
  auto b = compute_advantages({0.0, 1.0});
  CHECK(std::abs(b[0] + 1.0) < 1e-5);
  CHECK(std::abs(b[1] - 1.0) < 1e-5);
  CHECK(compute_advantages({0.4}) == std::vector<double>{0.0});
  AdvantageConfig mc;
  mc.mode = AdvantageMode::kMeanCentered;
  auto c = compute_advantages({0.2, 0.4, 0.6}, mc);
  CHECK(c[0] == doctest::Approx(-0.2));
}

TEST_CASE("advantages of a filtered group sum to zero") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::optional<double>> r;
    for (int i = 0; i < 16; ++i) {
      if (testing::coin(rng, 0.3)) r.push_back(std::nullopt);
      else r.push_back(testing::uniform(rng, 0, 100) / 100.0);
    }
    ResponseGroup g = rewarded(r);
    assign_advantages(g);
    double sum = 0.0;
    for (const auto& a : g.advantages) sum += a.value_or(0.0);
    CHECK(std::abs(sum) <= 16 * 1e-4);
  }
}

TEST_CASE("filtered variance never exceeds naive inclusion") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const int g = testing::uniform(rng, 2, 16);
    const int illegal = testing::uniform(rng, 1, g - 1);
    std::vector<double> legal;
    for (int i = 0; i < g - illegal; ++i) legal.push_back(testing::uniform(rng, 0, 10) / 10.0);
    const double f = advantage_variance_filtered(legal);
    const double n = advantage_variance_naive(legal, static_cast<std::size_t>(illegal));
    CHECK(f <= n + 1e-15);
    double total = 0;
    for (double x : legal) total += x;
    if (total > 0) CHECK(f < n);
  }
  // No illegal members: identical.
  CHECK(advantage_variance_filtered({0.1, 0.5}) == advantage_variance_naive({0.1, 0.5}, 0));
}

TEST_CASE("training records") {
  std::ostringstream out;
  CHECK(emit_training_records({}, out) == 0);

  std::vector<std::optional<double>> all(16, 0.5);
  all[0] = 1.0;
  ResponseGroup full = rewarded(all);
  assign_advantages(full);
  std::vector<std::optional<double>> some(16, std::nullopt);
  some[1] = 0.2;
  some[4] = 0.9;
  some[9] = 0.0;
  ResponseGroup partial = rewarded(some);
  assign_advantages(partial);
  CHECK(emit_training_records({full}, out) == 16);
  std::ostringstream out2;
  CHECK(emit_training_records({partial}, out2) == 3);
  std::istringstream lines(out2.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line.rfind("{\"schema\":\"trivia/v1\",\"image_id\":\"img\",\"response_index\":1,\"response_text\"", 0) == 0);
  auto j = nlohmann::json::parse(line);
  CHECK(j["reward"] == 0.2);
  CHECK(j.contains("qa_breakdown"));
}

TEST_CASE("group JSON round trip") {
  ResponseGroup g = rewarded({0.5, std::nullopt, 1.0});
  g.transcripts[0].push_back(AnswerTranscript{0, 2, "<answer>x</answer>", "x", 1.0, false});
  assign_advantages(g);
  CHECK(ResponseGroup::from_json(g.to_json()).to_json() == g.to_json());
}
