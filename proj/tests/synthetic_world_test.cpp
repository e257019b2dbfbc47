// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "doctest.h"
#include "trivia/markup.hpp"
#include "trivia/prompts.hpp"
#include "trivia/reward.hpp"
#include "trivia/synthetic_world.hpp"

using namespace trivia;

namespace {

bool has(const TokenSet& s, int t) { return std::find(s.begin(), s.end(), t) != s.end(); }

std::shared_ptr<Gateway> world_gateway(std::shared_ptr<const SyntheticWorld> world) {
  auto gw = std::make_shared<Gateway>();
  auto backend = std::make_shared<SyntheticBackend>(world);
  for (Role r : {Role::kPolicy, Role::kTeacher, Role::kValidator, Role::kAnswerer}) {
    RoleConfig c;
    c.vision = r != Role::kAnswerer;
    gw->configure(r, c, backend);
  }
  return gw;
}

}  // namespace

TEST_CASE("lookup_answer") {
  auto world = SyntheticWorld::mock5();
  const TableGrid& a = world.by_id("img-a")->gold;
  CHECK(lookup_answer(a, "What is the 12 month price target for 2023?") == "24.80");
  CHECK(lookup_answer(a, "What is the Market cap (Rmb mn) for 2024E?") == "15,020.1");
  CHECK_FALSE(lookup_answer(a, "What is the Revenue for 2023?"));
  CHECK_FALSE(lookup_answer(a, "What is the capital of France?"));

  // Two-level header: the column label sits in the second header row.
  const TableGrid& b = world.by_id("img-b")->gold;
  CHECK(lookup_answer(b, "What is the South for Q2?") == "298");
  CHECK(lookup_answer(b, "What is the West for Jan?") == "52");

  const TableGrid& d = world.by_id("img-d")->gold;
  CHECK(lookup_answer(d, world_question("净利润", "2023年", Lang::kZh)) == "955");
  CHECK_FALSE(lookup_answer(d, "中国的首都是哪里？"));
}

TEST_CASE("world tables are valid and shaped as intended") {
  auto world = SyntheticWorld::mock5();
  REQUIRE(world.images().size() == 5);
  for (const auto& w : world.images()) CHECK(grid_validate(w.gold).ok());
  CHECK(world.by_id("img-b")->source_doc == world.by_id("img-c")->source_doc);
  CHECK(world.image_records().size() == 5);
  CHECK(world.image_records()[0]["image"] == "images/img-a.png");
}

TEST_CASE("validator plays the cross-check") {
  auto world = std::make_shared<const SyntheticWorld>(SyntheticWorld::mock5());
  auto gw = world_gateway(world);
  const PromptSet prompts = PromptSet::defaults();

  QaCandidate grounded;
  grounded.question = "What is the EPS (Rmb) for 2023?";
  grounded.answer = "1.32";
  auto v = validate_candidate(*gw, grounded, "images/img-a.png", prompts);
  CHECK(v.validity == Validity::kValid);
  CHECK(v.f1_with_image == 1.0);
  CHECK(v.f1_without_image == 0.0);

  QaCandidate hallucinated = grounded;
  hallucinated.answer = "1.33";
  CHECK(validate_candidate(*gw, hallucinated, "images/img-a.png", prompts).invalid_reason == "not-grounded");

  QaCandidate trivia_q;
  trivia_q.question = "What is the capital of France?";
  trivia_q.answer = "Paris";
  CHECK(validate_candidate(*gw, trivia_q, "images/img-a.png", prompts).invalid_reason == "not-visual");

  QaCandidate zh;
  zh.question = world_question("营业收入", "2022年", Lang::kZh);
  zh.answer = "5,210";
  zh.lang = Lang::kZh;
  CHECK(validate_candidate(*gw, zh, "images/img-d.png", prompts).validity == Validity::kValid);
}

TEST_CASE("teacher pool is deterministic and mixes outcomes") {
  auto world = std::make_shared<const SyntheticWorld>(SyntheticWorld::mock5());
  auto gw = world_gateway(world);
  const PromptSet prompts = PromptSet::defaults();
  PoolConfig pc;
  pc.seed = 11;
  auto a = build_candidate_pool(*gw, "img-a", "images/img-a.png", prompts, pc);
  auto b = build_candidate_pool(*gw, "img-a", "images/img-a.png", prompts, pc);
  REQUIRE(a.candidates.size() == b.candidates.size());
  for (std::size_t i = 0; i < a.candidates.size(); ++i)
    CHECK(a.candidates[i].to_json() == b.candidates[i].to_json());
  CHECK(a.calls_parsed + a.calls_none + a.calls_discarded == pc.n_calls);
  CHECK(a.calls_parsed > 8);
  CHECK(a.candidates.size() > 40);
}

TEST_CASE("attention covers the answer cell") {
  auto world = SyntheticWorld::mock5();
  QaCandidate c;
  c.qa_index = 3;
  c.question = "What is the EPS (Rmb) for 2024E?";
  auto att = world.attention_for("img-a", c);
  CHECK(att.n_visual_tokens == 256);
  auto vs = extract_visual_source(att, 0.01);
  // img-a is 5x4: the EPS row spans patch rows [9, 12), column 2024E spans
  // patch columns [12, 16).
  CHECK_FALSE(has(vs, 0));
  CHECK(has(vs, 10 * 16 + 13));
  CHECK(has(vs, 10 * 16 + 1));  // row label
  CHECK(has(vs, 1 * 16 + 13));  // column header
  CHECK_FALSE(has(vs, 5 * 16 + 5));
  CHECK(AttentionMap::from_json(att.to_json()).weights == att.weights);

  c.question = "What is the capital of France?";
  CHECK(extract_visual_source(world.attention_for("img-a", c), 0.01).empty());
}

TEST_CASE("policy and answerer reproduce the gold table") {
  auto world = std::make_shared<const SyntheticWorld>(SyntheticWorld::mock5());
  auto gw = world_gateway(world);
  ChatRequest r;
  r.role = Role::kPolicy;
  r.messages = {ChatMessage{"user", {ContentPart::image("images/img-c.png"), ContentPart::text("x")}}};
  r.n_samples = 8;
  r.temperature = 0.0;
  r.seed = 4;
  auto reply = gw->chat(r);
  REQUIRE(reply.choices.size() == 8);
  int legal = 0;
  for (const auto& s : reply.choices) {
    auto g = parse_markup(s, MarkupFormat::kOtsl);
    if (!g) continue;
    ++legal;
    const TableGrid& gold = world->by_id("img-c")->gold;
    REQUIRE(g.value().cells.size() == gold.cells.size());
    for (std::size_t i = 0; i < gold.cells.size(); ++i) CHECK(g.value().cells[i].content == gold.cells[i].content);
  }
  CHECK(legal >= 5);

  QaSet set;
  set.image_id = "img-c";
  QaCandidate q;
  q.question = "What is the Gadget for Price?";
  q.answer = "12.75";
  set.qas = {q};
  const std::string gold_otsl = serialize(world->by_id("img-c")->gold, MarkupFormat::kOtsl);
  CHECK(qa_reward(*gw, gold_otsl, set, PromptSet::defaults()).reward == 1.0);
}
