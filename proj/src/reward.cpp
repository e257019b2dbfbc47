// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/reward.hpp"

#include <cmath>
#include <stdexcept>

#include "trivia/metrics.hpp"

namespace trivia {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json optional_array(const std::vector<std::optional<double>>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
  return a;
}

std::vector<std::optional<double>> read_optional_array(const json& a, std::size_t n) {
  std::vector<std::optional<double>> out(n);
  if (a.is_null()) return out;
  if (a.size() != n) throw std::invalid_argument("array length does not match responses");
  for (std::size_t i = 0; i < n; ++i)
    if (!a[i].is_null()) out[i] = a[i].get<double>();
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

json QaSet::to_json() const {
  json qa = json::array();
  for (const auto& q : qas) qa.push_back(q.to_json());
  return {{"image_id", image_id}, {"image", image}, {"qas", qa}, {"pool_size", pool_size}};
}

QaSet QaSet::from_json(const json& j) {
  QaSet s;
  s.image_id = j.at("image_id").get<std::string>();
  s.image = j.value("image", "");
  for (const auto& q : j.at("qas")) s.qas.push_back(QaCandidate::from_json(q));
  s.pool_size = j.value("pool_size", s.qas.size());
  return s;
}

json AnswerTranscript::to_json() const {
  return {{"response_index", response_index}, {"qa_index", qa_index},
          {"raw_reply", raw_reply},           {"extracted_answer", extracted_answer},
          {"f1", f1},                         {"empty_reply", empty_reply}};
}

AnswerTranscript AnswerTranscript::from_json(const json& j) {
  AnswerTranscript t;
  t.response_index = j.at("response_index").get<int>();
  t.qa_index = j.at("qa_index").get<int>();
  t.raw_reply = j.value("raw_reply", "");
  t.extracted_answer = j.value("extracted_answer", "");
  t.f1 = j.at("f1").get<double>();
  t.empty_reply = j.value("empty_reply", false);
  return t;
}

ChatRequest answer_request(const std::string& html_table, const QaCandidate& qa,
                           const PromptSet& prompts, const ProbeConfig& config) {
  ChatRequest r;
  r.role = Role::kAnswerer;
  r.messages.push_back(
      {"user",
       {ContentPart::text(fill_template(prompts.answer(qa.lang),
                                        {{"html_table", html_table}, {"question", qa.question}}))}});
  r.temperature = config.temperature;
  r.max_tokens = config.max_tokens;
  return r;
}

RewardResult qa_reward(Gateway& gateway, std::string_view response, const QaSet& qa_set,
                       const PromptSet& prompts, const ProbeConfig& config,
                       const LegalityConfig& legality, int response_index) {
  Legality l = is_legal(response, detect_format(response), legality);
  if (!l.legal) {
    throw std::invalid_argument("qa_reward needs a legal response (" + l.reason + ")");
  }
  const std::string html = grid_to_html(*l.grid);
  RewardResult out;
  double sum = 0.0;
  for (const auto& qa : qa_set.qas) {
    AnswerTranscript t;
    t.response_index = response_index;
    t.qa_index = qa.qa_index;
    t.raw_reply = gateway.chat(answer_request(html, qa, prompts, config)).choices.at(0);
    t.extracted_answer = extract_answer(t.raw_reply);
    t.empty_reply = t.extracted_answer.empty();
    t.f1 = t.empty_reply ? 0.0 : answer_f1(t.extracted_answer, qa.answer);
    sum += t.f1;
    out.transcripts.push_back(std::move(t));
  }
  out.reward = qa_set.qas.empty() ? 0.0 : sum / static_cast<double>(qa_set.qas.size());
  return out;
}

json ResponseGroup::to_json() const {
  json tr = json::array();
  for (const auto& per : transcripts) {
    json a = json::array();
    for (const auto& t : per) a.push_back(t.to_json());
    tr.push_back(std::move(a));
  }
  json legal_arr = json::array();
  for (bool b : legal) legal_arr.push_back(b);
  return {{"image_id", image_id},
          {"qa_set_ref", qa_set_ref},
          {"responses", responses},
          {"legal", legal_arr},
          {"illegal_reasons", illegal_reasons},
          {"rewards", optional_array(rewards)},
          {"advantages", optional_array(advantages)},
          {"transcripts", tr},
          {"degenerate", degenerate}};
}

ResponseGroup ResponseGroup::from_json(const json& j) {
  ResponseGroup g;
  g.image_id = j.at("image_id").get<std::string>();
  g.qa_set_ref = j.value("qa_set_ref", "");
  g.responses = j.at("responses").get<std::vector<std::string>>();
  const std::size_t n = g.responses.size();
  g.legal = j.at("legal").get<std::vector<bool>>();
  if (g.legal.size() != n) throw std::invalid_argument("legal flags do not match responses");
  g.illegal_reasons = j.value("illegal_reasons", std::vector<std::string>(n));
  g.rewards = read_optional_array(j.value("rewards", json()), n);
  g.advantages = read_optional_array(j.value("advantages", json()), n);
  g.transcripts.resize(n);
  if (j.contains("transcripts")) {
    const json& tr = j["transcripts"];
    for (std::size_t i = 0; i < n && i < tr.size(); ++i)
      for (const auto& t : tr[i]) g.transcripts[i].push_back(AnswerTranscript::from_json(t));
  }
  g.degenerate = j.value("degenerate", false);
  for (std::size_t i = 0; i < n; ++i) {
    if (g.rewards[i] && !g.legal[i]) {
      throw std::invalid_argument("reward present on an illegal response");
    }
  }
  return g;
}

ResponseGroup make_group(std::string image_id, std::vector<std::string> responses,
                         const LegalityConfig& legality) {
  ResponseGroup g;
  g.image_id = std::move(image_id);
  g.responses = std::move(responses);
  const std::size_t n = g.responses.size();
  g.legal.resize(n);
  g.illegal_reasons.resize(n);
  g.rewards.resize(n);
  g.advantages.resize(n);
  g.transcripts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Legality l = is_legal(g.responses[i], detect_format(g.responses[i]), legality);
    g.legal[i] = l.legal;
    if (!l.legal) g.illegal_reasons[i] = std::string(to_string(l.gate));
  }
  return g;
}

std::string_view to_string(AdvantageMode mode) {
  return mode == AdvantageMode::kMeanCentered ? "mean_centered" : "std_normalized";
}

AdvantageMode parse_advantage_mode(std::string_view name) {
  if (name == "std_normalized") return AdvantageMode::kStdNormalized;
  if (name == "mean_centered") return AdvantageMode::kMeanCentered;
  throw std::invalid_argument("unknown advantage mode: " + std::string(name));
}

FilteredView filter_illegal(const ResponseGroup& group, bool drop_zero_reward) {
  FilteredView v;
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (!group.legal[i] || !group.rewards[i]) continue;
    if (drop_zero_reward && *group.rewards[i] == 0.0) continue;
    v.indices.push_back(i);
    v.rewards.push_back(*group.rewards[i]);
  }
  return v;
}

std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       const AdvantageConfig& config) {
  std::vector<double> out(rewards.size(), 0.0);
  if (rewards.size() < 2) return out;
  const double mu = mean(rewards);
  double var = 0.0;
  for (double r : rewards) var += (r - mu) * (r - mu);
  var /= static_cast<double>(rewards.size());
  const double scale =
      config.mode == AdvantageMode::kStdNormalized ? 1.0 / (std::sqrt(var) + config.eps) : 1.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mu) * scale;
  return out;
}

void assign_advantages(ResponseGroup& group, const AdvantageConfig& config) {
  group.advantages.assign(group.size(), std::nullopt);
  FilteredView v = filter_illegal(group, config.drop_zero_reward);
  group.degenerate = v.indices.size() <= 1;
  std::vector<double> adv = compute_advantages(v.rewards, config);
  for (std::size_t k = 0; k < v.indices.size(); ++k) group.advantages[v.indices[k]] = adv[k];
}

double advantage_variance_filtered(const std::vector<double>& legal_rewards) {
  if (legal_rewards.empty()) return 0.0;
  const double mu = mean(legal_rewards);
  double s = 0.0;
  for (double r : legal_rewards) s += (r - mu) * (r - mu);
  return s / static_cast<double>(legal_rewards.size());
}

double advantage_variance_naive(const std::vector<double>& legal_rewards, std::size_t n_illegal) {
  if (legal_rewards.empty()) return 0.0;
  double total = 0.0;
  for (double r : legal_rewards) total += r;
  const double baseline = total / static_cast<double>(legal_rewards.size() + n_illegal);
  double s = 0.0;
  for (double r : legal_rewards) s += (r - baseline) * (r - baseline);
  return s / static_cast<double>(legal_rewards.size());
}

ordered_json training_record(const ResponseGroup& group, std::size_t index) {
  ordered_json breakdown = ordered_json::array();
  for (const auto& t : group.transcripts.at(index)) {
    breakdown.push_back(ordered_json{{"qa_index", t.qa_index}, {"f1", t.f1}});
  }
  ordered_json r;
  r["schema"] = "trivia/v1";
  r["image_id"] = group.image_id;
  r["response_index"] = index;
  r["response_text"] = group.responses.at(index);
  r["reward"] = group.rewards.at(index).value_or(0.0);
  r["advantage"] = group.advantages.at(index).value_or(0.0);
  r["qa_breakdown"] = std::move(breakdown);
  r["degenerate"] = group.degenerate;
  return r;
}

std::size_t emit_training_records(const std::vector<ResponseGroup>& groups, std::ostream& sink) {
  std::size_t count = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g.advantages[i]) continue;
      sink << training_record(g, i).dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
      ++count;
    }
  }
  sink.flush();
  if (!sink) throw std::runtime_error("training record sink failed");
  return count;
}

}  // namespace trivia
