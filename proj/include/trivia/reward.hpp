// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// QA reward for recognized tables, illegal-response filtering and
// group-relative advantages, ending at line-delimited training records.

#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "trivia/data_engine.hpp"
#include "trivia/gateway.hpp"
#include "trivia/markup.hpp"
#include "trivia/prompts.hpp"

namespace trivia {

struct QaSet {
  std::string image_id;
  std::string image;
  std::vector<QaCandidate> qas;
  std::size_t pool_size = 0;

  nlohmann::json to_json() const;
  static QaSet from_json(const nlohmann::json& j);
};

struct AnswerTranscript {
  int response_index = 0;
  int qa_index = 0;
  std::string raw_reply;
  std::string extracted_answer;
  double f1 = 0.0;
  bool empty_reply = false;

  nlohmann::json to_json() const;
  static AnswerTranscript from_json(const nlohmann::json& j);
};

struct RewardResult {
  double reward = 0.0;
  std::vector<AnswerTranscript> transcripts;
};

ChatRequest answer_request(const std::string& html_table, const QaCandidate& qa,
                           const PromptSet& prompts, const ProbeConfig& config = {});

/// Mean answer F1 over the QA set, the answerer seeing the response rendered
/// as HTML. The response must be legal (std::invalid_argument otherwise).
/// An empty answerer reply scores 0 for that QA. An empty QA set scores 0.
RewardResult qa_reward(Gateway& gateway, std::string_view response, const QaSet& qa_set,
                       const PromptSet& prompts, const ProbeConfig& config = {},
                       const LegalityConfig& legality = {}, int response_index = 0);

struct ResponseGroup {
  std::string image_id;
  std::string qa_set_ref;
  std::vector<std::string> responses;
  std::vector<bool> legal;
  std::vector<std::string> illegal_reasons;  // gate name, empty when legal
  std::vector<std::optional<double>> rewards;
  std::vector<std::optional<double>> advantages;
  std::vector<std::vector<AnswerTranscript>> transcripts;
  bool degenerate = false;

  std::size_t size() const { return responses.size(); }
  nlohmann::json to_json() const;
  static ResponseGroup from_json(const nlohmann::json& j);
};

/// Builds a group with legality flags; rewards and advantages unset.
ResponseGroup make_group(std::string image_id, std::vector<std::string> responses,
                         const LegalityConfig& legality = {});

enum class AdvantageMode { kStdNormalized, kMeanCentered };

std::string_view to_string(AdvantageMode mode);
AdvantageMode parse_advantage_mode(std::string_view name);

struct AdvantageConfig {
  AdvantageMode mode = AdvantageMode::kStdNormalized;
  double eps = 1e-6;
  /// Also exclude legal responses whose reward is exactly 0.
  bool drop_zero_reward = false;
};

struct FilteredView {
  std::vector<std::size_t> indices;
  std::vector<double> rewards;
};

/// Legal responses that carry a reward (and, with drop_zero_reward, a
/// nonzero one).
FilteredView filter_illegal(const ResponseGroup& group, bool drop_zero_reward = false);

/// (r_i - mean) / (population std + eps), or r_i - mean when mean-centered.
/// Fewer than two values give all zeros.
std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       const AdvantageConfig& config = {});

/// Fills advantages for the filtered view; a view of at most one response
/// flags the group degenerate with zero advantages.
void assign_advantages(ResponseGroup& group, const AdvantageConfig& config = {});

/// Dispersion of the mean-centered advantages the legal responses receive:
/// mean over legal i of (r_i - baseline)^2. Filtering takes the baseline over
/// legal rewards only; naive inclusion counts each illegal response as a
/// reward-0 member of the baseline.
double advantage_variance_filtered(const std::vector<double>& legal_rewards);
double advantage_variance_naive(const std::vector<double>& legal_rewards, std::size_t n_illegal);

/// One line per response that received an advantage, in group then response
/// order. Returns the count written; throws std::runtime_error when the sink
/// fails.
std::size_t emit_training_records(const std::vector<ResponseGroup>& groups, std::ostream& sink);

nlohmann::ordered_json training_record(const ResponseGroup& group, std::size_t index);

}  // namespace trivia
