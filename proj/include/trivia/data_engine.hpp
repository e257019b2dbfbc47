// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset curation: response-consistency scoring and bucketed sampling, then
// attention-guided QA generation (candidate pool, cross-check validation,
// low-overlap greedy selection).

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "trivia/gateway.hpp"
#include "trivia/markup.hpp"
#include "trivia/metrics.hpp"
#include "trivia/prompts.hpp"

namespace trivia {

// ---- consistency ----------------------------------------------------------

struct ConsistencyScore {
  double score = 0.0;
  int legal_count = 0;
  bool degenerate = false;  // fewer than two legal responses
};

/// Mean pairwise TEDS over the legal responses (format detected per
/// response). Throws std::invalid_argument when fewer than two responses are
/// given.
ConsistencyScore consistency_score(const std::vector<std::string>& responses,
                                   const LegalityConfig& legality = {});

/// Same formula over precomputed pairwise similarities: sim[i][j] for i < j.
double mean_pairwise(const std::vector<std::vector<double>>& sim);

struct ConsistencyRecord {
  std::string image_id;
  std::string image;
  std::optional<std::string> source_doc;
  std::vector<std::string> responses;
  double score = 0.0;
  int legal_count = 0;
  bool degenerate = false;
  std::optional<std::string> bucket;

  std::string dedup_key() const { return source_doc ? *source_doc : image_id; }
};

struct BucketConfig {
  double lo = 0.4;
  double hi = 1.0;
  double step = 0.1;
  /// Overall target; per-bucket quota is target / n_buckets with the last
  /// bucket taking the remainder. Unset means no quota.
  std::optional<std::size_t> total_target;
  std::uint64_t seed = 0;

  int n_buckets() const;
  /// Throws std::invalid_argument unless lo < hi and step divides hi - lo.
  void check() const;
};

/// Bucket index for a score, or nullopt when outside [lo, hi].
std::optional<int> bucket_index(double score, const BucketConfig& config);
std::string bucket_label(int index, const BucketConfig& config);
std::size_t bucket_quota(int index, const BucketConfig& config);

struct BucketDecision {
  bool selected = false;
  std::optional<int> bucket;
  std::string label;   // empty when unbucketed
  std::string reason;  // below-range, above-range, duplicate-source, quota
};

/// One decision per input record, aligned with the input. Deduplication by
/// dedup_key() is global across buckets; buckets are filled in ascending
/// order.
std::vector<BucketDecision> bucket_sample(const std::vector<ConsistencyRecord>& records,
                                          const BucketConfig& config);

// ---- attention and QA candidates -------------------------------------------

struct AttentionMap {
  std::string image_id;
  int qa_index = 0;
  int n_visual_tokens = 0;
  std::optional<int> layer;
  std::vector<double> weights;

  /// Validates length and nonnegativity; throws std::invalid_argument.
  static AttentionMap from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

TokenSet extract_visual_source(const AttentionMap& att, double tau_attn = 0.01);

enum class Validity { kUnchecked, kValid, kInvalid };

std::string_view to_string(Validity v);
Validity parse_validity(std::string_view name);

struct QaCandidate {
  int qa_index = 0;  // arrival order in the image's pool
  std::string question;
  std::string answer;
  Lang lang = Lang::kEn;
  std::optional<TokenSet> visual_source;
  Validity validity = Validity::kUnchecked;
  std::string invalid_reason;  // not-grounded or not-visual
  std::optional<double> f1_with_image;
  std::optional<double> f1_without_image;
  std::string answer_with_image;
  std::string answer_without_image;

  nlohmann::json to_json() const;
  static QaCandidate from_json(const nlohmann::json& j);
};

struct CrossCheckThresholds {
  double f1_with = 0.9;
  double f1_without = 0.3;
};

struct CrossCheckResult {
  Validity validity = Validity::kUnchecked;
  std::string reason;
  double f1_with = 0.0;
  double f1_without = 0.0;
};

/// Gate on precomputed scores: valid iff f1_with > thresholds.f1_with and
/// f1_without < thresholds.f1_without. Failing the first gate reports
/// not-grounded, else failing the second reports not-visual.
CrossCheckResult cross_check_scores(double f1_with, double f1_without,
                                    const CrossCheckThresholds& thresholds = {});

/// Scores both probe answers against the candidate's answer, then gates.
CrossCheckResult cross_check_validate(const QaCandidate& cand, const std::string& ans_with_image,
                                      const std::string& ans_without_image,
                                      const CrossCheckThresholds& thresholds = {});

struct SelectionResult {
  std::vector<QaCandidate> selected;
  std::vector<int> rejected_qa_indices;  // overlapped an accepted candidate
  std::size_t pool_size = 0;
  bool dropped = false;  // fewer than min_qas accepted
};

/// Candidates sorted by descending |visual_source| (stable, so pool order
/// breaks ties); each is accepted iff its IoU with every accepted one is
/// below tau_iou. Candidates must be valid and carry a visual source.
SelectionResult greedy_select(std::vector<QaCandidate> valids, double tau_iou = 0.3,
                              std::size_t min_qas = 3);

// ---- model-backed steps ----------------------------------------------------

struct QaPair {
  std::string question;
  std::string answer;
};

/// Parses a teacher reply. The literal None yields an empty list; fenced
/// blocks and trailing commas are tolerated; anything else that is not an
/// array of {question, answer} yields nullopt.
std::optional<std::vector<QaPair>> parse_qa_reply(std::string_view reply);

/// The answer inside the first <answer>...</answer> span, else the whole
/// reply; trimmed either way.
std::string extract_answer(std::string_view reply);

struct PoolConfig {
  int n_calls = 16;
  double temperature = 1.0;
  int max_tokens = 4096;
  std::uint64_t seed = 0;
};

struct PoolResult {
  std::vector<QaCandidate> candidates;
  int calls_parsed = 0;
  int calls_none = 0;
  int calls_discarded = 0;  // reply was not parseable
  int calls_failed = 0;     // gateway error
};

class PoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seed for call `call` of an image; distinct per call so each request is a
/// separate fixture.
std::uint64_t teacher_seed(std::uint64_t seed, const std::string& image_id, int call);

ChatRequest qa_generation_request(const std::string& image, const PromptSet& prompts,
                                  const PoolConfig& config, std::uint64_t call_seed);

/// Issues n_calls teacher requests for one image. Throws PoolError when every
/// call failed at the gateway.
PoolResult build_candidate_pool(Gateway& gateway, const std::string& image_id,
                                const std::string& image, const PromptSet& prompts,
                                const PoolConfig& config = {});

struct ProbeConfig {
  double temperature = 0.0;
  int max_tokens = 256;
};

ChatRequest validation_request(const QaCandidate& cand, const std::string& image, bool with_image,
                               const PromptSet& prompts, const ProbeConfig& config = {});

/// Probes the validator with and without the image and applies the
/// cross-check. Returns the candidate with validity and probe fields set.
QaCandidate validate_candidate(Gateway& gateway, QaCandidate cand, const std::string& image,
                               const PromptSet& prompts, const CrossCheckThresholds& thresholds = {},
                               const ProbeConfig& config = {});

}  // namespace trivia
