// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline stages over line-delimited JSON files. Every line carries
// "schema": "trivia/v1" and a "kind"; the first line of every output file is
// a header holding the effective configuration.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "trivia/data_engine.hpp"
#include "trivia/gateway.hpp"
#include "trivia/markup.hpp"
#include "trivia/prompts.hpp"
#include "trivia/reward.hpp"
#include "trivia/simulator.hpp"

namespace trivia {

inline constexpr const char* kSchemaVersion = "trivia/v1";

struct PipelineConfig {
  double tau_attn = 0.01;
  double tau_iou = 0.3;
  int k = 8;
  int group_size = 16;
  BucketConfig buckets;  // seed is taken from `seed`
  int min_qas = 3;
  int n_teacher_calls = 16;
  double consistency_temperature = 1.0;
  double grpo_temperature = 1.2;
  double teacher_temperature = 1.0;
  int policy_max_tokens = 8192;
  int teacher_max_tokens = 4096;
  ProbeConfig probe;
  double f1_with = 0.9;
  double f1_without = 0.3;
  AdvantageConfig advantage;
  LegalityConfig legality;
  MarkupFormat policy_format = MarkupFormat::kOtsl;
  std::uint64_t seed = 0;
  int workers = 4;

  /// Throws std::invalid_argument naming the first field out of range.
  void check() const;
  /// Every field that can change an output; workers is omitted.
  nlohmann::ordered_json to_json() const;
  /// Overrides only the keys present in `j`; unknown keys are an error.
  void merge_json(const nlohmann::json& j);
};

/// Parses "lo:hi:step".
void parse_bucket_spec(const std::string& spec, BucketConfig& out);

/// Input that does not match the expected schema. The message names the file
/// and line.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Record {
  std::string source;
  std::size_t line = 0;  // 1-based
  nlohmann::json value;

  /// "source:line"
  std::string where() const;
  [[noreturn]] void fail(const std::string& what) const;
  const nlohmann::json& at(const char* key) const;
  std::string str(const char* key) const;
};

/// Reads every non-header, non-blank line, checking the schema version and
/// that the kind is one of `kinds` (any kind when empty).
std::vector<Record> read_records(const std::filesystem::path& path, const std::vector<std::string>& kinds);
std::vector<Record> parse_records(std::istream& in, const std::string& source,
                                  const std::vector<std::string>& kinds);

struct StageStats {
  std::string stage;
  std::size_t records_in = 0;
  std::size_t records_out = 0;
  std::size_t records_rejected = 0;
  std::map<std::string, std::size_t> counters;

  nlohmann::ordered_json to_json() const;
};

struct StageOutput {
  std::vector<nlohmann::ordered_json> records;
  std::vector<nlohmann::ordered_json> rejects;
  StageStats stats;
};

struct StageContext {
  PipelineConfig config;
  std::shared_ptr<Gateway> gateway;  // unused by offline stages
  PromptSet prompts = PromptSet::defaults();
  nlohmann::ordered_json gateway_info;  // embedded in headers; never holds secrets
};

nlohmann::ordered_json header_record(const std::string& stage, const StageContext& ctx);
nlohmann::ordered_json reject_record(const std::string& stage, const std::string& id, std::size_t line,
                                     const std::string& reason);

/// Writes the header followed by `records`. Throws on I/O failure.
void write_records(const std::filesystem::path& path, const nlohmann::ordered_json& header,
                   const std::vector<nlohmann::ordered_json>& records);

/// Table records {id, markup, format?} converted to `to`. `from` of nullopt
/// auto-detects per record.
StageOutput stage_convert(const std::vector<Record>& in, std::optional<MarkupFormat> from, MarkupFormat to,
                          const StageContext& ctx);

/// Image records {image_id, image, source_doc?, n_tables?} to consistency records.
StageOutput stage_consistency(const std::vector<Record>& in, const StageContext& ctx);

StageOutput stage_bucket(const std::vector<Record>& in, const StageContext& ctx);

/// Any record with image_id and image to candidate pools.
StageOutput stage_qagen(const std::vector<Record>& in, const StageContext& ctx);

StageOutput stage_validate(const std::vector<Record>& in, const StageContext& ctx);

/// Valid candidates without an attention record are excluded and counted.
StageOutput stage_select(const std::vector<Record>& in, const std::vector<Record>& attention,
                         const StageContext& ctx);

/// QA sets to reward-scored response groups. Responses come from `responses`
/// records {image_id, responses} when given, else are sampled from the policy.
StageOutput stage_reward(const std::vector<Record>& qasets, const std::vector<Record>* responses,
                         const StageContext& ctx);

/// Groups to training records, one line per response with an advantage.
StageOutput stage_advantage(const std::vector<Record>& groups, const StageContext& ctx);

StageOutput stage_simulate(const DynamicsConfig& config);

/// Seed of the policy request for an image and purpose; 31 bits.
std::uint64_t policy_seed(std::uint64_t seed, const std::string& image_id, const std::string& purpose);

ChatRequest recognition_request(const std::string& image, int n, double temperature, std::uint64_t seed,
                                const StageContext& ctx);

/// Writes `out` as <dir>/<stage>.jsonl and <dir>/<stage>.rejects.jsonl.
void write_stage(const std::filesystem::path& dir, const StageOutput& out, const StageContext& ctx);

/// consistency, bucket, qagen, validate, select, reward and advantage in
/// turn, each reading the previous stage's file back. The training records
/// end up in <dir>/advantage.jsonl.
std::vector<StageStats> run_pipeline(const std::vector<Record>& images, const std::vector<Record>& attention,
                                     const StageContext& ctx, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Evaluation

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalItem {
  std::string id;
  std::optional<std::string> subset;
  std::optional<double> teds;  // absent under structure-only evaluation
  double s_teds = 0.0;
  bool legal = false;
  bool unmatched = false;  // gold without a prediction

  nlohmann::ordered_json to_json() const;
};

struct EvalAggregate {
  std::size_t n = 0;
  std::size_t illegal = 0;
  std::optional<double> teds;  // mean x100
  double s_teds = 0.0;
  double legal_rate = 0.0;

  nlohmann::ordered_json to_json() const;
};

struct EvalReport {
  std::vector<EvalItem> items;
  EvalAggregate overall;
  std::map<std::string, EvalAggregate> subsets;
  std::vector<std::string> unmatched;

  nlohmann::ordered_json to_json() const;
};

/// Predictions and golds are {id, markup, subset?} records; the format of
/// each markup is detected. A prediction whose id has no gold is missing-gold;
/// a repeated id on either side is duplicate-id. Unparseable predictions and
/// golds without a prediction score 0.
EvalReport evaluate(const std::vector<Record>& preds, const std::vector<Record>& golds, bool structure_only,
                    int workers = 1);

}  // namespace trivia
