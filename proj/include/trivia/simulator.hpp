// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// Offline analog of the reinforcement stage: synthetic gold tables, a
// corruption process standing in for the policy, and a sweep reporting
// consistency, reward and advantage dispersion with and without filtering.

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "trivia/markup.hpp"
#include "trivia/table.hpp"

namespace trivia {

struct SyntheticSpec {
  int min_rows = 2, max_rows = 6;
  int min_cols = 2, max_cols = 5;
  double merge_probability = 0.15;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  int min_text = 1, max_text = 6;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// Deterministic in spec.seed. With merge_probability p each free anchor
/// starts a multi-span cell with probability p, when space allows.
TableGrid gen_table(const SyntheticSpec& spec);
TableGrid gen_table(const SyntheticSpec& spec, std::mt19937_64& rng);

struct CorruptionPolicy {
  double p_text_typo = 0.0;   // per cell: one character substituted
  double p_cell_drop = 0.0;   // per cell: content cleared
  double p_span_break = 0.0;  // per table: split a merged cell, else merge two
  double p_illegal_emit = 0.0;
  std::uint64_t seed = 0;

  /// typo = e, drop = e/2, span-break = e/2.
  static CorruptionPolicy for_error_rate(double e, double p_illegal_emit, std::uint64_t seed);
  nlohmann::json to_json() const;
};

/// Applies the content and span operators; the result is always a valid grid.
TableGrid corrupt(const TableGrid& gold, const CorruptionPolicy& policy, std::mt19937_64& rng,
                  const std::string& alphabet);

/// Gold passed through independent corruption draws, serialized as OTSL.
/// Response i uses its own stream derived from (policy.seed, i); an illegal
/// emit drops the final row terminator.
std::vector<std::string> sample_responses(const TableGrid& gold, const CorruptionPolicy& policy,
                                          int n, const std::string& alphabet = SyntheticSpec{}.alphabet);

class IllegalResponse : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fraction of gold cells whose anchor holds identical content in the
/// response; 1.0 for an empty gold table. Throws IllegalResponse.
double oracle_reward(std::string_view response, const TableGrid& gold);

struct DynamicsConfig {
  SyntheticSpec spec;
  std::vector<double> error_rates = {0.0, 0.2, 0.4};
  double p_illegal_emit = 0.0;
  int n_images = 100;
  int k = 8;
  int g = 16;
  std::uint64_t seed = 0;
  int workers = 1;

  nlohmann::json to_json() const;
};

struct DynamicsRow {
  double error_rate = 0.0;
  double p_illegal_emit = 0.0;
  int n_images = 0;
  double consistency_mean = 0.0;
  double reward_mean = 0.0;        // over legal group members
  double adv_var_filtered = 0.0;   // mean over groups
  double adv_var_naive = 0.0;
  double illegal_fraction = 0.0;   // over group members
  double filtered_below_naive = 0.0;  // fraction of groups with strict improvement
  double filtered_equal_naive = 0.0;  // fraction of groups where both coincide

  nlohmann::ordered_json to_json() const;
};

/// One row per error rate. Gold tables depend only on (seed, image index);
/// parallel and serial runs agree bit for bit.
std::vector<DynamicsRow> run_dynamics(const DynamicsConfig& config);

}  // namespace trivia
