// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar similarity functions: tree edit distance, TEDS / S-TEDS, answer
// token F1 and token-set IoU.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "trivia/markup.hpp"
#include "trivia/table.hpp"

namespace trivia {

/// Unit insert/delete. Rename is free between equal labels (and equal spans on
/// cells); differing cell text costs its normalized character edit distance
/// unless structure_only is set. Any label or span mismatch costs 1.
struct CostModel {
  bool structure_only = false;

  double insert_cost(const TableTree&) const { return 1.0; }
  double delete_cost(const TableTree&) const { return 1.0; }
  double rename_cost(const TableTree& a, const TableTree& b) const;
};

/// Character (code point) Levenshtein distance divided by the longer length.
/// Two empty strings are at distance 0.
double normalized_edit_distance(std::string_view a, std::string_view b);

/// Ordered-tree edit distance (Zhang-Shasha keyroot dynamic program). Only
/// the root node's own fields and children are compared, so any TableTree
/// shape is accepted.
double tree_edit_distance(const TableTree& a, const TableTree& b, const CostModel& cost = {});

struct ScoreBreakdown {
  double teds = 0.0;
  double s_teds = 0.0;
  std::size_t pred_size = 0;
  std::size_t gold_size = 0;
  double edit_distance = 0.0;             // content-aware
  double structure_edit_distance = 0.0;   // structure-only
};

class UnparseableOperand : public std::runtime_error {
 public:
  explicit UnparseableOperand(const std::string& what) : std::runtime_error(what) {}
};

/// Computes TEDS and S-TEDS together; each is 1 - distance / max tree size,
/// clamped to [0, 1].
ScoreBreakdown score_tables(const TableGrid& pred, const TableGrid& gold);

/// Text operands are parsed with format auto-detection; throws
/// UnparseableOperand when either side does not parse.
ScoreBreakdown score_tables(std::string_view pred, std::string_view gold,
                            const OtslSpelling& spelling = {});

double teds(const TableGrid& pred, const TableGrid& gold, bool structure_only = false);
double teds(std::string_view pred, std::string_view gold, bool structure_only = false);

/// Unicode compatibility case fold, punctuation removed, whitespace split,
/// and each CJK code point as a token of its own.
std::vector<std::string> answer_tokens(std::string_view text);

/// Bag-of-tokens F1 over answer_tokens. Empty vs empty is 1, empty vs
/// non-empty is 0.
double answer_f1(std::string_view pred, std::string_view gold);

/// Sorted, duplicate-free visual token indices.
using TokenSet = std::vector<int>;

TokenSet make_token_set(std::vector<int> indices);

/// |a ∩ b| / |a ∪ b| on sorted sets; two empty sets give 0.
double iou(const TokenSet& a, const TokenSet& b);

}  // namespace trivia
