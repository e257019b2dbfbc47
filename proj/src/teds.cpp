// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "trivia/metrics.hpp"

namespace trivia {
namespace {

double similarity(double distance, std::size_t a, std::size_t b) {
  const auto denom = static_cast<double>(std::max(a, b));
  if (denom <= 0.0) return 1.0;
  return std::clamp(1.0 - distance / denom, 0.0, 1.0);
}

TableGrid parse_operand(std::string_view raw, const OtslSpelling& spelling, const char* side) {
  auto parsed = parse_markup(raw, detect_format(raw), spelling);
  if (!parsed) {
    throw UnparseableOperand(std::string(side) + " does not parse: " + parsed.error().reason);
  }
  return std::move(parsed).value();
}

}  // namespace

ScoreBreakdown score_tables(const TableGrid& pred, const TableGrid& gold) {
  const TableTree tp = grid_to_tree(pred);
  const TableTree tg = grid_to_tree(gold);
  ScoreBreakdown out;
  out.pred_size = tp.size();
  out.gold_size = tg.size();
  out.edit_distance = tree_edit_distance(tp, tg, CostModel{false});
  out.structure_edit_distance = tree_edit_distance(tp, tg, CostModel{true});
  out.teds = similarity(out.edit_distance, out.pred_size, out.gold_size);
  out.s_teds = similarity(out.structure_edit_distance, out.pred_size, out.gold_size);
  return out;
}

ScoreBreakdown score_tables(std::string_view pred, std::string_view gold,
                            const OtslSpelling& spelling) {
  return score_tables(parse_operand(pred, spelling, "prediction"),
                      parse_operand(gold, spelling, "gold"));
}

double teds(const TableGrid& pred, const TableGrid& gold, bool structure_only) {
  const TableTree tp = grid_to_tree(pred);
  const TableTree tg = grid_to_tree(gold);
  return similarity(tree_edit_distance(tp, tg, CostModel{structure_only}), tp.size(), tg.size());
}

double teds(std::string_view pred, std::string_view gold, bool structure_only) {
  const OtslSpelling spelling;
  return teds(parse_operand(pred, spelling, "prediction"), parse_operand(gold, spelling, "gold"),
              structure_only);
}

}  // namespace trivia
