// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// Canonical table model. Every markup parser, serializer and metric in the
// library converts through TableGrid.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace trivia {

struct Cell {
  int row = 0;
  int col = 0;
  int row_span = 1;
  int col_span = 1;
  std::string content;
  bool is_header = false;

  bool operator==(const Cell&) const = default;
};

/// Rectangular table with explicit spans. A merged cell is owned by its
/// top-left coordinate and appears exactly once in `cells`. An empty table has
/// n_rows == n_cols == 0.
struct TableGrid {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<Cell> cells;

  bool empty() const { return n_rows == 0; }
  bool operator==(const TableGrid&) const = default;
};

struct GridViolation {
  enum class Kind { kBadShape, kBadSpan, kOutOfBounds, kOverlap, kUncovered, kOrder };
  Kind kind;
  int row = -1;
  int col = -1;
  int cell_index = -1;
  std::string message;
};

struct ValidationReport {
  std::vector<GridViolation> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks every TableGrid invariant. Total: never throws, whatever the cell
/// list contains.
ValidationReport grid_validate(const TableGrid& grid);

class InvalidGrid : public std::runtime_error {
 public:
  explicit InvalidGrid(const std::string& what) : std::runtime_error(what) {}
};

/// Throws InvalidGrid with the first violation's message when the grid is not
/// valid.
void require_valid(const TableGrid& grid);

/// Sorts cells into reading order (row-major by anchor).
void sort_reading_order(TableGrid& grid);

enum class NodeKind { kTable, kRow, kCell };

/// Ordered labeled tree view of a table; the operand of tree edit distance.
/// span and content are meaningful on kCell nodes only.
struct TableTree {
  NodeKind kind = NodeKind::kTable;
  int row_span = 1;
  int col_span = 1;
  std::string content;
  std::vector<TableTree> children;

  std::size_t size() const;
  bool operator==(const TableTree&) const = default;
};

TableTree grid_to_tree(const TableGrid& grid);

}  // namespace trivia
