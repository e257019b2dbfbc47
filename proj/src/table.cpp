// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/table.hpp"

#include <algorithm>
#include <cstdint>
#include <sstream>

namespace trivia {
namespace {

// Coverage is checked on a dense occupancy map; refuse shapes that would not
// fit in memory rather than fault.
constexpr std::int64_t kMaxCoordinates = std::int64_t{1} << 24;

std::string coord(int r, int c) {
  std::ostringstream os;
  os << "(" << r << "," << c << ")";
  return os.str();
}

}  // namespace

ValidationReport grid_validate(const TableGrid& grid) {
  ValidationReport report;
  auto add = [&](GridViolation::Kind kind, int r, int c, int idx, std::string msg) {
    report.violations.push_back({kind, r, c, idx, std::move(msg)});
  };

  const bool degenerate = grid.n_rows == 0 && grid.n_cols == 0;
  if (!degenerate && (grid.n_rows <= 0 || grid.n_cols <= 0)) {
    add(GridViolation::Kind::kBadShape, -1, -1, -1,
        "bad shape " + std::to_string(grid.n_rows) + "x" + std::to_string(grid.n_cols));
    return report;
  }
  const std::int64_t area = std::int64_t{grid.n_rows} * grid.n_cols;
  if (area > kMaxCoordinates) {
    add(GridViolation::Kind::kBadShape, -1, -1, -1, "grid too large");
    return report;
  }

  // -1 = uncovered, otherwise index of the owning cell.
  std::vector<int> owner(static_cast<std::size_t>(area), -1);
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const Cell& cell = grid.cells[i];
    const int idx = static_cast<int>(i);
    if (cell.row_span < 1 || cell.col_span < 1) {
      add(GridViolation::Kind::kBadSpan, cell.row, cell.col, idx,
          "cell " + std::to_string(i) + " has non-positive span");
      continue;
    }
    if (cell.row < 0 || cell.col < 0 ||
        std::int64_t{cell.row} + cell.row_span > grid.n_rows ||
        std::int64_t{cell.col} + cell.col_span > grid.n_cols) {
      add(GridViolation::Kind::kOutOfBounds, cell.row, cell.col, idx,
          "cell " + std::to_string(i) + " at " + coord(cell.row, cell.col) + " exceeds bounds");
      continue;
    }
    for (int r = cell.row; r < cell.row + cell.row_span; ++r) {
      for (int c = cell.col; c < cell.col + cell.col_span; ++c) {
        int& slot = owner[static_cast<std::size_t>(r) * grid.n_cols + c];
        if (slot >= 0) {
          add(GridViolation::Kind::kOverlap, r, c, idx,
              "overlap " + coord(r, c) + " between cells " + std::to_string(slot) + " and " +
                  std::to_string(i));
        } else {
          slot = idx;
        }
      }
    }
  }
  for (int r = 0; r < grid.n_rows; ++r) {
    for (int c = 0; c < grid.n_cols; ++c) {
      if (owner[static_cast<std::size_t>(r) * grid.n_cols + c] < 0) {
        add(GridViolation::Kind::kUncovered, r, c, -1, "uncovered " + coord(r, c));
      }
    }
  }
  for (std::size_t i = 1; i < grid.cells.size(); ++i) {
    const Cell& a = grid.cells[i - 1];
    const Cell& b = grid.cells[i];
    if (std::pair(a.row, a.col) >= std::pair(b.row, b.col)) {
      add(GridViolation::Kind::kOrder, b.row, b.col, static_cast<int>(i),
          "cell " + std::to_string(i) + " out of reading order");
    }
  }
  return report;
}

void require_valid(const TableGrid& grid) {
  auto report = grid_validate(grid);
  if (!report.ok()) throw InvalidGrid(report.violations.front().message);
}

void sort_reading_order(TableGrid& grid) {
  std::stable_sort(grid.cells.begin(), grid.cells.end(), [](const Cell& a, const Cell& b) {
    return std::pair(a.row, a.col) < std::pair(b.row, b.col);
  });
}

std::size_t TableTree::size() const {
  std::size_t n = 1;
  for (const auto& child : children) n += child.size();
  return n;
}

TableTree grid_to_tree(const TableGrid& grid) {
  require_valid(grid);
  TableTree root;
  root.kind = NodeKind::kTable;
  root.children.resize(static_cast<std::size_t>(grid.n_rows));
  for (auto& tr : root.children) tr.kind = NodeKind::kRow;
  // Cells are already in reading order, so appending keeps column order.
  for (const Cell& cell : grid.cells) {
    TableTree td;
    td.kind = NodeKind::kCell;
    td.row_span = cell.row_span;
    td.col_span = cell.col_span;
    td.content = cell.content;
    root.children[static_cast<std::size_t>(cell.row)].children.push_back(std::move(td));
  }
  return root;
}

}  // namespace trivia
