// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdint>
#include <vector>

#include "trivia/metrics.hpp"
#include "utf8.hpp"

namespace trivia {
namespace {

// Postorder-indexed view of a tree: nodes[i] is the i-th node in postorder,
// leftmost[i] the postorder index of its leftmost leaf descendant.
struct Postorder {
  std::vector<const TableTree*> nodes;
  std::vector<std::size_t> leftmost;
  std::vector<std::size_t> keyroots;

  explicit Postorder(const TableTree& root) {
    visit(root);
    // A keyroot is the highest-indexed node among those sharing a leftmost
    // leaf: the root, and every node that has a left sibling.
    std::vector<char> seen(nodes.size(), 0);
    for (std::size_t i = nodes.size(); i-- > 0;) {
      if (!seen[leftmost[i]]) {
        seen[leftmost[i]] = 1;
        keyroots.push_back(i);
      }
    }
    std::reverse(keyroots.begin(), keyroots.end());
  }

  std::size_t visit(const TableTree& node) {
    std::size_t first_leaf = SIZE_MAX;
    for (const auto& child : node.children) {
      std::size_t leaf = visit(child);
      if (first_leaf == SIZE_MAX) first_leaf = leaf;
    }
    nodes.push_back(&node);
    if (first_leaf == SIZE_MAX) first_leaf = nodes.size() - 1;
    leftmost.push_back(first_leaf);
    return first_leaf;
  }
};

}  // namespace

double CostModel::rename_cost(const TableTree& a, const TableTree& b) const {
  if (a.kind != b.kind) return 1.0;
  if (a.kind != NodeKind::kCell) return 0.0;
  if (a.row_span != b.row_span || a.col_span != b.col_span) return 1.0;
  if (structure_only || a.content == b.content) return 0.0;
  return normalized_edit_distance(a.content, b.content);
}

double normalized_edit_distance(std::string_view a, std::string_view b) {
  if (a == b) return 0.0;
  const auto x = utf8::decode(a);
  const auto y = utf8::decode(b);
  const std::size_t longest = std::max(x.size(), y.size());
  if (longest == 0) return 0.0;
  std::vector<std::size_t> row(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return static_cast<double>(row[y.size()]) / static_cast<double>(longest);
}

double tree_edit_distance(const TableTree& a, const TableTree& b, const CostModel& cost) {
  const Postorder ta(a);
  const Postorder tb(b);
  const std::size_t n = ta.nodes.size();
  const std::size_t m = tb.nodes.size();
  std::vector<double> tree_dist(n * m, 0.0);
  std::vector<double> forest;

  for (std::size_t i : ta.keyroots) {
    for (std::size_t j : tb.keyroots) {
      const std::size_t li = ta.leftmost[i];
      const std::size_t lj = tb.leftmost[j];
      const std::size_t rows = i - li + 2;
      const std::size_t cols = j - lj + 2;
      forest.assign(rows * cols, 0.0);
      auto fd = [&](std::size_t r, std::size_t c) -> double& { return forest[r * cols + c]; };
      for (std::size_t x = 1; x < rows; ++x) {
        fd(x, 0) = fd(x - 1, 0) + cost.delete_cost(*ta.nodes[li + x - 1]);
      }
      for (std::size_t y = 1; y < cols; ++y) {
        fd(0, y) = fd(0, y - 1) + cost.insert_cost(*tb.nodes[lj + y - 1]);
      }
      for (std::size_t x = 1; x < rows; ++x) {
        const std::size_t di = li + x - 1;
        const TableTree& na = *ta.nodes[di];
        for (std::size_t y = 1; y < cols; ++y) {
          const std::size_t dj = lj + y - 1;
          const TableTree& nb = *tb.nodes[dj];
          const double del = fd(x - 1, y) + cost.delete_cost(na);
          const double ins = fd(x, y - 1) + cost.insert_cost(nb);
          if (ta.leftmost[di] == li && tb.leftmost[dj] == lj) {
            const double ren = fd(x - 1, y - 1) + cost.rename_cost(na, nb);
            fd(x, y) = std::min({del, ins, ren});
            tree_dist[di * m + dj] = fd(x, y);
          } else {
            const double sub =
                fd(ta.leftmost[di] - li, tb.leftmost[dj] - lj) + tree_dist[di * m + dj];
            fd(x, y) = std::min({del, ins, sub});
          }
        }
      }
    }
  }
  return tree_dist[(n - 1) * m + (m - 1)];
}

}  // namespace trivia
