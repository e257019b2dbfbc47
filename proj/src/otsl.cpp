// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "trivia/markup.hpp"

namespace trivia {
namespace {

using T = OtslToken;

bool is_opener(T t) { return t == T::kFull || t == T::kEmpty; }

// Row-major view of a sequence without its NL tokens; `index` maps each grid
// position back to its position in the token list.
struct TokenMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> cells;
  std::vector<std::size_t> index;

  T at(int r, int c) const { return cells[static_cast<std::size_t>(r * cols + c)]; }
  std::size_t idx(int r, int c) const { return index[static_cast<std::size_t>(r * cols + c)]; }
};

std::optional<ParseError> build_matrix(const OtslSeq& seq, TokenMatrix& m) {
  const auto& tokens = seq.tokens;
  if (tokens.empty()) return std::nullopt;
  if (tokens.back() != T::kNewline) return ParseError{tokens.size(), "truncated: missing final row terminator"};
  int width = -1;
  int run = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != T::kNewline) {
      ++run;
      if (width >= 0 && run > width) return ParseError{i, "ragged rows: row longer than first row"};
      m.cells.push_back(tokens[i]);
      m.index.push_back(i);
      continue;
    }
    if (run == 0) return ParseError{i, "empty row"};
    if (width < 0) width = run;
    if (run != width) return ParseError{i, "ragged rows: row shorter than first row"};
    ++m.rows;
    run = 0;
  }
  m.cols = width;
  return std::nullopt;
}

std::optional<ParseError> check_adjacency(const TokenMatrix& m) {
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      const T t = m.at(r, c);
      const bool has_left = c > 0;
      const bool has_up = r > 0;
      const T left = has_left ? m.at(r, c - 1) : T::kNewline;
      const T up = has_up ? m.at(r - 1, c) : T::kNewline;
      bool ok = true;
      switch (t) {
        case T::kLeft:
          ok = has_left && (is_opener(left) || left == T::kLeft);
          break;
        case T::kUp:
          ok = has_up && (is_opener(up) || up == T::kUp);
          break;
        case T::kCross:
          ok = has_left && has_up && (left == T::kUp || left == T::kCross) &&
               (up == T::kLeft || up == T::kCross);
          break;
        default:
          break;
      }
      if (!ok) {
        return ParseError{m.idx(r, c), std::string("illegal merge token ") + token_letter(t)};
      }
    }
  }
  return std::nullopt;
}

struct Region {
  int row, col, row_span, col_span;
};

// Every opener owns the rectangle spanned by its L-run and U-run; the
// rectangle must be filled with L (top row), U (left column) and X elsewhere,
// and every merge token must belong to exactly one rectangle.
std::optional<ParseError> collect_regions(const TokenMatrix& m, std::vector<Region>& regions) {
  std::vector<char> owned(m.cells.size(), 0);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      if (!is_opener(m.at(r, c))) continue;
      int cs = 1;
      while (c + cs < m.cols && m.at(r, c + cs) == T::kLeft) ++cs;
      int rs = 1;
      while (r + rs < m.rows && m.at(r + rs, c) == T::kUp) ++rs;
      for (int rr = r; rr < r + rs; ++rr) {
        for (int cc = c; cc < c + cs; ++cc) {
          const auto pos = static_cast<std::size_t>(rr * m.cols + cc);
          if (rr == r && cc == c) {
            owned[pos] = 1;
            continue;
          }
          const T want = rr == r ? T::kLeft : (cc == c ? T::kUp : T::kCross);
          if (m.at(rr, cc) != want || owned[pos]) {
            return ParseError{m.idx(rr, cc), "non-rectangular merge region"};
          }
          owned[pos] = 1;
        }
      }
      regions.push_back({r, c, rs, cs});
    }
  }
  for (std::size_t i = 0; i < owned.size(); ++i) {
    if (!owned[i]) return ParseError{m.index[i], "merge token outside any cell"};
  }
  return std::nullopt;
}

}  // namespace

char token_letter(OtslToken token) {
  switch (token) {
    case T::kFull: return 'F';
    case T::kEmpty: return 'E';
    case T::kLeft: return 'L';
    case T::kUp: return 'U';
    case T::kCross: return 'X';
    case T::kNewline: return 'N';
  }
  return '?';
}

const std::string& OtslSpelling::spell(OtslToken token) const {
  switch (token) {
    case T::kFull: return full;
    case T::kEmpty: return empty;
    case T::kLeft: return left;
    case T::kUp: return up;
    case T::kCross: return cross;
    case T::kNewline: return newline;
  }
  return newline;
}

std::optional<ParseError> validate_otsl(const OtslSeq& seq) {
  TokenMatrix m;
  if (auto err = build_matrix(seq, m)) return err;
  if (auto err = check_adjacency(m)) return err;
  std::vector<Region> regions;
  return collect_regions(m, regions);
}

ParseResult<OtslTable> parse_otsl(std::string_view raw, const OtslSpelling& spelling) {
  constexpr std::array kAll = {T::kFull, T::kEmpty, T::kLeft, T::kUp, T::kCross, T::kNewline};
  OtslTable table;
  std::string* text = nullptr;  // text of the open full cell
  auto finish_text = [&] {
    if (!text) return;
    *text = normalize_cell_text(*text);
    // A full cell with no text is stored canonically as an empty cell.
    if (text->empty()) table.seq.tokens.back() = T::kEmpty;
    text = nullptr;
  };

  std::size_t p = 0;
  while (p < raw.size()) {
    std::optional<T> matched;
    std::size_t best = 0;
    for (T t : kAll) {
      const std::string& s = spelling.spell(t);
      if (!s.empty() && s.size() > best && raw.compare(p, s.size(), s) == 0) {
        matched = t;
        best = s.size();
      }
    }
    if (matched) {
      finish_text();
      table.seq.tokens.push_back(*matched);
      if (*matched == T::kFull) {
        table.texts.emplace_back();
        text = &table.texts.back();
      } else if (*matched == T::kEmpty) {
        table.texts.emplace_back();
      }
      p += best;
      continue;
    }
    const char c = raw[p];
    if (text) {
      text->push_back(c);
    } else if (!(c == ' ' || c == '\t' || c == '\n' || c == '\r')) {
      return ParseError{table.seq.tokens.size(), "unexpected text outside a cell"};
    }
    ++p;
  }
  finish_text();
  if (auto err = validate_otsl(table.seq)) return *err;
  return table;
}

std::string render_otsl(const OtslTable& table, const OtslSpelling& spelling) {
  std::string out;
  std::size_t next_text = 0;
  for (T t : table.seq.tokens) {
    out += spelling.spell(t);
    if (is_opener(t)) {
      if (t == T::kFull && next_text < table.texts.size()) out += table.texts[next_text];
      ++next_text;
    }
  }
  return out;
}

TableGrid otsl_to_grid(const OtslTable& table) {
  TokenMatrix m;
  std::vector<Region> regions;
  std::optional<ParseError> err = build_matrix(table.seq, m);
  if (!err) err = check_adjacency(m);
  if (!err) err = collect_regions(m, regions);
  if (err) throw InvalidSequence(err->position, err->reason);
  if (regions.size() != table.texts.size()) {
    throw InvalidSequence(table.seq.tokens.size(), "cell text count does not match opener count");
  }
  TableGrid grid;
  grid.n_rows = m.rows;
  grid.n_cols = m.cols;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const Region& g = regions[i];
    std::string content = m.at(g.row, g.col) == T::kEmpty ? std::string() : table.texts[i];
    grid.cells.push_back(Cell{g.row, g.col, g.row_span, g.col_span, std::move(content), false});
  }
  return grid;
}

OtslTable grid_to_otsl(const TableGrid& grid) {
  require_valid(grid);
  OtslTable table;
  if (grid.empty()) return table;
  std::vector<T> matrix(static_cast<std::size_t>(grid.n_rows) * grid.n_cols, T::kEmpty);
  std::vector<const std::string*> text_at(matrix.size(), nullptr);
  for (const Cell& cell : grid.cells) {
    for (int r = cell.row; r < cell.row + cell.row_span; ++r) {
      for (int c = cell.col; c < cell.col + cell.col_span; ++c) {
        T t = r == cell.row ? (c == cell.col ? T::kFull : T::kLeft) : (c == cell.col ? T::kUp : T::kCross);
        if (t == T::kFull && cell.content.empty()) t = T::kEmpty;
        const auto pos = static_cast<std::size_t>(r) * grid.n_cols + c;
        matrix[pos] = t;
        if (r == cell.row && c == cell.col) text_at[pos] = &cell.content;
      }
    }
  }
  for (int r = 0; r < grid.n_rows; ++r) {
    for (int c = 0; c < grid.n_cols; ++c) {
      const auto pos = static_cast<std::size_t>(r) * grid.n_cols + c;
      table.seq.tokens.push_back(matrix[pos]);
      if (text_at[pos]) table.texts.push_back(*text_at[pos]);
    }
    table.seq.tokens.push_back(T::kNewline);
  }
  return table;
}

}  // namespace trivia
