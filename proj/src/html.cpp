// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "trivia/markup.hpp"
#include "utf8.hpp"

namespace trivia {
namespace {

constexpr int kMaxSpan = 1000;
constexpr std::int64_t kMaxHtmlCoordinates = std::int64_t{1} << 20;

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool iequals_prefix(std::string_view s, std::size_t at, std::string_view prefix) {
  if (at + prefix.size() > s.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (lower(s[at + i]) != prefix[i]) return false;
  }
  return true;
}

struct Tag {
  std::string name;  // lowercased
  bool closing = false;
  std::string attrs;  // raw attribute text
  std::size_t end = 0;  // offset one past '>'
};

// Parses the tag starting at raw[at] == '<'. Returns false when the '<' does
// not start a tag (it is then plain text). Sets `unterminated` when a tag was
// started but never closed.
bool read_tag(std::string_view raw, std::size_t at, Tag& tag, bool& unterminated) {
  unterminated = false;
  std::size_t p = at + 1;
  tag.closing = false;
  if (p < raw.size() && raw[p] == '/') {
    tag.closing = true;
    ++p;
  }
  if (p >= raw.size() || !std::isalpha(static_cast<unsigned char>(raw[p]))) return false;
  std::size_t name_begin = p;
  while (p < raw.size() && (std::isalnum(static_cast<unsigned char>(raw[p])) || raw[p] == '-' ||
                            raw[p] == ':')) {
    ++p;
  }
  tag.name.clear();
  for (std::size_t i = name_begin; i < p; ++i) tag.name.push_back(lower(raw[i]));
  std::size_t attrs_begin = p;
  char quote = 0;
  while (p < raw.size()) {
    char c = raw[p];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      // Quotes only open inside an attribute value position.
      if (p > attrs_begin && raw[p - 1] == '=') quote = c;
    } else if (c == '>') {
      break;
    }
    ++p;
  }
  if (p >= raw.size()) {
    unterminated = true;
    return false;
  }
  tag.attrs.assign(raw.substr(attrs_begin, p - attrs_begin));
  tag.end = p + 1;
  return true;
}

int span_attr(std::string_view attrs, std::string_view name) {
  std::size_t p = 0;
  while (p < attrs.size()) {
    while (p < attrs.size() && (is_space(attrs[p]) || attrs[p] == '/')) ++p;
    std::size_t key_begin = p;
    while (p < attrs.size() && !is_space(attrs[p]) && attrs[p] != '=' && attrs[p] != '/') ++p;
    std::string key;
    for (std::size_t i = key_begin; i < p; ++i) key.push_back(lower(attrs[i]));
    while (p < attrs.size() && is_space(attrs[p])) ++p;
    std::string value;
    if (p < attrs.size() && attrs[p] == '=') {
      ++p;
      while (p < attrs.size() && is_space(attrs[p])) ++p;
      if (p < attrs.size() && (attrs[p] == '"' || attrs[p] == '\'')) {
        char q = attrs[p++];
        std::size_t vb = p;
        while (p < attrs.size() && attrs[p] != q) ++p;
        value.assign(attrs.substr(vb, p - vb));
        if (p < attrs.size()) ++p;
      } else {
        std::size_t vb = p;
        while (p < attrs.size() && !is_space(attrs[p])) ++p;
        value.assign(attrs.substr(vb, p - vb));
      }
    }
    if (key.empty() && p == key_begin) ++p;
    if (key == name) {
      std::size_t i = 0;
      while (i < value.size() && is_space(value[i])) ++i;
      long long n = 0;
      bool any = false;
      while (i < value.size() && std::isdigit(static_cast<unsigned char>(value[i]))) {
        any = true;
        n = std::min<long long>(n * 10 + (value[i] - '0'), kMaxSpan);
        ++i;
      }
      if (!any || n < 1) return 1;
      return static_cast<int>(n);
    }
  }
  return 1;
}

std::string decode_entities(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] != '&') {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t semi = text.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
      out.push_back(text[i++]);
      continue;
    }
    std::string_view ent = text.substr(i + 1, semi - i - 1);
    std::uint32_t cp = 0;
    bool known = true;
    if (ent == "amp") cp = '&';
    else if (ent == "lt") cp = '<';
    else if (ent == "gt") cp = '>';
    else if (ent == "quot") cp = '"';
    else if (ent == "apos") cp = '\'';
    else if (ent == "nbsp") cp = ' ';
    else if (ent.size() >= 2 && ent[0] == '#') {
      bool hex = ent[1] == 'x' || ent[1] == 'X';
      std::size_t start = hex ? 2 : 1;
      if (start >= ent.size()) known = false;
      for (std::size_t k = start; known && k < ent.size(); ++k) {
        char c = ent[k];
        int d;
        if (std::isdigit(static_cast<unsigned char>(c))) d = c - '0';
        else if (hex && std::isxdigit(static_cast<unsigned char>(c))) d = 10 + (lower(c) - 'a');
        else { known = false; break; }
        cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
        if (cp > 0x10FFFF) known = false;
      }
      if (known && (cp == 0 || (cp >= 0xD800 && cp <= 0xDFFF))) known = false;
    } else {
      known = false;
    }
    if (!known) {
      out.push_back(text[i++]);
      continue;
    }
    utf8::append(out, cp);
    i = semi + 1;
  }
  return out;
}

struct RawCell {
  int row_span = 1;
  int col_span = 1;
  bool header = false;
  std::string text;
};

class TableBuilder {
 public:
  void open_row() {
    close_cell();
    rows_.emplace_back();
    in_row_ = true;
  }
  void close_row() {
    close_cell();
    in_row_ = false;
  }
  void open_cell(const Tag& tag) {
    close_cell();
    if (!in_row_) open_row();
    current_ = RawCell{};
    current_.header = tag.name == "th";
    current_.row_span = span_attr(tag.attrs, "rowspan");
    current_.col_span = span_attr(tag.attrs, "colspan");
    in_cell_ = true;
  }
  void close_cell() {
    if (!in_cell_) return;
    current_.text = normalize_cell_text(decode_entities(current_.text));
    rows_.back().push_back(std::move(current_));
    in_cell_ = false;
  }
  bool in_cell() const { return in_cell_; }
  void append_text(std::string_view text) {
    if (in_cell_) current_.text.append(text);
  }

  ParseResult<TableGrid> build(std::size_t offset) {
    close_row();
    const int n_rows = static_cast<int>(rows_.size());
    std::vector<std::vector<char>> occupied(rows_.size());
    auto is_occupied = [&](int r, int c) {
      const auto& row = occupied[static_cast<std::size_t>(r)];
      return c < static_cast<int>(row.size()) && row[static_cast<std::size_t>(c)];
    };
    std::int64_t area = 0;
    TableGrid grid;
    grid.n_rows = n_rows;
    for (int r = 0; r < n_rows; ++r) {
      int c = 0;
      for (RawCell& raw : rows_[static_cast<std::size_t>(r)]) {
        while (is_occupied(r, c)) ++c;
        int cs = 1;
        while (cs < raw.col_span && !is_occupied(r, c + cs)) ++cs;
        int rs = 1;
        const int max_rs = std::min(raw.row_span, n_rows - r);
        while (rs < max_rs) {
          bool free = true;
          for (int k = 0; k < cs && free; ++k) free = !is_occupied(r + rs, c + k);
          if (!free) break;
          ++rs;
        }
        area += std::int64_t{rs} * cs;
        if (area > kMaxHtmlCoordinates || c + cs > kMaxSpan * 4) {
          return ParseError{offset, "table too large"};
        }
        for (int rr = r; rr < r + rs; ++rr) {
          auto& row = occupied[static_cast<std::size_t>(rr)];
          if (static_cast<int>(row.size()) < c + cs) row.resize(static_cast<std::size_t>(c + cs), 0);
          for (int cc = c; cc < c + cs; ++cc) row[static_cast<std::size_t>(cc)] = 1;
        }
        grid.cells.push_back(Cell{r, c, rs, cs, std::move(raw.text), raw.header});
        grid.n_cols = std::max(grid.n_cols, c + cs);
        c += cs;
      }
    }
    if (grid.n_cols == 0) return TableGrid{};
    if (std::int64_t{grid.n_rows} * grid.n_cols > kMaxHtmlCoordinates) {
      return ParseError{offset, "table too large"};
    }
    for (int r = 0; r < n_rows; ++r) {
      for (int c = 0; c < grid.n_cols; ++c) {
        if (!is_occupied(r, c)) grid.cells.push_back(Cell{r, c, 1, 1, "", false});
      }
    }
    sort_reading_order(grid);
    return grid;
  }

 private:
  std::vector<std::vector<RawCell>> rows_;
  RawCell current_;
  bool in_row_ = false;
  bool in_cell_ = false;
};

std::size_t find_table_open(std::string_view raw, std::size_t from) {
  for (std::size_t p = raw.find('<', from); p != std::string_view::npos; p = raw.find('<', p + 1)) {
    if (iequals_prefix(raw, p + 1, "table")) {
      std::size_t after = p + 6;
      if (after >= raw.size() || is_space(raw[after]) || raw[after] == '>' || raw[after] == '/') {
        return p;
      }
    }
  }
  return std::string_view::npos;
}

void escape_into(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out.push_back(c);
    }
  }
}

}  // namespace

std::string normalize_cell_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

ParseResult<TableGrid> parse_html_table(std::string_view raw) {
  const std::size_t start = find_table_open(raw, 0);
  if (start == std::string_view::npos) return ParseError{0, "no table element"};
  Tag tag;
  bool unterminated = false;
  if (!read_tag(raw, start, tag, unterminated)) return ParseError{start, "unterminated tag"};

  TableBuilder builder;
  int nested = 0;
  std::size_t p = tag.end;
  while (p < raw.size()) {
    std::size_t lt = raw.find('<', p);
    if (lt == std::string_view::npos) break;
    builder.append_text(raw.substr(p, lt - p));
    if (raw.compare(lt, 4, "<!--") == 0) {
      std::size_t close = raw.find("-->", lt + 4);
      if (close == std::string_view::npos) return ParseError{lt, "unterminated comment"};
      p = close + 3;
      continue;
    }
    if (!read_tag(raw, lt, tag, unterminated)) {
      if (unterminated) return ParseError{lt, "unterminated tag"};
      builder.append_text(raw.substr(lt, 1));
      p = lt + 1;
      continue;
    }
    p = tag.end;
    const std::string& name = tag.name;
    if (nested > 0) {
      if (name == "table") nested += tag.closing ? -1 : 1;
      continue;
    }
    if (name == "table") {
      if (tag.closing) return builder.build(lt);
      nested = 1;
    } else if (name == "tr") {
      if (tag.closing) builder.close_row();
      else builder.open_row();
    } else if (name == "td" || name == "th") {
      if (tag.closing) builder.close_cell();
      else builder.open_cell(tag);
    } else if (name == "thead" || name == "tbody" || name == "tfoot") {
      builder.close_row();
    }
    // Any other tag is inline markup: dropped, text kept.
  }
  return ParseError{raw.size(), "unclosed table"};
}

std::string grid_to_html(const TableGrid& grid) {
  require_valid(grid);
  std::string out = "<table>";
  std::size_t i = 0;
  for (int r = 0; r < grid.n_rows; ++r) {
    out += "<tr>";
    for (; i < grid.cells.size() && grid.cells[i].row == r; ++i) {
      const Cell& cell = grid.cells[i];
      const char* tag = cell.is_header ? "th" : "td";
      out += '<';
      out += tag;
      if (cell.row_span > 1) out += " rowspan=\"" + std::to_string(cell.row_span) + "\"";
      if (cell.col_span > 1) out += " colspan=\"" + std::to_string(cell.col_span) + "\"";
      out += '>';
      escape_into(out, cell.content);
      out += "</";
      out += tag;
      out += '>';
    }
    out += "</tr>";
  }
  out += "</table>";
  return out;
}

}  // namespace trivia
