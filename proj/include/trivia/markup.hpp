// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// HTML and OTSL table markup: parsing, canonical serialization and the
// legality gate applied to model responses.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "trivia/table.hpp"

namespace trivia {

enum class MarkupFormat { kHtml, kOtsl };

std::string_view to_string(MarkupFormat format);
std::optional<MarkupFormat> parse_format(std::string_view name);

/// `position` is a byte offset for HTML input and a token index for OTSL.
struct ParseError {
  std::size_t position = 0;
  std::string reason;
};

template <typename T>
class ParseResult {
 public:
  ParseResult(T value) : v_(std::move(value)) {}
  ParseResult(ParseError error) : v_(std::move(error)) {}

  bool ok() const { return v_.index() == 0; }
  explicit operator bool() const { return ok(); }
  const T& value() const& { return std::get<0>(v_); }
  T&& value() && { return std::get<0>(std::move(v_)); }
  const ParseError& error() const { return std::get<1>(v_); }

 private:
  std::variant<T, ParseError> v_;
};

/// Collapses whitespace runs to one space and trims both ends. Both parsers
/// store cell text in this form.
std::string normalize_cell_text(std::string_view text);

// ---------------------------------------------------------------------------
// HTML

/// Tolerant parse of the first <table> element. Missing thead/tbody, missing
/// </td> and </tr>, unquoted attributes and th cells are accepted. Overlapping
/// spans are resolved first-anchor-wins: later cells shift right and their
/// spans are clipped to free space. Ragged rows are padded with empty cells.
/// Nested tables and inline tags are flattened into the enclosing cell text.
ParseResult<TableGrid> parse_html_table(std::string_view raw);

/// Canonical HTML: one <tr> per row, rowspan/colspan only when > 1.
std::string grid_to_html(const TableGrid& grid);

// ---------------------------------------------------------------------------
// OTSL

enum class OtslToken : std::uint8_t {
  kFull,       // F: new cell with text
  kEmpty,      // E: new empty cell
  kLeft,       // L: merge with left neighbour
  kUp,         // U: merge with upper neighbour
  kCross,      // X: merge left and up
  kNewline,    // NL: row terminator
};

char token_letter(OtslToken token);

struct OtslSeq {
  std::vector<OtslToken> tokens;
  bool operator==(const OtslSeq&) const = default;
};

/// A sequence plus the text of each opener (F or E), in sequence order.
struct OtslTable {
  OtslSeq seq;
  std::vector<std::string> texts;
  bool operator==(const OtslTable&) const = default;
};

/// Surface spelling of the six tokens. Text follows the full-cell tag.
struct OtslSpelling {
  std::string full = "<fcel>";
  std::string empty = "<ecel>";
  std::string left = "<lcel>";
  std::string up = "<ucel>";
  std::string cross = "<xcel>";
  std::string newline = "<nl>";

  const std::string& spell(OtslToken token) const;
};

class InvalidSequence : public std::runtime_error {
 public:
  InvalidSequence(std::size_t index, const std::string& what)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Returns the first violation of the sequence rules, if any: equal row
/// widths, merge-token adjacency, rectangular merge regions, trailing NL.
std::optional<ParseError> validate_otsl(const OtslSeq& seq);

/// Tokenizes and validates. A full-cell tag followed only by whitespace is
/// read as an empty cell, so parsed sequences are always canonical.
ParseResult<OtslTable> parse_otsl(std::string_view raw, const OtslSpelling& spelling = {});

std::string render_otsl(const OtslTable& table, const OtslSpelling& spelling = {});

/// Throws InvalidSequence on an invalid sequence or a text count mismatch.
TableGrid otsl_to_grid(const OtslTable& table);

/// Throws InvalidGrid when the grid is not valid.
OtslTable grid_to_otsl(const TableGrid& grid);

// ---------------------------------------------------------------------------
// Format-generic helpers

/// "html" when the text contains a <table tag, otherwise "otsl".
MarkupFormat detect_format(std::string_view raw);

ParseResult<TableGrid> parse_markup(std::string_view raw, MarkupFormat format,
                                    const OtslSpelling& spelling = {});

std::string serialize(const TableGrid& grid, MarkupFormat format,
                      const OtslSpelling& spelling = {});

struct LegalityConfig {
  int max_repeated_rows = 30;
  std::size_t max_unterminated_chars = 16384;
  OtslSpelling spelling;
};

enum class LegalityGate { kLegal, kParse, kGrid, kRepetitive };

std::string_view to_string(LegalityGate gate);

struct Legality {
  bool legal = false;
  LegalityGate gate = LegalityGate::kParse;
  std::string reason;
  std::optional<TableGrid> grid;  // set when legal
};

/// A response is legal when it parses in `format`, the grid validates, and
/// neither repetition cap fires: no row signature repeated more than
/// max_repeated_rows times in a row, no run of more than
/// max_unterminated_chars characters without a row terminator.
Legality is_legal(std::string_view raw, MarkupFormat format, const LegalityConfig& config = {});

}  // namespace trivia
