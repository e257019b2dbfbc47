// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <string>
#include <tuple>
#include <vector>

#include "trivia/markup.hpp"

namespace trivia {
namespace {

std::size_t ifind(std::string_view hay, std::string_view needle, std::size_t from) {
  if (needle.empty() || hay.size() < needle.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
    bool eq = true;
    for (std::size_t k = 0; k < needle.size() && eq; ++k) {
      eq = std::tolower(static_cast<unsigned char>(hay[i + k])) ==
           std::tolower(static_cast<unsigned char>(needle[k]));
    }
    if (eq) return i;
  }
  return std::string_view::npos;
}

// Longest stretch of raw text between row terminators.
std::size_t longest_unterminated_run(std::string_view raw, MarkupFormat format,
                                     const OtslSpelling& spelling) {
  std::vector<std::string_view> terminators;
  if (format == MarkupFormat::kHtml) {
    terminators = {"<tr", "</tr"};
  } else {
    terminators = {spelling.newline};
  }
  std::size_t longest = 0;
  std::size_t last = 0;
  std::size_t p = 0;
  while (true) {
    std::size_t next = std::string_view::npos;
    std::size_t len = 0;
    for (auto t : terminators) {
      std::size_t at = ifind(raw, t, p);
      if (at < next) {
        next = at;
        len = t.size();
      }
    }
    if (next == std::string_view::npos) {
      longest = std::max(longest, raw.size() - last);
      break;
    }
    longest = std::max(longest, next - last);
    last = next + len;
    p = last;
  }
  return longest;
}

using RowSignature = std::vector<std::tuple<int, int, int, std::string>>;

int longest_repeated_row_run(const TableGrid& grid) {
  int best = 0;
  int run = 0;
  RowSignature prev;
  std::size_t i = 0;
  for (int r = 0; r < grid.n_rows; ++r) {
    RowSignature sig;
    for (; i < grid.cells.size() && grid.cells[i].row == r; ++i) {
      const Cell& c = grid.cells[i];
      sig.emplace_back(c.col, c.row_span, c.col_span, c.content);
    }
    run = (r > 0 && sig == prev) ? run + 1 : 1;
    best = std::max(best, run);
    prev = std::move(sig);
  }
  return best;
}

}  // namespace

std::string_view to_string(MarkupFormat format) {
  return format == MarkupFormat::kHtml ? "html" : "otsl";
}

std::optional<MarkupFormat> parse_format(std::string_view name) {
  if (name == "html") return MarkupFormat::kHtml;
  if (name == "otsl") return MarkupFormat::kOtsl;
  return std::nullopt;
}

std::string_view to_string(LegalityGate gate) {
  switch (gate) {
    case LegalityGate::kLegal: return "legal";
    case LegalityGate::kParse: return "parse";
    case LegalityGate::kGrid: return "grid";
    case LegalityGate::kRepetitive: return "repetitive";
  }
  return "unknown";
}

MarkupFormat detect_format(std::string_view raw) {
  return ifind(raw, "<table", 0) != std::string_view::npos ? MarkupFormat::kHtml
                                                           : MarkupFormat::kOtsl;
}

ParseResult<TableGrid> parse_markup(std::string_view raw, MarkupFormat format,
                                    const OtslSpelling& spelling) {
  if (format == MarkupFormat::kHtml) return parse_html_table(raw);
  auto parsed = parse_otsl(raw, spelling);
  if (!parsed) return parsed.error();
  try {
    return otsl_to_grid(parsed.value());
  } catch (const InvalidSequence& e) {
    return ParseError{e.index(), e.what()};
  }
}

std::string serialize(const TableGrid& grid, MarkupFormat format, const OtslSpelling& spelling) {
  if (format == MarkupFormat::kHtml) return grid_to_html(grid);
  return render_otsl(grid_to_otsl(grid), spelling);
}

Legality is_legal(std::string_view raw, MarkupFormat format, const LegalityConfig& config) {
  Legality verdict;
  auto parsed = parse_markup(raw, format, config.spelling);
  if (!parsed) {
    verdict.gate = LegalityGate::kParse;
    verdict.reason = "parse: " + parsed.error().reason + " at " +
                     std::to_string(parsed.error().position);
    return verdict;
  }
  const TableGrid& grid = parsed.value();
  auto report = grid_validate(grid);
  if (!report.ok()) {
    verdict.gate = LegalityGate::kGrid;
    verdict.reason = "grid: " + report.violations.front().message;
    return verdict;
  }
  if (int run = longest_repeated_row_run(grid); run > config.max_repeated_rows) {
    verdict.gate = LegalityGate::kRepetitive;
    verdict.reason = "repetitive: row repeated " + std::to_string(run) + " times";
    return verdict;
  }
  if (auto run = longest_unterminated_run(raw, format, config.spelling);
      run > config.max_unterminated_chars) {
    verdict.gate = LegalityGate::kRepetitive;
    verdict.reason = "repetitive: " + std::to_string(run) + " characters without a row terminator";
    return verdict;
  }
  verdict.legal = true;
  verdict.gate = LegalityGate::kLegal;
  verdict.reason = "legal";
  verdict.grid = std::move(parsed).value();
  return verdict;
}

}  // namespace trivia
