// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prompt templates for the model roles. Defaults are compiled in from
// assets/prompts; a directory of the same file names overrides them.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace trivia {

enum class Lang { kEn, kZh };

std::string_view to_string(Lang lang);
Lang parse_lang(std::string_view name);

/// zh iff at least 30% of the code points (whitespace excluded) are CJK.
Lang infer_language(std::string_view text);

struct PromptSet {
  std::string qa_generation;
  std::string answer_en, answer_zh;
  std::string validate_image_en, validate_image_zh;
  std::string validate_text_en, validate_text_zh;
  std::string recognize_html, recognize_otsl;

  static PromptSet defaults();
  /// Files present in `dir` replace the matching default; others are kept.
  static PromptSet load(const std::filesystem::path& dir);

  const std::string& answer(Lang lang) const;
  const std::string& validate(Lang lang, bool with_image) const;
};

/// Names of the template files, without the .txt suffix.
std::vector<std::string> prompt_names();
/// Compiled-in text for one template name; throws std::out_of_range.
const std::string& default_prompt(const std::string& name);

/// Replaces every {key} with its value in one left-to-right pass; inserted
/// text is never rescanned. Unknown placeholders are left as is.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

}  // namespace trivia
