// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/prompts.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

#include "utf8.hpp"

namespace trivia {

namespace detail {
const std::map<std::string, std::string>& prompt_table();
}

namespace {

// Asset files end with a newline that is not part of the template.
std::string strip_final_newline(std::string s) {
  if (!s.empty() && s.back() == '\n') s.pop_back();
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::string_view to_string(Lang lang) { return lang == Lang::kZh ? "zh" : "en"; }

Lang parse_lang(std::string_view name) {
  if (name == "zh") return Lang::kZh;
  if (name == "en") return Lang::kEn;
  throw std::invalid_argument("unknown language tag: " + std::string(name));
}

Lang infer_language(std::string_view text) {
  std::size_t total = 0, cjk = 0;
  for (char32_t cp : utf8::decode(text)) {
    if (cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r') continue;
    ++total;
    if (utf8::is_cjk(cp)) ++cjk;
  }
  return total > 0 && cjk * 10 >= total * 3 ? Lang::kZh : Lang::kEn;
}

std::vector<std::string> prompt_names() {
  return {"qa_generation",     "answer_en",         "answer_zh",
          "validate_image_en", "validate_image_zh", "validate_text_en",
          "validate_text_zh",  "recognize_html",    "recognize_otsl"};
}

const std::string& default_prompt(const std::string& name) {
  return detail::prompt_table().at(name);
}

PromptSet PromptSet::defaults() {
  PromptSet p;
  p.qa_generation = strip_final_newline(default_prompt("qa_generation"));
  p.answer_en = strip_final_newline(default_prompt("answer_en"));
  p.answer_zh = strip_final_newline(default_prompt("answer_zh"));
  p.validate_image_en = strip_final_newline(default_prompt("validate_image_en"));
  p.validate_image_zh = strip_final_newline(default_prompt("validate_image_zh"));
  p.validate_text_en = strip_final_newline(default_prompt("validate_text_en"));
  p.validate_text_zh = strip_final_newline(default_prompt("validate_text_zh"));
  p.recognize_html = strip_final_newline(default_prompt("recognize_html"));
  p.recognize_otsl = strip_final_newline(default_prompt("recognize_otsl"));
  return p;
}

PromptSet PromptSet::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("prompt directory not found: " + dir.string());
  }
  PromptSet p = defaults();
  const std::map<std::string, std::string*> slots = {
      {"qa_generation", &p.qa_generation},         {"answer_en", &p.answer_en},
      {"answer_zh", &p.answer_zh},                 {"validate_image_en", &p.validate_image_en},
      {"validate_image_zh", &p.validate_image_zh}, {"validate_text_en", &p.validate_text_en},
      {"validate_text_zh", &p.validate_text_zh},   {"recognize_html", &p.recognize_html},
      {"recognize_otsl", &p.recognize_otsl}};
  for (const auto& [name, slot] : slots) {
    std::ifstream in(dir / (name + ".txt"), std::ios::binary);
    if (!in) continue;
    *slot = strip_final_newline(
        std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  }
  return p;
}

const std::string& PromptSet::answer(Lang lang) const {
  return lang == Lang::kZh ? answer_zh : answer_en;
}

const std::string& PromptSet::validate(Lang lang, bool with_image) const {
  if (with_image) return lang == Lang::kZh ? validate_image_zh : validate_image_en;
  return lang == Lang::kZh ? validate_text_zh : validate_text_en;
}

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

}  // namespace trivia
