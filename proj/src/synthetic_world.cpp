// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/synthetic_world.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "rng.hpp"
#include "trivia/markup.hpp"
#include "trivia/simulator.hpp"

namespace trivia {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kPatchSide = 16;

struct Located {
  int row = 0;
  int col = 0;
  const Cell* answer = nullptr;
  const Cell* row_label = nullptr;
  const Cell* col_label = nullptr;
};

class Coverage {
 public:
  explicit Coverage(const TableGrid& g) : g_(g), at_(static_cast<std::size_t>(g.n_rows * g.n_cols), -1) {
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
      const Cell& c = g.cells[i];
      for (int r = c.row; r < c.row + c.row_span; ++r)
        for (int k = c.col; k < c.col + c.col_span; ++k) at_[idx(r, k)] = static_cast<int>(i);
    }
  }
  const Cell* cover(int r, int c) const {
    if (r < 0 || c < 0 || r >= g_.n_rows || c >= g_.n_cols) return nullptr;
    const int i = at_[idx(r, c)];
    return i < 0 ? nullptr : &g_.cells[static_cast<std::size_t>(i)];
  }

 private:
  std::size_t idx(int r, int c) const { return static_cast<std::size_t>(r * g_.n_cols + c); }
  const TableGrid& g_;
  std::vector<int> at_;
};

std::optional<std::pair<std::string, std::string>> parse_question(const std::string& q) {
  static const std::string en_prefix = "What is the ";
  static const std::string zh_mid = "的";
  static const std::string zh_suffix = "是多少？";
  if (q.rfind(en_prefix, 0) == 0 && q.size() > en_prefix.size() && q.back() == '?') {
    const auto f = q.rfind(" for ");
    if (f == std::string::npos || f < en_prefix.size()) return std::nullopt;
    return std::make_pair(q.substr(en_prefix.size(), f - en_prefix.size()),
                          q.substr(f + 5, q.size() - f - 6));
  }
  if (q.size() > zh_suffix.size() && q.compare(q.size() - zh_suffix.size(), zh_suffix.size(), zh_suffix) == 0) {
    const auto m = q.find(zh_mid);
    if (m == std::string::npos) return std::nullopt;
    const auto row_start = m + zh_mid.size();
    return std::make_pair(q.substr(row_start, q.size() - zh_suffix.size() - row_start), q.substr(0, m));
  }
  return std::nullopt;
}

std::optional<Located> locate(const TableGrid& grid, const std::string& question) {
  auto labels = parse_question(question);
  if (!labels) return std::nullopt;
  const auto& [row_label, col_label] = *labels;
  Located out;
  for (const auto& c : grid.cells) {
    if (c.col == 0 && c.content == row_label) {
      out.row = c.row;
      out.row_label = &c;
      break;
    }
  }
  if (!out.row_label) return std::nullopt;
  for (const auto& c : grid.cells) {
    if (c.row < out.row && c.content == col_label && (!out.col_label || c.row > out.col_label->row)) {
      out.col_label = &c;
    }
  }
  if (!out.col_label) return std::nullopt;
  out.col = out.col_label->col;
  out.answer = Coverage(grid).cover(out.row, out.col);
  if (!out.answer || out.answer->content.empty()) return std::nullopt;
  return out;
}

std::string request_text(const ChatRequest& r) {
  std::string out;
  for (const auto& m : r.messages)
    for (const auto& p : m.parts)
      if (p.kind == ContentPart::Kind::kText) out += p.value;
  return out;
}

std::string after_last(const std::string& text, const std::string& marker) {
  const auto p = text.rfind(marker);
  if (p == std::string::npos) return "";
  std::string s = text.substr(p + marker.size());
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

std::string question_of(const std::string& text) {
  std::string q = after_last(text, "Question: ");
  if (q.empty()) q = after_last(text, "问题: ");
  return q;
}

const std::map<std::string, std::string>& common_knowledge() {
  static const std::map<std::string, std::string> facts = {
      {"What is the capital of France?", "Paris"},
      {"How many days are in a week?", "7"},
      {"中国的首都是哪里？", "北京"},
      {"一年有多少个月？", "12"}};
  return facts;
}

ChatReply single(std::string text) {
  ChatReply r;
  r.choices = {std::move(text)};
  return r;
}

std::string wrap_answer(const std::optional<std::string>& answer, bool zh) {
  return "<answer>" + (answer ? *answer : std::string(zh ? "无法回答" : "Not answerable")) + "</answer>";
}

bool mostly_cjk(const std::string& s) { return infer_language(s) == Lang::kZh; }

std::string hallucinate(std::string answer) {
  for (auto it = answer.rbegin(); it != answer.rend(); ++it) {
    if (*it >= '0' && *it <= '9') {
      *it = static_cast<char>('0' + (*it - '0' + 1) % 10);
      return answer;
    }
  }
  return answer + "s";
}

TableGrid parse_gold(const std::string& html) {
  auto r = parse_html_table(html);
  if (!r) throw std::logic_error("bad world table: " + r.error().reason);
  return r.value();
}

}  // namespace

std::string world_question(const std::string& row_label, const std::string& col_label, Lang lang) {
  if (lang == Lang::kZh) return col_label + "的" + row_label + "是多少？";
  return "What is the " + row_label + " for " + col_label + "?";
}

std::optional<std::string> lookup_answer(const TableGrid& grid, const std::string& question) {
  auto loc = locate(grid, question);
  if (!loc) return std::nullopt;
  return loc->answer->content;
}

SyntheticWorld SyntheticWorld::mock5() {
  std::vector<WorldImage> images;
  images.push_back({"img-a", "images/img-a.png", "doc-broker-1",
                    parse_gold("<table><tr><th>Metric</th><th>2022</th><th>2023</th><th>2024E</th></tr>"
                               "<tr><td>Market cap (Rmb mn)</td><td>11,204.3</td><td>13,650.6</td><td>15,020.1</td></tr>"
                               "<tr><td>12 month price target</td><td>19.40</td><td>24.80</td><td>27.10</td></tr>"
                               "<tr><td>EPS (Rmb)</td><td>1.12</td><td>1.32</td><td>1.58</td></tr>"
                               "<tr><td>Dividend yield</td><td>1.8%</td><td>2.1%</td><td>2.4%</td></tr></table>"),
                    1, 0.15, 0.1});
  images.push_back({"img-b", "images/img-b.png", "doc-annual-2",
                    parse_gold("<table><tr><th rowspan=\"2\">Region</th><th colspan=\"2\">Revenue</th>"
                               "<th colspan=\"2\">Headcount</th></tr>"
                               "<tr><th>Q1</th><th>Q2</th><th>Jan</th><th>Jun</th></tr>"
                               "<tr><td>North</td><td>420</td><td>455</td><td>88</td><td>91</td></tr>"
                               "<tr><td>South</td><td>310</td><td>298</td><td>64</td><td>70</td></tr>"
                               "<tr><td>West</td><td>275</td><td>301</td><td>52</td><td>57</td></tr></table>"),
                    2, 0.25, 0.1});
  images.push_back({"img-c", "images/img-c.png", "doc-annual-2",
                    parse_gold("<table><tr><th>Product</th><th>Units</th><th>Price</th></tr>"
                               "<tr><td>Widget</td><td>1,200</td><td>4.50</td></tr>"
                               "<tr><td>Gadget</td><td>860</td><td>12.75</td></tr>"
                               "<tr><td>Sprocket</td><td>3,415</td><td>0.95</td></tr></table>"),
                    1, 0.10, 0.1});
  images.push_back({"img-d", "images/img-d.png", "doc-report-3",
                    parse_gold("<table><tr><th>项目</th><th>2022年</th><th>2023年</th></tr>"
                               "<tr><td>营业收入</td><td>5,210</td><td>6,034</td></tr>"
                               "<tr><td>净利润</td><td>812</td><td>955</td></tr>"
                               "<tr><td>毛利率</td><td>31.2%</td><td>33.5%</td></tr>"
                               "<tr><td>员工人数</td><td>1,204</td><td>1,388</td></tr></table>"),
                    1, 0.15, 0.1});
  images.push_back({"img-e", "images/img-e.png", "doc-memo-4",
                    parse_gold("<table><tr><th>Item</th><th>Total</th></tr>"
                               "<tr><td>Orders</td><td>57</td></tr>"
                               "<tr><td>Returns</td><td>3</td></tr></table>"),
                    1, 0.05, 0.1});
  return SyntheticWorld(std::move(images));
}

const WorldImage* SyntheticWorld::by_image(const std::string& image) const {
  for (const auto& w : images_)
    if (w.image == image) return &w;
  return nullptr;
}

const WorldImage* SyntheticWorld::by_id(const std::string& image_id) const {
  for (const auto& w : images_)
    if (w.image_id == image_id) return &w;
  return nullptr;
}

std::vector<json> SyntheticWorld::image_records() const {
  std::vector<json> out;
  for (const auto& w : images_) {
    out.push_back({{"schema", "trivia/v1"},
                   {"kind", "image"},
                   {"image_id", w.image_id},
                   {"image", w.image},
                   {"source_doc", w.source_doc}});
  }
  return out;
}

AttentionMap SyntheticWorld::attention_for(const std::string& image_id, const QaCandidate& cand) const {
  const WorldImage* w = by_id(image_id);
  if (!w) throw std::invalid_argument("unknown image " + image_id);
  AttentionMap a;
  a.image_id = image_id;
  a.qa_index = cand.qa_index;
  a.n_visual_tokens = kPatchSide * kPatchSide;
  a.layer = 72;
  std::mt19937_64 g(rng::mix(rng::hash_string(image_id), static_cast<std::uint64_t>(cand.qa_index)));
  a.weights.resize(static_cast<std::size_t>(a.n_visual_tokens));
  for (auto& x : a.weights) x = 0.008 * rng::unit(g);
  auto paint = [&](const Cell* c, double base) {
    if (!c) return;
    const int R = w->gold.n_rows, C = w->gold.n_cols;
    const int r0 = c->row * kPatchSide / R, r1 = (c->row + c->row_span) * kPatchSide / R;
    const int c0 = c->col * kPatchSide / C, c1 = (c->col + c->col_span) * kPatchSide / C;
    for (int pr = r0; pr < r1; ++pr)
      for (int pc = c0; pc < c1; ++pc)
        a.weights[static_cast<std::size_t>(pr * kPatchSide + pc)] = base + base * rng::unit(g);
  };
  if (auto loc = locate(w->gold, cand.question)) {
    paint(loc->row_label, 0.012);
    paint(loc->col_label, 0.012);
    paint(loc->answer, 0.03);
  }
  for (auto& x : a.weights) x = std::round(x * 1e5) / 1e5;  // keeps fixture files small
  return a;
}

ChatReply SyntheticBackend::complete(const ChatRequest& request) {
  switch (request.role) {
    case Role::kPolicy: return policy(request);
    case Role::kTeacher: return teacher(request);
    case Role::kValidator: return validator(request);
    case Role::kAnswerer: return answerer(request);
  }
  throw GatewayError(GatewayError::Kind::kInvalidRequest, request.role, "unknown role");
}

const WorldImage& SyntheticBackend::image_of(const ChatRequest& request) const {
  for (const auto& m : request.messages)
    for (const auto& p : m.parts)
      if (p.kind == ContentPart::Kind::kImage)
        if (const WorldImage* w = world_->by_image(p.value)) return *w;
  throw GatewayError(GatewayError::Kind::kInvalidRequest, request.role, "image not in world");
}

ChatReply SyntheticBackend::policy(const ChatRequest& request) const {
  const WorldImage& w = image_of(request);
  auto corruption = CorruptionPolicy::for_error_rate(w.error_rate * request.temperature,
                                                     w.p_illegal_emit, request.seed.value_or(0));
  ChatReply r;
  r.choices = sample_responses(w.gold, corruption, request.n_samples, "0123456789");
  return r;
}

ChatReply SyntheticBackend::teacher(const ChatRequest& request) const {
  const WorldImage& w = image_of(request);
  std::mt19937_64 g(rng::mix(request.seed.value_or(0), rng::hash_string(w.image_id)));
  Coverage cover(w.gold);
  struct Item {
    std::string question, answer;
  };
  std::vector<Item> pool;
  for (int r = w.header_rows; r < w.gold.n_rows; ++r) {
    const Cell* label = cover.cover(r, 0);
    if (!label || label->row != r || label->content.empty()) continue;
    for (int c = 1; c < w.gold.n_cols; ++c) {
      const Cell* head = cover.cover(w.header_rows - 1, c);
      const Cell* ans = cover.cover(r, c);
      if (!head || !ans || head->col != c || ans->content.empty()) continue;
      const Lang lang = mostly_cjk(label->content + head->content) ? Lang::kZh : Lang::kEn;
      pool.push_back({world_question(label->content, head->content, lang), ans->content});
    }
  }
  const double u = rng::unit(g);
  if (u < 0.08 || pool.empty()) return single("None");
  const bool zh = mostly_cjk(pool.front().question);
  std::vector<Item> items;
  const int count = 4 + static_cast<int>(rng::below(g, 3));
  for (int i = 0; i < count; ++i) {
    Item it = pool[rng::below(g, pool.size())];
    if (rng::chance(g, 0.08)) it.answer = hallucinate(it.answer);
    items.push_back(std::move(it));
  }
  if (rng::chance(g, 0.35)) {
    std::vector<std::pair<std::string, std::string>> facts;
    for (const auto& [q, a] : common_knowledge())
      if (mostly_cjk(q) == zh) facts.emplace_back(q, a);
    const auto& f = facts[rng::below(g, facts.size())];
    items.insert(items.begin() + static_cast<std::ptrdiff_t>(rng::below(g, items.size() + 1)),
                 Item{f.first, f.second});
  }
  std::string text = "```json\n[\n";
  for (const auto& it : items) {
    ordered_json o;
    o["question"] = it.question;
    o["answer"] = it.answer;
    text += "    " + o.dump() + ",\n";
  }
  text += "]\n```";
  if (u < 0.16) text.resize(text.size() * 3 / 5);  // cut off mid-array
  return single(text);
}

ChatReply SyntheticBackend::validator(const ChatRequest& request) const {
  const std::string q = question_of(request_text(request));
  const bool zh = mostly_cjk(q);
  auto fact = common_knowledge().find(q);
  if (fact != common_knowledge().end()) return single(wrap_answer(fact->second, zh));
  if (!request.has_image()) return single(wrap_answer(std::nullopt, zh));
  return single(wrap_answer(lookup_answer(image_of(request).gold, q), zh));
}

ChatReply SyntheticBackend::answerer(const ChatRequest& request) const {
  const std::string text = request_text(request);
  const std::string q = question_of(text);
  const bool zh = mostly_cjk(q);
  const std::string table_marker = zh ? "HTML表格: " : "HTML Table: ";
  const std::string question_marker = zh ? "\n\n问题: " : "\n\nQuestion: ";
  const auto a = text.find(table_marker);
  const auto b = text.rfind(question_marker);
  std::optional<std::string> answer;
  if (a != std::string::npos && b != std::string::npos && b > a) {
    auto grid = parse_html_table(text.substr(a + table_marker.size(), b - a - table_marker.size()));
    if (grid) answer = lookup_answer(grid.value(), q);
  }
  return single(wrap_answer(answer, zh));
}

}  // namespace trivia
