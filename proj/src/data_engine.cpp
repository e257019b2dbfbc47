// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/data_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

#include "rng.hpp"

namespace trivia {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

int label_decimals(double step) {
  for (int d = 1; d <= 6; ++d) {
    const double scaled = step * std::pow(10.0, d);
    if (std::abs(scaled - std::round(scaled)) < 1e-6) return d;
  }
  return 6;
}

// Drops commas that directly precede a closing bracket, outside strings.
std::string strip_trailing_commas(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      out += c;
      if (c == '\\' && i + 1 < s.size()) {
        out += s[++i];
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == ',') {
      auto j = s.find_first_not_of(" \t\r\n", i + 1);
      if (j != std::string_view::npos && (s[j] == ']' || s[j] == '}')) continue;
    }
    out += c;
  }
  return out;
}

std::optional<std::string> scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  return std::nullopt;
}

}  // namespace

// ---- consistency ----------------------------------------------------------

double mean_pairwise(const std::vector<std::vector<double>>& sim) {
  const std::size_t m = sim.size();
  if (m < 2) return 0.0;
  std::vector<double> values;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) values.push_back(sim[i][j]);
  // Summing in sorted order makes the result independent of response order.
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double md = static_cast<double>(m);
  return std::clamp(2.0 / (md * md - md) * sum, 0.0, 1.0);
}

ConsistencyScore consistency_score(const std::vector<std::string>& responses,
                                   const LegalityConfig& legality) {
  if (responses.size() < 2) {
    throw std::invalid_argument("consistency needs at least 2 responses, got " +
                                std::to_string(responses.size()));
  }
  std::vector<TableGrid> grids;
  for (const auto& r : responses) {
    Legality l = is_legal(r, detect_format(r), legality);
    if (l.legal) grids.push_back(std::move(*l.grid));
  }
  ConsistencyScore out;
  out.legal_count = static_cast<int>(grids.size());
  if (grids.size() < 2) {
    out.degenerate = true;
    return out;
  }
  std::vector<std::vector<double>> sim(grids.size(), std::vector<double>(grids.size(), 0.0));
  for (std::size_t i = 0; i < grids.size(); ++i)
    for (std::size_t j = i + 1; j < grids.size(); ++j) sim[i][j] = teds(grids[i], grids[j]);
  out.score = mean_pairwise(sim);
  return out;
}

int BucketConfig::n_buckets() const { return static_cast<int>(std::lround((hi - lo) / step)); }

void BucketConfig::check() const {
  if (!(lo < hi)) throw std::invalid_argument("bucket range needs lo < hi");
  if (!(step > 0)) throw std::invalid_argument("bucket step must be positive");
  const int n = n_buckets();
  if (n < 1 || std::abs(n * step - (hi - lo)) > 1e-9) {
    throw std::invalid_argument("bucket step must divide hi - lo");
  }
}

std::optional<int> bucket_index(double score, const BucketConfig& config) {
  if (score < config.lo - 1e-12 || score > config.hi + 1e-12) return std::nullopt;
  const int n = config.n_buckets();
  int idx = static_cast<int>(std::floor((score - config.lo) / config.step + 1e-9));
  return std::clamp(idx, 0, n - 1);
}

std::string bucket_label(int index, const BucketConfig& config) {
  const int d = label_decimals(config.step);
  const double a = config.lo + index * config.step;
  const bool top = index == config.n_buckets() - 1;
  const double b = top ? config.hi : config.lo + (index + 1) * config.step;
  char buf[64];
  std::snprintf(buf, sizeof buf, "[%.*f,%.*f%c", d, a, d, b, top ? ']' : ')');
  return buf;
}

std::size_t bucket_quota(int index, const BucketConfig& config) {
  if (!config.total_target) return std::numeric_limits<std::size_t>::max();
  const auto n = static_cast<std::size_t>(config.n_buckets());
  const std::size_t base = *config.total_target / n;
  if (index == config.n_buckets() - 1) return *config.total_target - base * (n - 1);
  return base;
}

std::vector<BucketDecision> bucket_sample(const std::vector<ConsistencyRecord>& records,
                                          const BucketConfig& config) {
  config.check();
  const int n = config.n_buckets();
  std::vector<BucketDecision> out(records.size());
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double s = records[i].score;
    auto idx = bucket_index(s, config);
    if (!idx) {
      out[i].reason = s < config.lo ? "below-range" : "above-range";
      continue;
    }
    out[i].bucket = idx;
    out[i].label = bucket_label(*idx, config);
    members[static_cast<std::size_t>(*idx)].push_back(i);
  }
  std::set<std::string> used;
  for (int b = 0; b < n; ++b) {
    auto& list = members[static_cast<std::size_t>(b)];
    std::mt19937_64 g(rng::mix(config.seed, static_cast<std::uint64_t>(b)));
    rng::shuffle(list, g);
    const std::size_t quota = bucket_quota(b, config);
    std::size_t taken = 0;
    for (std::size_t i : list) {
      if (taken >= quota) {
        out[i].reason = "quota";
      } else if (!used.insert(records[i].dedup_key()).second) {
        out[i].reason = "duplicate-source";
      } else {
        out[i].selected = true;
        ++taken;
      }
    }
  }
  return out;
}

// ---- attention and candidates ----------------------------------------------

AttentionMap AttentionMap::from_json(const json& j) {
  AttentionMap a;
  a.image_id = j.at("image_id").get<std::string>();
  a.qa_index = j.at("qa_index").get<int>();
  a.n_visual_tokens = j.at("n_visual_tokens").get<int>();
  if (j.contains("layer") && !j["layer"].is_null()) a.layer = j["layer"].get<int>();
  a.weights = j.at("weights").get<std::vector<double>>();
  if (a.n_visual_tokens < 0 || static_cast<std::size_t>(a.n_visual_tokens) != a.weights.size()) {
    throw std::invalid_argument("attention weights length " + std::to_string(a.weights.size()) +
                                " does not match n_visual_tokens " +
                                std::to_string(a.n_visual_tokens));
  }
  for (double w : a.weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("attention weights must be nonnegative");
  }
  return a;
}

json AttentionMap::to_json() const {
  json j = {{"image_id", image_id},
            {"qa_index", qa_index},
            {"n_visual_tokens", n_visual_tokens},
            {"weights", weights}};
  if (layer) j["layer"] = *layer;
  return j;
}

TokenSet extract_visual_source(const AttentionMap& att, double tau_attn) {
  TokenSet out;
  for (std::size_t v = 0; v < att.weights.size(); ++v) {
    if (att.weights[v] > tau_attn) out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string_view to_string(Validity v) {
  switch (v) {
    case Validity::kValid: return "valid";
    case Validity::kInvalid: return "invalid";
    case Validity::kUnchecked: break;
  }
  return "unchecked";
}

Validity parse_validity(std::string_view name) {
  if (name == "valid") return Validity::kValid;
  if (name == "invalid") return Validity::kInvalid;
  if (name == "unchecked") return Validity::kUnchecked;
  throw std::invalid_argument("unknown validity: " + std::string(name));
}

json QaCandidate::to_json() const {
  json j = {{"qa_index", qa_index},
            {"question", question},
            {"answer", answer},
            {"lang", to_string(lang)},
            {"validity", to_string(validity)}};
  if (visual_source) j["visual_source"] = *visual_source;
  if (!invalid_reason.empty()) j["invalid_reason"] = invalid_reason;
  if (f1_with_image) j["f1_with_image"] = *f1_with_image;
  if (f1_without_image) j["f1_without_image"] = *f1_without_image;
  if (validity != Validity::kUnchecked) {
    j["answer_with_image"] = answer_with_image;
    j["answer_without_image"] = answer_without_image;
  }
  return j;
}

QaCandidate QaCandidate::from_json(const json& j) {
  QaCandidate c;
  c.qa_index = j.at("qa_index").get<int>();
  c.question = j.at("question").get<std::string>();
  c.answer = j.at("answer").get<std::string>();
  c.lang = j.contains("lang") ? parse_lang(j["lang"].get<std::string>())
                              : infer_language(c.question + c.answer);
  c.validity = parse_validity(j.value("validity", "unchecked"));
  if (j.contains("visual_source")) {
    c.visual_source = make_token_set(j["visual_source"].get<std::vector<int>>());
  }
  c.invalid_reason = j.value("invalid_reason", "");
  if (j.contains("f1_with_image")) c.f1_with_image = j["f1_with_image"].get<double>();
  if (j.contains("f1_without_image")) c.f1_without_image = j["f1_without_image"].get<double>();
  c.answer_with_image = j.value("answer_with_image", "");
  c.answer_without_image = j.value("answer_without_image", "");
  return c;
}

CrossCheckResult cross_check_validate(const QaCandidate& cand, const std::string& ans_with_image,
                                      const std::string& ans_without_image,
                                      const CrossCheckThresholds& thresholds) {
  return cross_check_scores(answer_f1(ans_with_image, cand.answer),
                            answer_f1(ans_without_image, cand.answer), thresholds);
}

CrossCheckResult cross_check_scores(double f1_with, double f1_without,
                                    const CrossCheckThresholds& thresholds) {
  CrossCheckResult r;
  r.f1_with = f1_with;
  r.f1_without = f1_without;
  if (!(r.f1_with > thresholds.f1_with)) {
    r.validity = Validity::kInvalid;
    r.reason = "not-grounded";
  } else if (!(r.f1_without < thresholds.f1_without)) {
    r.validity = Validity::kInvalid;
    r.reason = "not-visual";
  } else {
    r.validity = Validity::kValid;
  }
  return r;
}

SelectionResult greedy_select(std::vector<QaCandidate> valids, double tau_iou,
                              std::size_t min_qas) {
  for (const auto& c : valids) {
    if (c.validity != Validity::kValid) {
      throw std::invalid_argument("greedy_select given a candidate that is not valid");
    }
    if (!c.visual_source) {
      throw std::invalid_argument("greedy_select given a candidate without a visual source");
    }
  }
  SelectionResult out;
  out.pool_size = valids.size();
  std::stable_sort(valids.begin(), valids.end(), [](const QaCandidate& a, const QaCandidate& b) {
    return a.visual_source->size() > b.visual_source->size();
  });
  for (auto& c : valids) {
    bool ok = true;
    for (const auto& s : out.selected) {
      if (iou(*c.visual_source, *s.visual_source) >= tau_iou) {
        ok = false;
        break;
      }
    }
    if (ok) {
      out.selected.push_back(std::move(c));
    } else {
      out.rejected_qa_indices.push_back(c.qa_index);
    }
  }
  out.dropped = out.selected.size() < min_qas;
  return out;
}

// ---- model-backed steps ----------------------------------------------------

std::optional<std::vector<QaPair>> parse_qa_reply(std::string_view reply) {
  std::string text = trim(reply);
  auto is_none = [](const std::string& s) { return s == "None" || s == "\"None\""; };
  if (is_none(text)) return std::vector<QaPair>{};
  const auto fence = text.find("```");
  if (fence != std::string::npos) {
    auto body_start = text.find('\n', fence);
    if (body_start == std::string::npos) return std::nullopt;
    const auto close = text.find("```", body_start);
    text = trim(text.substr(body_start + 1,
                            close == std::string::npos ? std::string::npos : close - body_start - 1));
    if (is_none(text)) return std::vector<QaPair>{};
  }
  const auto open = text.find('[');
  const auto last = text.rfind(']');
  if (open == std::string::npos || last == std::string::npos || last < open) return std::nullopt;
  json j = json::parse(strip_trailing_commas(std::string_view(text).substr(open, last - open + 1)),
                       nullptr, false);
  if (j.is_discarded() || !j.is_array()) return std::nullopt;
  std::vector<QaPair> out;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("question") || !e.contains("answer")) return std::nullopt;
    auto q = scalar_text(e["question"]);
    auto a = scalar_text(e["answer"]);
    if (!q || !a) return std::nullopt;
    out.push_back({trim(*q), trim(*a)});
  }
  return out;
}

std::string extract_answer(std::string_view reply) {
  const auto open = reply.find("<answer>");
  if (open != std::string_view::npos) {
    const auto start = open + 8;
    const auto close = reply.find("</answer>", start);
    if (close != std::string_view::npos) return trim(reply.substr(start, close - start));
  }
  return trim(reply);
}

std::uint64_t teacher_seed(std::uint64_t seed, const std::string& image_id, int call) {
  const std::uint64_t h = rng::mix(rng::mix(seed, rng::hash_string(image_id)),
                                   static_cast<std::uint64_t>(call));
  return h & 0x7fffffffULL;  // fits every server's seed field
}

ChatRequest qa_generation_request(const std::string& image, const PromptSet& prompts,
                                  const PoolConfig& config, std::uint64_t call_seed) {
  ChatRequest r;
  r.role = Role::kTeacher;
  r.messages.push_back({"user", {ContentPart::image(image), ContentPart::text(prompts.qa_generation)}});
  r.temperature = config.temperature;
  r.n_samples = 1;
  r.max_tokens = config.max_tokens;
  r.seed = call_seed;
  return r;
}

PoolResult build_candidate_pool(Gateway& gateway, const std::string& image_id,
                                const std::string& image, const PromptSet& prompts,
                                const PoolConfig& config) {
  PoolResult out;
  std::string last_error;
  for (int call = 0; call < config.n_calls; ++call) {
    ChatRequest req = qa_generation_request(image, prompts, config, teacher_seed(config.seed, image_id, call));
    std::string reply;
    try {
      reply = gateway.chat(req).choices.at(0);
    } catch (const GatewayError& e) {
      ++out.calls_failed;
      last_error = e.what();
      continue;
    }
    auto pairs = parse_qa_reply(reply);
    if (!pairs) {
      ++out.calls_discarded;
      continue;
    }
    if (pairs->empty()) {
      ++out.calls_none;
      continue;
    }
    ++out.calls_parsed;
    for (auto& p : *pairs) {
      QaCandidate c;
      c.qa_index = static_cast<int>(out.candidates.size());
      c.lang = infer_language(p.question + p.answer);
      c.question = std::move(p.question);
      c.answer = std::move(p.answer);
      out.candidates.push_back(std::move(c));
    }
  }
  if (config.n_calls > 0 && out.calls_failed == config.n_calls) {
    throw PoolError("all " + std::to_string(config.n_calls) + " teacher calls failed for " +
                    image_id + ": " + last_error);
  }
  return out;
}

ChatRequest validation_request(const QaCandidate& cand, const std::string& image, bool with_image,
                               const PromptSet& prompts, const ProbeConfig& config) {
  ChatRequest r;
  r.role = Role::kValidator;
  ChatMessage m;
  if (with_image) m.parts.push_back(ContentPart::image(image));
  m.parts.push_back(ContentPart::text(
      fill_template(prompts.validate(cand.lang, with_image), {{"question", cand.question}})));
  r.messages.push_back(std::move(m));
  r.temperature = config.temperature;
  r.max_tokens = config.max_tokens;
  return r;
}

QaCandidate validate_candidate(Gateway& gateway, QaCandidate cand, const std::string& image,
                               const PromptSet& prompts, const CrossCheckThresholds& thresholds,
                               const ProbeConfig& config) {
  const std::string with =
      gateway.chat(validation_request(cand, image, true, prompts, config)).choices.at(0);
  const std::string without =
      gateway.chat(validation_request(cand, image, false, prompts, config)).choices.at(0);
  cand.answer_with_image = extract_answer(with);
  cand.answer_without_image = extract_answer(without);
  CrossCheckResult r =
      cross_check_validate(cand, cand.answer_with_image, cand.answer_without_image, thresholds);
  cand.validity = r.validity;
  cand.invalid_reason = r.reason;
  cand.f1_with_image = r.f1_with;
  cand.f1_without_image = r.f1_without;
  return cand;
}

}  // namespace trivia
