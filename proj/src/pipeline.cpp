// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "parallel.hpp"
#include "rng.hpp"
#include "trivia/metrics.hpp"

namespace trivia {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string dump(const ordered_json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// schema and kind first, then the body's keys in its own order.
template <typename J>
ordered_json tagged(const char* kind, const J& body) {
  ordered_json out;
  out["schema"] = kSchemaVersion;
  out["kind"] = kind;
  for (auto it = body.begin(); it != body.end(); ++it) {
    if (it.key() == "schema" || it.key() == "kind") continue;
    out[it.key()] = ordered_json(*it);
  }
  return out;
}

std::string gateway_reason(const std::exception& e) { return std::string("gateway-error: ") + e.what(); }

/// Runs fn(i) over the inputs in parallel; each call yields a record or a
/// reject reason. Order follows the input.
struct Outcome {
  std::optional<ordered_json> record;
  std::string reject;
  std::map<std::string, std::size_t> counters;
};

StageOutput collect(const std::string& stage, const std::vector<Record>& in, int workers,
                    const std::function<Outcome(const Record&)>& fn,
                    const std::function<std::string(const Record&)>& id_of) {
  std::vector<Outcome> outcomes(in.size());
  detail::parallel_for(in.size(), workers, [&](std::size_t i) { outcomes[i] = fn(in[i]); });
  StageOutput out;
  out.stats.stage = stage;
  out.stats.records_in = in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto& o = outcomes[i];
    for (const auto& [k, v] : o.counters) out.stats.counters[k] += v;
    if (o.record) {
      out.records.push_back(std::move(*o.record));
    } else {
      out.rejects.push_back(reject_record(stage, id_of(in[i]), in[i].line, o.reject));
      ++out.stats.counters["rejected:" + o.reject.substr(0, o.reject.find(':'))];
    }
  }
  out.stats.records_out = out.records.size();
  out.stats.records_rejected = out.rejects.size();
  return out;
}

std::string image_id_of(const Record& r) { return r.value.value("image_id", std::string()); }

void add_source_doc(ordered_json& out, const Record& r) {
  if (r.value.contains("source_doc") && !r.value["source_doc"].is_null()) out["source_doc"] = r.value["source_doc"];
}

double num(const json& j, const char* key) {
  if (!j.is_number()) throw std::invalid_argument(std::string(key) + " must be a number");
  return j.get<double>();
}

int integer(const json& j, const char* key) {
  if (!j.is_number_integer()) throw std::invalid_argument(std::string(key) + " must be an integer");
  return j.get<int>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void parse_bucket_spec(const std::string& spec, BucketConfig& out) {
  double v[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const auto colon = spec.find(':', pos);
    if ((i < 2) != (colon != std::string::npos)) throw std::invalid_argument("buckets must be lo:hi:step");
    const std::string part = spec.substr(pos, colon == std::string::npos ? std::string::npos : colon - pos);
    std::size_t used = 0;
    try {
      v[i] = std::stod(part, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != part.size() || part.empty()) throw std::invalid_argument("buckets must be lo:hi:step");
    pos = colon + 1;
  }
  BucketConfig b = out;
  b.lo = v[0];
  b.hi = v[1];
  b.step = v[2];
  b.check();
  out = b;
}

void PipelineConfig::check() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  need(tau_attn > 0.0 && tau_attn < 1.0, "tau_attn must be in (0, 1)");
  need(tau_iou >= 0.0 && tau_iou <= 1.0, "tau_iou must be in [0, 1]");
  need(k >= 2, "k must be at least 2");
  need(group_size >= 2, "group_size must be at least 2");
  buckets.check();
  need(min_qas >= 1, "min_qas must be at least 1");
  need(n_teacher_calls >= 1, "n_teacher_calls must be at least 1");
  need(consistency_temperature >= 0.0 && grpo_temperature >= 0.0 && teacher_temperature >= 0.0 &&
           probe.temperature >= 0.0,
       "temperatures must be nonnegative");
  need(policy_max_tokens > 0 && teacher_max_tokens > 0 && probe.max_tokens > 0, "max_tokens must be positive");
  need(f1_with >= 0.0 && f1_with <= 1.0, "f1_with must be in [0, 1]");
  need(f1_without >= 0.0 && f1_without <= 1.0, "f1_without must be in [0, 1]");
  need(advantage.eps > 0.0, "advantage_eps must be positive");
  need(legality.max_repeated_rows >= 1, "max_repeated_rows must be at least 1");
  need(workers >= 1, "workers must be at least 1");
}

ordered_json PipelineConfig::to_json() const {
  ordered_json j;
  j["tau_attn"] = tau_attn;
  j["tau_iou"] = tau_iou;
  j["k"] = k;
  j["group_size"] = group_size;
  j["buckets"] = ordered_json{{"lo", buckets.lo}, {"hi", buckets.hi}, {"step", buckets.step}};
  if (buckets.total_target) j["bucket_target"] = *buckets.total_target;
  j["min_qas"] = min_qas;
  j["n_teacher_calls"] = n_teacher_calls;
  j["consistency_temperature"] = consistency_temperature;
  j["grpo_temperature"] = grpo_temperature;
  j["teacher_temperature"] = teacher_temperature;
  j["policy_max_tokens"] = policy_max_tokens;
  j["teacher_max_tokens"] = teacher_max_tokens;
  j["probe_temperature"] = probe.temperature;
  j["probe_max_tokens"] = probe.max_tokens;
  j["f1_with"] = f1_with;
  j["f1_without"] = f1_without;
  j["advantage_mode"] = std::string(to_string(advantage.mode));
  j["advantage_eps"] = advantage.eps;
  j["drop_zero_reward"] = advantage.drop_zero_reward;
  j["max_repeated_rows"] = legality.max_repeated_rows;
  j["max_unterminated_chars"] = legality.max_unterminated_chars;
  j["policy_format"] = std::string(to_string(policy_format));
  j["seed"] = seed;
  return j;  // workers is left out: it never changes the output
}

void PipelineConfig::merge_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  PipelineConfig c = *this;
  for (const auto& [key, v] : j.items()) {
    if (key == "tau_attn") c.tau_attn = num(v, "tau_attn");
    else if (key == "tau_iou") c.tau_iou = num(v, "tau_iou");
    else if (key == "k") c.k = integer(v, "k");
    else if (key == "group_size") c.group_size = integer(v, "group_size");
    else if (key == "buckets") {
      if (v.is_string()) {
        parse_bucket_spec(v.get<std::string>(), c.buckets);
      } else if (v.is_object()) {
        c.buckets.lo = num(v.at("lo"), "buckets.lo");
        c.buckets.hi = num(v.at("hi"), "buckets.hi");
        c.buckets.step = num(v.at("step"), "buckets.step");
      } else {
        throw std::invalid_argument("buckets must be \"lo:hi:step\" or an object");
      }
    } else if (key == "bucket_target") {
      if (v.is_null()) c.buckets.total_target.reset();
      else c.buckets.total_target = static_cast<std::size_t>(integer(v, "bucket_target"));
    } else if (key == "min_qas") c.min_qas = integer(v, "min_qas");
    else if (key == "n_teacher_calls") c.n_teacher_calls = integer(v, "n_teacher_calls");
    else if (key == "consistency_temperature") c.consistency_temperature = num(v, key.c_str());
    else if (key == "grpo_temperature") c.grpo_temperature = num(v, key.c_str());
    else if (key == "teacher_temperature") c.teacher_temperature = num(v, key.c_str());
    else if (key == "policy_max_tokens") c.policy_max_tokens = integer(v, key.c_str());
    else if (key == "teacher_max_tokens") c.teacher_max_tokens = integer(v, key.c_str());
    else if (key == "probe_temperature") c.probe.temperature = num(v, key.c_str());
    else if (key == "probe_max_tokens") c.probe.max_tokens = integer(v, key.c_str());
    else if (key == "f1_with") c.f1_with = num(v, key.c_str());
    else if (key == "f1_without") c.f1_without = num(v, key.c_str());
    else if (key == "advantage_mode") c.advantage.mode = parse_advantage_mode(v.get<std::string>());
    else if (key == "advantage_eps") c.advantage.eps = num(v, key.c_str());
    else if (key == "drop_zero_reward") c.advantage.drop_zero_reward = v.get<bool>();
    else if (key == "max_repeated_rows") c.legality.max_repeated_rows = integer(v, key.c_str());
    else if (key == "max_unterminated_chars") c.legality.max_unterminated_chars = v.get<std::size_t>();
    else if (key == "policy_format") {
      auto f = parse_format(v.get<std::string>());
      if (!f) throw std::invalid_argument("policy_format must be html or otsl");
      c.policy_format = *f;
    } else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "workers") c.workers = integer(v, "workers");
    else throw std::invalid_argument("unknown config key: " + key);
  }
  c.check();
  *this = c;
}

// ---------------------------------------------------------------------------
// Records

std::string Record::where() const { return source + ":" + std::to_string(line); }

void Record::fail(const std::string& what) const { throw SchemaError(where() + ": " + what); }

const json& Record::at(const char* key) const {
  auto it = value.find(key);
  if (it == value.end() || it->is_null()) fail(std::string("missing field \"") + key + "\"");
  return *it;
}

std::string Record::str(const char* key) const {
  const json& v = at(key);
  if (!v.is_string()) fail(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

std::vector<Record> parse_records(std::istream& in, const std::string& source,
                                  const std::vector<std::string>& kinds) {
  std::vector<Record> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Record r{source, n, {}};
    try {
      r.value = json::parse(line);
    } catch (const json::parse_error&) {
      r.fail("not a JSON object");
    }
    if (!r.value.is_object()) r.fail("not a JSON object");
    auto schema = r.value.find("schema");
    if (schema == r.value.end() || !schema->is_string()) r.fail("missing schema field");
    if (*schema != kSchemaVersion) r.fail("unsupported schema " + schema->get<std::string>());
    const std::string kind = r.value.value("kind", std::string());
    if (kind == "header") continue;
    if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
      std::string want;
      for (const auto& k : kinds) want += (want.empty() ? "" : " or ") + k;
      r.fail("expected kind " + want + ", found \"" + kind + "\"");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Record> read_records(const std::filesystem::path& path, const std::vector<std::string>& kinds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_records(in, path.string(), kinds);
}

ordered_json StageStats::to_json() const {
  ordered_json j;
  j["stage"] = stage;
  j["records_in"] = records_in;
  j["records_out"] = records_out;
  j["records_rejected"] = records_rejected;
  j["counters"] = ordered_json(counters);
  return j;
}

ordered_json header_record(const std::string& stage, const StageContext& ctx) {
  std::string all_prompts;
  for (const auto* p : {&ctx.prompts.qa_generation, &ctx.prompts.answer_en, &ctx.prompts.answer_zh,
                        &ctx.prompts.validate_image_en, &ctx.prompts.validate_image_zh,
                        &ctx.prompts.validate_text_en, &ctx.prompts.validate_text_zh,
                        &ctx.prompts.recognize_html, &ctx.prompts.recognize_otsl}) {
    all_prompts += *p;
    all_prompts += '\0';
  }
  ordered_json h;
  h["schema"] = kSchemaVersion;
  h["kind"] = "header";
  h["stage"] = stage;
  h["config"] = ctx.config.to_json();
  h["gateway"] = ctx.gateway_info.is_null() ? ordered_json::object() : ctx.gateway_info;
  h["prompts_fnv"] = hex(rng::hash_string(all_prompts));
  return h;
}

ordered_json reject_record(const std::string& stage, const std::string& id, std::size_t line,
                           const std::string& reason) {
  ordered_json r;
  r["schema"] = kSchemaVersion;
  r["kind"] = "reject";
  r["stage"] = stage;
  r["id"] = id;
  r["line"] = line;
  r["reason"] = reason;
  return r;
}

void write_records(const std::filesystem::path& path, const ordered_json& header,
                   const std::vector<ordered_json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << dump(header) << '\n';
  for (const auto& r : records) out << dump(r) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Stages

std::uint64_t policy_seed(std::uint64_t seed, const std::string& image_id, const std::string& purpose) {
  return rng::mix(rng::mix(seed, rng::hash_string(image_id)), rng::hash_string(purpose)) & 0x7fffffffULL;
}

ChatRequest recognition_request(const std::string& image, int n, double temperature, std::uint64_t seed,
                                const StageContext& ctx) {
  ChatRequest r;
  r.role = Role::kPolicy;
  const std::string& prompt =
      ctx.config.policy_format == MarkupFormat::kOtsl ? ctx.prompts.recognize_otsl : ctx.prompts.recognize_html;
  r.messages.push_back({"user", {ContentPart::image(image), ContentPart::text(prompt)}});
  r.n_samples = n;
  r.temperature = temperature;
  r.max_tokens = ctx.config.policy_max_tokens;
  r.seed = seed;
  return r;
}

StageOutput stage_convert(const std::vector<Record>& in, std::optional<MarkupFormat> from, MarkupFormat to,
                          const StageContext& ctx) {
  auto id_of = [](const Record& r) { return r.value.value("id", std::string()); };
  return collect("convert", in, ctx.config.workers, [&](const Record& r) {
    const std::string id = r.str("id");
    const std::string markup = r.str("markup");
    MarkupFormat f = from ? *from : detect_format(markup);
    if (!from && r.value.contains("format")) {
      auto named = parse_format(r.str("format"));
      if (!named) r.fail("unknown format " + r.str("format"));
      f = *named;
    }
    Outcome o;
    auto grid = parse_markup(markup, f, ctx.config.legality.spelling);
    if (!grid) {
      o.reject = "parse: " + grid.error().reason + " at " + std::to_string(grid.error().position);
      return o;
    }
    ordered_json out;
    out["schema"] = kSchemaVersion;
    out["kind"] = "table";
    out["id"] = id;
    if (r.value.contains("subset")) out["subset"] = r.value["subset"];
    out["format"] = std::string(to_string(to));
    out["markup"] = serialize(grid.value(), to, ctx.config.legality.spelling);
    o.record = std::move(out);
    return o;
  }, id_of);
}

StageOutput stage_consistency(const std::vector<Record>& in, const StageContext& ctx) {
  if (!ctx.gateway) throw std::invalid_argument("consistency needs a gateway");
  return collect("consistency", in, ctx.config.workers, [&](const Record& r) {
    const std::string id = r.str("image_id");
    const std::string image = r.str("image");
    Outcome o;
    if (r.value.contains("n_tables") && r.at("n_tables").get<int>() > 1) {
      o.reject = "multiple-tables";
      return o;
    }
    std::vector<std::string> responses;
    try {
      auto req = recognition_request(image, ctx.config.k, ctx.config.consistency_temperature,
                                     policy_seed(ctx.config.seed, id, "consistency"), ctx);
      responses = ctx.gateway->chat(req).choices;
    } catch (const GatewayError& e) {
      o.reject = gateway_reason(e);
      return o;
    }
    if (responses.size() != static_cast<std::size_t>(ctx.config.k)) {
      o.reject = "gateway-error: policy returned " + std::to_string(responses.size()) + " of " +
                 std::to_string(ctx.config.k) + " samples";
      return o;
    }
    ConsistencyScore s = consistency_score(responses, ctx.config.legality);
    ordered_json out;
    out["schema"] = kSchemaVersion;
    out["kind"] = "consistency";
    out["image_id"] = id;
    out["image"] = image;
    add_source_doc(out, r);
    out["score"] = s.score;
    out["legal_count"] = s.legal_count;
    out["degenerate"] = s.degenerate;
    out["responses"] = responses;
    o.counters["illegal_responses"] = responses.size() - static_cast<std::size_t>(s.legal_count);
    if (s.degenerate) o.counters["degenerate"] = 1;
    o.record = std::move(out);
    return o;
  }, image_id_of);
}

StageOutput stage_bucket(const std::vector<Record>& in, const StageContext& ctx) {
  std::vector<ConsistencyRecord> recs;
  for (const auto& r : in) {
    ConsistencyRecord c;
    c.image_id = r.str("image_id");
    c.image = r.str("image");
    if (r.value.contains("source_doc") && !r.value["source_doc"].is_null()) c.source_doc = r.str("source_doc");
    const json& score = r.at("score");
    if (!score.is_number()) r.fail("field \"score\" must be a number");
    c.score = score.get<double>();
    recs.push_back(std::move(c));
  }
  BucketConfig bc = ctx.config.buckets;
  bc.seed = ctx.config.seed;
  const auto decisions = bucket_sample(recs, bc);
  StageOutput out;
  out.stats.stage = "bucket";
  out.stats.records_in = in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto& d = decisions[i];
    if (d.selected) {
      ordered_json rec = tagged("consistency", in[i].value);
      rec["bucket"] = d.label;
      out.records.push_back(std::move(rec));
      ++out.stats.counters["bucket:" + d.label];
    } else {
      out.rejects.push_back(reject_record("bucket", recs[i].image_id, in[i].line, d.reason));
      ++out.stats.counters["rejected:" + d.reason];
    }
  }
  out.stats.records_out = out.records.size();
  out.stats.records_rejected = out.rejects.size();
  return out;
}

StageOutput stage_qagen(const std::vector<Record>& in, const StageContext& ctx) {
  if (!ctx.gateway) throw std::invalid_argument("qagen needs a gateway");
  PoolConfig pc;
  pc.n_calls = ctx.config.n_teacher_calls;
  pc.temperature = ctx.config.teacher_temperature;
  pc.max_tokens = ctx.config.teacher_max_tokens;
  pc.seed = ctx.config.seed;
  return collect("qagen", in, ctx.config.workers, [&](const Record& r) {
    const std::string id = r.str("image_id");
    const std::string image = r.str("image");
    Outcome o;
    PoolResult pool;
    try {
      pool = build_candidate_pool(*ctx.gateway, id, image, ctx.prompts, pc);
    } catch (const PoolError& e) {
      o.reject = gateway_reason(e);
      return o;
    }
    o.counters["teacher_calls_parsed"] = static_cast<std::size_t>(pool.calls_parsed);
    o.counters["teacher_calls_none"] = static_cast<std::size_t>(pool.calls_none);
    o.counters["teacher_calls_discarded"] = static_cast<std::size_t>(pool.calls_discarded);
    o.counters["teacher_calls_failed"] = static_cast<std::size_t>(pool.calls_failed);
    o.counters["candidates"] = pool.candidates.size();
    if (pool.candidates.empty()) {
      o.reject = "no-candidates";
      return o;
    }
    ordered_json out;
    out["schema"] = kSchemaVersion;
    out["kind"] = "candidates";
    out["image_id"] = id;
    out["image"] = image;
    add_source_doc(out, r);
    out["pool_size"] = pool.candidates.size();
    out["teacher_calls"] = ordered_json{{"parsed", pool.calls_parsed},
                                        {"none", pool.calls_none},
                                        {"discarded", pool.calls_discarded},
                                        {"failed", pool.calls_failed}};
    ordered_json cands = ordered_json::array();
    for (const auto& c : pool.candidates) cands.push_back(ordered_json(c.to_json()));
    out["candidates"] = std::move(cands);
    o.record = std::move(out);
    return o;
  }, image_id_of);
}

namespace {

std::vector<QaCandidate> read_candidates(const Record& r) {
  const json& arr = r.at("candidates");
  if (!arr.is_array()) r.fail("field \"candidates\" must be an array");
  std::vector<QaCandidate> out;
  try {
    for (const auto& c : arr) out.push_back(QaCandidate::from_json(c));
  } catch (const std::exception& e) {
    r.fail(std::string("bad candidate: ") + e.what());
  }
  return out;
}

}  // namespace

StageOutput stage_validate(const std::vector<Record>& in, const StageContext& ctx) {
  if (!ctx.gateway) throw std::invalid_argument("validate needs a gateway");
  const CrossCheckThresholds th{ctx.config.f1_with, ctx.config.f1_without};
  return collect("validate", in, ctx.config.workers, [&](const Record& r) {
    const std::string id = r.str("image_id");
    const std::string image = r.str("image");
    std::vector<QaCandidate> cands = read_candidates(r);
    Outcome o;
    try {
      for (auto& c : cands) {
        c = validate_candidate(*ctx.gateway, std::move(c), image, ctx.prompts, th, ctx.config.probe);
        ++o.counters[c.validity == Validity::kValid ? std::string("valid") : c.invalid_reason];
      }
    } catch (const GatewayError& e) {
      o.reject = gateway_reason(e);
      return o;
    }
    ordered_json out = tagged("validated", r.value);
    ordered_json arr = ordered_json::array();
    for (const auto& c : cands) arr.push_back(ordered_json(c.to_json()));
    out["candidates"] = std::move(arr);
    o.record = std::move(out);
    return o;
  }, image_id_of);
}

StageOutput stage_select(const std::vector<Record>& in, const std::vector<Record>& attention,
                         const StageContext& ctx) {
  std::map<std::pair<std::string, int>, AttentionMap> maps;
  for (const auto& a : attention) {
    AttentionMap m;
    try {
      m = AttentionMap::from_json(a.value);
    } catch (const std::exception& e) {
      a.fail(std::string("bad attention record: ") + e.what());
    }
    auto key = std::make_pair(m.image_id, m.qa_index);
    if (!maps.emplace(key, std::move(m)).second) a.fail("duplicate attention record");
  }
  return collect("select", in, ctx.config.workers, [&](const Record& r) {
    const std::string id = r.str("image_id");
    std::vector<QaCandidate> valids;
    Outcome o;
    for (auto& c : read_candidates(r)) {
      if (c.validity != Validity::kValid) continue;
      auto it = maps.find({id, c.qa_index});
      if (it == maps.end()) {
        ++o.counters["missing_attention"];
        continue;
      }
      c.visual_source = extract_visual_source(it->second, ctx.config.tau_attn);
      valids.push_back(std::move(c));
    }
    o.counters["valid_with_attention"] = valids.size();
    SelectionResult sel = greedy_select(std::move(valids), ctx.config.tau_iou,
                                        static_cast<std::size_t>(ctx.config.min_qas));
    o.counters["overlap_rejected"] = sel.rejected_qa_indices.size();
    if (sel.dropped) {
      o.reject = "fewer-than-" + std::to_string(ctx.config.min_qas) + "-valid-qas";
      return o;
    }
    o.counters["selected_qas"] = sel.selected.size();
    QaSet set;
    set.image_id = id;
    set.image = r.str("image");
    set.qas = std::move(sel.selected);
    set.pool_size = r.value.value("pool_size", sel.pool_size);
    o.record = tagged("qaset", ordered_json(set.to_json()));
    return o;
  }, image_id_of);
}

StageOutput stage_reward(const std::vector<Record>& qasets, const std::vector<Record>* responses,
                         const StageContext& ctx) {
  if (!ctx.gateway) throw std::invalid_argument("reward needs a gateway");
  std::map<std::string, std::vector<std::string>> given;
  if (responses) {
    for (const auto& r : *responses) {
      const json& arr = r.at("responses");
      if (!arr.is_array()) r.fail("field \"responses\" must be an array");
      if (!given.emplace(r.str("image_id"), arr.get<std::vector<std::string>>()).second)
        r.fail("duplicate image_id " + r.str("image_id"));
    }
  }
  return collect("reward", qasets, ctx.config.workers, [&](const Record& r) {
    QaSet set;
    try {
      set = QaSet::from_json(r.value);
    } catch (const std::exception& e) {
      r.fail(std::string("bad qaset: ") + e.what());
    }
    Outcome o;
    std::vector<std::string> samples;
    if (responses) {
      auto it = given.find(set.image_id);
      if (it == given.end()) {
        o.reject = "no-responses";
        return o;
      }
      samples = it->second;
    } else {
      try {
        auto req = recognition_request(set.image, ctx.config.group_size, ctx.config.grpo_temperature,
                                       policy_seed(ctx.config.seed, set.image_id, "grpo"), ctx);
        samples = ctx.gateway->chat(req).choices;
      } catch (const GatewayError& e) {
        o.reject = gateway_reason(e);
        return o;
      }
    }
    ResponseGroup g = make_group(set.image_id, std::move(samples), ctx.config.legality);
    g.qa_set_ref = set.image_id;
    try {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!g.legal[i]) {
          ++o.counters["illegal_responses"];
          continue;
        }
        RewardResult rr = qa_reward(*ctx.gateway, g.responses[i], set, ctx.prompts, ctx.config.probe,
                                    ctx.config.legality, static_cast<int>(i));
        g.rewards[i] = rr.reward;
        g.transcripts[i] = std::move(rr.transcripts);
      }
    } catch (const GatewayError& e) {
      o.reject = gateway_reason(e);
      return o;
    }
    o.counters["responses"] = g.size();
    o.record = tagged("group", ordered_json(g.to_json()));
    return o;
  }, image_id_of);
}

StageOutput stage_advantage(const std::vector<Record>& groups, const StageContext& ctx) {
  StageOutput out;
  out.stats.stage = "advantage";
  out.stats.records_in = groups.size();
  for (const auto& r : groups) {
    ResponseGroup g;
    try {
      g = ResponseGroup::from_json(r.value);
    } catch (const std::exception& e) {
      r.fail(std::string("bad group: ") + e.what());
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.legal[i] && !g.rewards[i]) r.fail("legal response " + std::to_string(i) + " has no reward");
    }
    assign_advantages(g, ctx.config.advantage);
    std::size_t emitted = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g.advantages[i]) continue;
      out.records.push_back(tagged("training", training_record(g, i)));
      ++emitted;
    }
    if (g.degenerate) ++out.stats.counters["degenerate_groups"];
    if (emitted == 0) {
      out.rejects.push_back(reject_record("advantage", g.image_id, r.line, "no-legal-responses"));
      ++out.stats.counters["rejected:no-legal-responses"];
      continue;
    }
    ++out.stats.records_out;
    out.stats.counters["training_records"] += emitted;
  }
  out.stats.records_rejected = out.rejects.size();
  return out;
}

StageOutput stage_simulate(const DynamicsConfig& config) {
  StageOutput out;
  out.stats.stage = "simulate";
  for (const auto& row : run_dynamics(config)) out.records.push_back(tagged("dynamics", row.to_json()));
  out.stats.records_out = out.records.size();
  return out;
}

void write_stage(const std::filesystem::path& dir, const StageOutput& out, const StageContext& ctx) {
  const ordered_json header = header_record(out.stats.stage, ctx);
  write_records(dir / (out.stats.stage + ".jsonl"), header, out.records);
  write_records(dir / (out.stats.stage + ".rejects.jsonl"), header, out.rejects);
}

std::vector<StageStats> run_pipeline(const std::vector<Record>& images, const std::vector<Record>& attention,
                                     const StageContext& ctx, const std::filesystem::path& dir) {
  std::vector<StageStats> stats;
  auto step = [&](StageOutput out, const char* next_kind) {
    write_stage(dir, out, ctx);
    stats.push_back(out.stats);
    return read_records(dir / (out.stats.stage + ".jsonl"), {next_kind});
  };
  auto scored = step(stage_consistency(images, ctx), "consistency");
  auto kept = step(stage_bucket(scored, ctx), "consistency");
  auto pools = step(stage_qagen(kept, ctx), "candidates");
  auto validated = step(stage_validate(pools, ctx), "validated");
  auto qasets = step(stage_select(validated, attention, ctx), "qaset");
  auto groups = step(stage_reward(qasets, nullptr, ctx), "group");
  step(stage_advantage(groups, ctx), "training");
  return stats;
}

// ---------------------------------------------------------------------------
// Evaluation

ordered_json EvalItem::to_json() const {
  ordered_json j;
  j["schema"] = kSchemaVersion;
  j["kind"] = "eval_item";
  j["id"] = id;
  if (subset) j["subset"] = *subset;
  if (teds) j["teds"] = *teds;
  j["s_teds"] = s_teds;
  j["legal"] = legal;
  if (unmatched) j["unmatched"] = true;
  return j;
}

ordered_json EvalAggregate::to_json() const {
  ordered_json j;
  j["n"] = n;
  j["illegal"] = illegal;
  if (teds) j["teds"] = *teds;
  j["s_teds"] = s_teds;
  j["legal_rate"] = legal_rate;
  return j;
}

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["schema"] = kSchemaVersion;
  j["kind"] = "eval_summary";
  j["overall"] = overall.to_json();
  ordered_json subs = ordered_json::object();
  for (const auto& [name, agg] : subsets) subs[name] = agg.to_json();
  j["subsets"] = std::move(subs);
  j["unmatched"] = unmatched;
  return j;
}

namespace {

EvalAggregate aggregate(const std::vector<const EvalItem*>& items, bool structure_only) {
  EvalAggregate a;
  a.n = items.size();
  double t = 0.0, s = 0.0;
  std::size_t legal = 0;
  for (const auto* it : items) {
    t += it->teds.value_or(0.0);
    s += it->s_teds;
    legal += it->legal;
  }
  a.illegal = a.n - legal;
  if (a.n > 0) {
    if (!structure_only) a.teds = t / static_cast<double>(a.n) * 100.0;
    a.s_teds = s / static_cast<double>(a.n) * 100.0;
    a.legal_rate = static_cast<double>(legal) / static_cast<double>(a.n);
  } else if (!structure_only) {
    a.teds = 0.0;
  }
  return a;
}

}  // namespace

EvalReport evaluate(const std::vector<Record>& preds, const std::vector<Record>& golds, bool structure_only,
                    int workers) {
  std::map<std::string, std::size_t> gold_index;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (!gold_index.emplace(golds[i].str("id"), i).second)
      throw EvalError("duplicate-id: " + golds[i].str("id") + " at " + golds[i].where());
  }
  std::map<std::string, std::size_t> pred_index;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string id = preds[i].str("id");
    if (!pred_index.emplace(id, i).second) throw EvalError("duplicate-id: " + id + " at " + preds[i].where());
    if (!gold_index.count(id)) throw EvalError("missing-gold: " + id + " at " + preds[i].where());
  }

  EvalReport report;
  report.items.resize(golds.size());
  detail::parallel_for(golds.size(), workers, [&](std::size_t i) {
    const Record& g = golds[i];
    EvalItem& item = report.items[i];
    item.id = g.str("id");
    if (g.value.contains("subset") && g.value["subset"].is_string()) item.subset = g.str("subset");
    const std::string gold_markup = g.str("markup");
    auto gold = parse_markup(gold_markup, detect_format(gold_markup));
    if (!gold) throw EvalError("gold " + item.id + " does not parse: " + gold.error().reason);
    if (!structure_only) item.teds = 0.0;
    auto p = pred_index.find(item.id);
    if (p == pred_index.end()) {
      item.unmatched = true;
      return;
    }
    const std::string pred_markup = preds[p->second].str("markup");
    auto pred = parse_markup(pred_markup, detect_format(pred_markup));
    if (!pred) return;
    item.legal = true;
    if (!structure_only) item.teds = teds(pred.value(), gold.value(), false);
    item.s_teds = teds(pred.value(), gold.value(), true);
  });

  std::vector<const EvalItem*> all;
  std::map<std::string, std::vector<const EvalItem*>> by_subset;
  for (const auto& it : report.items) {
    all.push_back(&it);
    if (it.subset) by_subset[*it.subset].push_back(&it);
    if (it.unmatched) report.unmatched.push_back(it.id);
  }
  report.overall = aggregate(all, structure_only);
  for (const auto& [name, items] : by_subset) report.subsets[name] = aggregate(items, structure_only);
  return report;
}

}  // namespace trivia
