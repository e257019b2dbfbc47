// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "trivia/pipeline.hpp"

using namespace trivia;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::filesystem::path kFixtures = std::filesystem::path(TRIVIA_SOURCE_DIR) / "fixtures" / "mock5";

std::vector<Record> records(const std::vector<json>& lines, const std::string& kind = "") {
  std::stringstream ss;
  for (auto j : lines) {
    j["schema"] = kSchemaVersion;
    if (!kind.empty()) j["kind"] = kind;
    ss << j.dump() << '\n';
  }
  return parse_records(ss, "mem", {});
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("trivia_pipeline_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

StageContext mock_context() {
  StageContext ctx;
  ctx.gateway = Gateway::from_mock(kFixtures / "gateway");
  ctx.gateway_info = {{"backend", "mock"}, {"fixtures", "mock5"}};
  return ctx;
}

}  // namespace

TEST_CASE("config defaults, merge and validation") {
  PipelineConfig c;
  CHECK(c.tau_attn == 0.01);
  CHECK(c.tau_iou == 0.3);
  CHECK(c.k == 8);
  CHECK(c.group_size == 16);
  CHECK(c.buckets.lo == 0.4);
  CHECK(c.buckets.hi == 1.0);
  CHECK(c.buckets.step == 0.1);
  CHECK(c.min_qas == 3);
  CHECK(c.n_teacher_calls == 16);
  CHECK(c.consistency_temperature == 1.0);
  CHECK(c.grpo_temperature == 1.2);
  CHECK(c.f1_with == 0.9);
  CHECK(c.f1_without == 0.3);
  CHECK_NOTHROW(c.check());

  c.merge_json(json{{"tau_iou", 0.5}, {"buckets", "0.2:0.8:0.2"}, {"seed", 9}});
  CHECK(c.tau_iou == 0.5);
  CHECK(c.buckets.lo == 0.2);
  CHECK(c.buckets.n_buckets() == 3);
  CHECK(c.seed == 9);
  CHECK(c.tau_attn == 0.01);

  PipelineConfig before = c;
  CHECK_THROWS_AS(c.merge_json(json{{"tau_iou", 0.1}, {"nonsense", 1}}), std::invalid_argument);
  CHECK(c.tau_iou == before.tau_iou);  // a failed merge changes nothing
  CHECK_THROWS_AS(c.merge_json(json{{"k", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(c.merge_json(json{{"k", "8"}}), std::invalid_argument);

  BucketConfig b;
  CHECK_THROWS(parse_bucket_spec("0.4:1.0", b));
  CHECK_THROWS(parse_bucket_spec("0.4:x:0.1", b));
  CHECK_THROWS(parse_bucket_spec("1.0:0.4:0.1", b));

  auto j = PipelineConfig{}.to_json();
  CHECK(j["tau_attn"] == 0.01);
  CHECK(j["tau_iou"] == 0.3);
  CHECK_FALSE(j.contains("workers"));
  PipelineConfig round;
  round.merge_json(json(j));
  CHECK(round.to_json() == j);
}

TEST_CASE("record reading names the offending line") {
  std::stringstream ok;
  ok << R"({"schema":"trivia/v1","kind":"header","stage":"x"})" << "\n\n"
     << R"({"schema":"trivia/v1","kind":"image","image_id":"a","image":"a.png"})" << "\n";
  auto r = parse_records(ok, "in.jsonl", {"image"});
  REQUIRE(r.size() == 1);
  CHECK(r[0].line == 3);
  CHECK(r[0].where() == "in.jsonl:3");

  auto fails = [](const std::string& text, const std::string& needle) {
    std::stringstream ss(text);
    try {
      parse_records(ss, "f.jsonl", {"image"});
    } catch (const SchemaError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  CHECK(fails("{\"schema\":\"trivia/v1\",\"kind\":\"image\"}\n{\"schema\":\"trivia/v2\",\"kind\":\"image\"}\n",
              "f.jsonl:2: unsupported schema trivia/v2"));
  CHECK(fails("{\"kind\":\"image\"}\n", "f.jsonl:1: missing schema"));
  CHECK(fails("not json\n", "f.jsonl:1"));
  CHECK(fails("{\"schema\":\"trivia/v1\",\"kind\":\"qaset\"}\n", "expected kind image"));

  auto recs = records({json{{"image", "a.png"}}}, "image");
  CHECK_THROWS_WITH_AS(recs[0].str("image_id"), "mem:1: missing field \"image_id\"", SchemaError);
}

TEST_CASE("convert") {
  StageContext ctx;
  const std::string merged = "<table><tr><td colspan=\"2\">a</td></tr><tr><td>b</td><td>c</td></tr></table>";
  auto in = records({json{{"id", "t1"}, {"markup", merged}},
                     json{{"id", "t2"}, {"markup", "<fcel>x<fcel"}},
                     json{{"id", "t3"}, {"markup", "<fcel>a<lcel><nl><fcel>b<fcel>c<nl>"}}},
                    "table");
  auto out = stage_convert(in, std::nullopt, MarkupFormat::kOtsl, ctx);
  REQUIRE(out.records.size() == 2);
  CHECK(out.records[0]["markup"] == "<fcel>a<lcel><nl><fcel>b<fcel>c<nl>");
  CHECK(out.records[1]["markup"] == out.records[0]["markup"]);  // identity is stable
  REQUIRE(out.rejects.size() == 1);
  CHECK(out.rejects[0]["id"] == "t2");
  CHECK(out.rejects[0]["line"] == 2);
  CHECK(out.stats.records_in == out.stats.records_out + out.stats.records_rejected);

  auto back = stage_convert(records({json(out.records[0])}), MarkupFormat::kOtsl, MarkupFormat::kHtml, ctx);
  REQUIRE(back.records.size() == 1);
  CHECK(parse_html_table(back.records[0]["markup"].get<std::string>()).value().cells.size() == 3);
}

TEST_CASE("bucket keeps scores inside the range") {
  StageContext ctx;
  auto in = records({json{{"image_id", "a"}, {"image", "a.png"}, {"score", 0.35}},
                     json{{"image_id", "b"}, {"image", "b.png"}, {"score", 0.55}},
                     json{{"image_id", "c"}, {"image", "c.png"}, {"score", 0.95}}},
                    "consistency");
  auto out = stage_bucket(in, ctx);
  REQUIRE(out.records.size() == 2);
  CHECK(out.records[0]["image_id"] == "b");
  CHECK(out.records[0]["bucket"] == "[0.5,0.6)");
  CHECK(out.records[1]["bucket"] == "[0.9,1.0]");
  REQUIRE(out.rejects.size() == 1);
  CHECK(out.rejects[0]["reason"] == "below-range");
  CHECK(out.stats.counters["rejected:below-range"] == 1);
}

TEST_CASE("select drops images with fewer than three QAs") {
  StageContext ctx;
  auto cand = [](int i, bool valid) {
    QaCandidate c;
    c.qa_index = i;
    c.question = "q" + std::to_string(i);
    c.answer = "a";
    c.validity = valid ? Validity::kValid : Validity::kInvalid;
    return c.to_json();
  };
  auto att = [](const std::string& id, int qa, int token) {
    std::vector<double> w(16, 0.0);
    w[static_cast<std::size_t>(token)] = 0.5;
    return json{{"image_id", id}, {"qa_index", qa}, {"n_visual_tokens", 16}, {"weights", w}};
  };
  auto validated = records({json{{"image_id", "two"}, {"image", "x"}, {"candidates", {cand(0, true), cand(1, true), cand(2, false)}}},
                            json{{"image_id", "three"}, {"image", "y"}, {"candidates", {cand(0, true), cand(1, true), cand(2, true), cand(3, true)}}}},
                           "validated");
  auto attention = records({att("two", 0, 1), att("two", 1, 2), att("two", 2, 3), att("three", 0, 1),
                            att("three", 1, 2), att("three", 2, 3)},
                           "attention");
  auto out = stage_select(validated, attention, ctx);
  REQUIRE(out.records.size() == 1);
  CHECK(out.records[0]["image_id"] == "three");
  CHECK(out.records[0]["qas"].size() == 3);
  CHECK(out.stats.counters["missing_attention"] == 1);
  REQUIRE(out.rejects.size() == 1);
  CHECK(out.rejects[0]["id"] == "two");
  CHECK(out.rejects[0]["reason"] == "fewer-than-3-valid-qas");
}

TEST_CASE("advantage stage") {
  StageContext ctx;
  ResponseGroup g = make_group("img", {"<fcel>a<nl>", "<fcel>b<nl>", "<fcel>c<nl>", "<fcel>broken"});
  g.rewards = {0.2, 0.4, 0.6, std::nullopt};
  ResponseGroup dead = make_group("dead", {"<fcel>", "<lcel><nl>"});
  auto out = stage_advantage(records({g.to_json(), dead.to_json()}, "group"), ctx);
  REQUIRE(out.records.size() == 3);
  CHECK(out.records[0]["advantage"].get<double>() == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(out.records[1]["advantage"].get<double>() == doctest::Approx(0.0));
  CHECK(out.records[0]["kind"] == "training");
  CHECK(out.stats.records_out == 1);
  REQUIRE(out.rejects.size() == 1);
  CHECK(out.rejects[0]["reason"] == "no-legal-responses");
  CHECK(out.stats.counters["training_records"] == 3);

  ResponseGroup unscored = make_group("u", {"<fcel>a<nl>", "<fcel>b<nl>"});
  CHECK_THROWS_AS(stage_advantage(records({unscored.to_json()}, "group"), ctx), SchemaError);
}

TEST_CASE("gateway errors surface with the role name") {
  auto dir = temp_dir("empty_fixtures");
  std::ofstream(dir / "manifest.json") << R"({"version":1,"policy":"strict","entries":{}})";
  StageContext ctx;
  ctx.gateway = Gateway::from_mock(dir);
  auto out = stage_consistency(records({json{{"image_id", "a"}, {"image", "a.png"}},
                                        json{{"image_id", "b"}, {"image", "b.png"}, {"n_tables", 2}}},
                                       "image"),
                               ctx);
  REQUIRE(out.rejects.size() == 2);
  CHECK(out.rejects[0]["reason"].get<std::string>().find("gateway-error: policy") == 0);
  CHECK(out.rejects[1]["reason"] == "multiple-tables");
}

TEST_CASE("eval") {
  const std::string g1 = "<table><tr><td>a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr></table>";
  const std::string g2 = "<fcel>x<lcel><nl><fcel>y<fcel>z<nl>";
  auto golds = records({json{{"id", "1"}, {"markup", g1}, {"subset", "en"}},
                        json{{"id", "2"}, {"markup", g2}, {"subset", "zh"}}},
                       "table");

  auto self = evaluate(golds, golds, false);
  CHECK(self.overall.teds == 100.0);
  CHECK(self.overall.s_teds == 100.0);
  CHECK(self.overall.legal_rate == 1.0);
  CHECK(self.subsets.at("zh").teds == 100.0);

  auto half = evaluate(records({json{{"id", "1"}, {"markup", "<table><tr><td>a"}}, json{{"id", "2"}, {"markup", g2}}}, "table"),
                       golds, false);
  // "<table><tr><td>a" parses tolerantly; an OTSL fragment does not.
  auto bad = evaluate(records({json{{"id", "1"}, {"markup", "<fcel>a<lcel"}}, json{{"id", "2"}, {"markup", g2}}}, "table"),
                      golds, false);
  CHECK(bad.overall.teds == 50.0);
  CHECK(bad.overall.s_teds == 50.0);
  CHECK(bad.overall.illegal == 1);
  CHECK(bad.subsets.at("en").teds == 0.0);
  CHECK(half.overall.teds < 100.0);

  const std::string scrambled = "<table><tr><td>q</td><td>r</td></tr><tr><td>s</td><td>t</td></tr></table>";
  auto scr = evaluate(records({json{{"id", "1"}, {"markup", scrambled}}, json{{"id", "2"}, {"markup", g2}}}, "table"),
                      golds, false);
  CHECK(scr.overall.s_teds == 100.0);
  CHECK(*scr.overall.teds < 100.0);

  auto structure = evaluate(golds, golds, true);
  CHECK_FALSE(structure.overall.teds);
  CHECK(structure.overall.s_teds == 100.0);

  auto partial = evaluate(records({json{{"id", "2"}, {"markup", g2}}}, "table"), golds, false);
  CHECK(partial.unmatched == std::vector<std::string>{"1"});
  CHECK(partial.overall.teds == 50.0);

  CHECK_THROWS_WITH_AS(evaluate(records({json{{"id", "9"}, {"markup", g2}}}, "table"), golds, false),
                       doctest::Contains("missing-gold"), EvalError);
  CHECK_THROWS_WITH_AS(evaluate(records({json{{"id", "2"}, {"markup", g2}}, json{{"id", "2"}, {"markup", g2}}}, "table"),
                                golds, false),
                       doctest::Contains("duplicate-id"), EvalError);
}

TEST_CASE("offline pipeline on the shipped fixtures") {
  const auto images = read_records(kFixtures / "images.jsonl", {"image"});
  const auto attention = read_records(kFixtures / "attention.jsonl", {"attention"});
  REQUIRE(images.size() == 5);

  auto d1 = temp_dir("run1");
  auto d2 = temp_dir("run2");
  auto stats = run_pipeline(images, attention, mock_context(), d1);
  StageContext serial = mock_context();
  serial.config.workers = 1;
  run_pipeline(images, attention, serial, d2);

  REQUIRE(stats.size() == 7);
  for (const auto& s : stats) {
    INFO(s.stage);
    CHECK(s.records_in == s.records_out + s.records_rejected);
  }
  for (std::size_t i = 1; i < stats.size() - 1; ++i) CHECK(stats[i].records_in == stats[i - 1].records_out);

  for (const auto& entry : std::filesystem::directory_iterator(d1)) {
    INFO(entry.path().filename().string());
    CHECK(slurp(entry.path()) == slurp(d2 / entry.path().filename()));
  }

  auto training = read_records(d1 / "advantage.jsonl", {"training"});
  CHECK(training.size() >= 1);
  auto qasets = read_records(d1 / "select.jsonl", {"qaset"});
  for (const auto& q : qasets) CHECK(q.value["qas"].size() >= 3);
  auto dropped = read_records(d1 / "select.rejects.jsonl", {"reject"});
  REQUIRE(dropped.size() == 1);
  CHECK(dropped[0].value["id"] == "img-e");

  // Every output file starts with a header carrying the effective config.
  std::ifstream in(d1 / "bucket.jsonl");
  std::string first;
  std::getline(in, first);
  auto header = json::parse(first);
  CHECK(header["kind"] == "header");
  CHECK(header["config"]["tau_attn"] == 0.01);
  CHECK(header["config"]["tau_iou"] == 0.3);

  // Re-running one stage on its own input reproduces its file.
  auto pools = read_records(d1 / "qagen.jsonl", {"candidates"});
  auto again = stage_validate(pools, mock_context());
  auto d3 = temp_dir("rerun");
  write_stage(d3, again, mock_context());
  CHECK(slurp(d3 / "validate.jsonl") == slurp(d1 / "validate.jsonl"));
}

TEST_CASE("simulate stage") {
  DynamicsConfig c;
  c.n_images = 10;
  auto out = stage_simulate(c);
  REQUIRE(out.records.size() == 3);
  CHECK(out.records[0]["kind"] == "dynamics");
  CHECK(out.records[0]["error_rate"] == 0.0);
}
