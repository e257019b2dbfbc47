// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// trivia-fixturegen: records the offline fixture set. The synthetic world
// plays every model role; each exchange is written as a replay fixture, and
// attention maps are derived for every candidate the teacher proposes.

#include <iostream>

#include "CLI11.hpp"
#include "trivia/pipeline.hpp"
#include "trivia/synthetic_world.hpp"

using namespace trivia;
using nlohmann::ordered_json;

int main(int argc, char** argv) {
  CLI::App app{"Record the five-image mock fixture set"};
  std::string out = "fixtures/mock5";
  std::uint64_t seed = 0;
  app.add_option("--out", out, "Fixture directory")->capture_default_str();
  app.add_option("--seed", seed, "Pipeline seed the fixtures are recorded for")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const std::filesystem::path dir = out;
    const std::filesystem::path work = dir / "work";
    std::filesystem::remove_all(dir / "gateway");
    auto world = std::make_shared<const SyntheticWorld>(SyntheticWorld::mock5());
    auto recorder = std::make_shared<RecordingBackend>(std::make_shared<SyntheticBackend>(world), dir / "gateway");

    StageContext ctx;
    ctx.config.seed = seed;
    ctx.gateway = std::make_shared<Gateway>();
    for (Role r : {Role::kPolicy, Role::kTeacher, Role::kValidator, Role::kAnswerer}) {
      RoleConfig c;
      c.endpoint = "synthetic://mock5";
      c.model = "synthetic";
      c.vision = r != Role::kAnswerer;
      ctx.gateway->configure(r, c, recorder);
    }
    ctx.gateway_info = {{"backend", "synthetic"}, {"world", "mock5"}};

    std::vector<ordered_json> image_lines;
    for (const auto& j : world->image_records()) image_lines.push_back(ordered_json(j));
    ordered_json header = header_record("images", ctx);
    write_records(dir / "images.jsonl", header, image_lines);
    auto images = read_records(dir / "images.jsonl", {"image"});

    auto scored = stage_consistency(images, ctx);
    write_stage(work, scored, ctx);
    auto kept = stage_bucket(read_records(work / "consistency.jsonl", {"consistency"}), ctx);
    write_stage(work, kept, ctx);
    auto pools = stage_qagen(read_records(work / "bucket.jsonl", {"consistency"}), ctx);
    write_stage(work, pools, ctx);

    std::vector<ordered_json> attention;
    for (const auto& rec : pools.records) {
      for (const auto& c : rec["candidates"]) {
        const auto cand = QaCandidate::from_json(nlohmann::json(c));
        ordered_json line{{"schema", kSchemaVersion}, {"kind", "attention"}};
        const nlohmann::json att = world->attention_for(rec["image_id"], cand).to_json();
        for (const auto& [k, v] : att.items()) line[k] = v;
        attention.push_back(std::move(line));
      }
    }
    write_records(dir / "attention.jsonl", header_record("attention", ctx), attention);

    // Replays the rest of the chain against the recorder so every request the
    // offline run will issue has a fixture.
    auto stats = run_pipeline(images, read_records(dir / "attention.jsonl", {"attention"}), ctx, work);
    recorder->finish();
    for (const auto& s : stats) std::cerr << s.to_json().dump() << '\n';
    std::filesystem::remove_all(work);
  } catch (const std::exception& e) {
    std::cerr << "trivia-fixturegen: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
