// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// trivia: pipeline stages, simulation and evaluation from the command line.
// Exit status: 0 success, 1 some records rejected, 2 fatal error.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "trivia/pipeline.hpp"

using namespace trivia;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kFatal = 2;

struct Flags {
  PipelineConfig defaults;
  std::string config_file;
  std::string endpoint_config;
  std::string mock_fixtures;
  std::string prompts_dir;
  std::string rejects;
  bool verbose = false;

  double tau_attn = defaults.tau_attn;
  double tau_iou = defaults.tau_iou;
  int k = defaults.k;
  int group_size = defaults.group_size;
  std::string buckets = "0.4:1.0:0.1";
  std::size_t bucket_target = 0;
  int min_qas = defaults.min_qas;
  int n_teacher_calls = defaults.n_teacher_calls;
  double consistency_temperature = defaults.consistency_temperature;
  double grpo_temperature = defaults.grpo_temperature;
  double f1_with = defaults.f1_with;
  double f1_without = defaults.f1_without;
  std::string advantage_mode = "std_normalized";
  bool drop_zero_reward = false;
  std::string policy_format = "otsl";
  std::uint64_t seed = 0;
  int workers = defaults.workers;
};

struct Bound {
  CLI::Option* opt;
  std::function<void(json&)> put;
};

std::vector<Bound> add_config_flags(CLI::App& app, Flags& f) {
  std::vector<Bound> b;
  auto num = [&](const char* name, const char* key, auto& var, const char* help) {
    b.push_back({app.add_option(name, var, help)->capture_default_str(),
                 [key, &var](json& j) { j[key] = var; }});
  };
  num("--tau-attn", "tau_attn", f.tau_attn, "Attention threshold for visual sources");
  num("--tau-iou", "tau_iou", f.tau_iou, "IoU bound between selected QAs");
  num("--k", "k", f.k, "Samples per image for the consistency score");
  num("--group-size", "group_size", f.group_size, "Samples per image for reward groups");
  num("--buckets", "buckets", f.buckets, "Consistency buckets lo:hi:step");
  num("--bucket-target", "bucket_target", f.bucket_target, "Total images to keep across buckets");
  num("--min-qas", "min_qas", f.min_qas, "Images with fewer selected QAs are dropped");
  num("--n-teacher-calls", "n_teacher_calls", f.n_teacher_calls, "Teacher calls per image");
  num("--consistency-temperature", "consistency_temperature", f.consistency_temperature,
      "Policy temperature for consistency sampling");
  num("--grpo-temperature", "grpo_temperature", f.grpo_temperature, "Policy temperature for reward groups");
  num("--f1-with", "f1_with", f.f1_with, "Validator F1 with the image must exceed this");
  num("--f1-without", "f1_without", f.f1_without, "Validator F1 without the image must fall below this");
  num("--advantage-mode", "advantage_mode", f.advantage_mode, "std_normalized or mean_centered");
  num("--policy-format", "policy_format", f.policy_format, "Markup the policy is asked for: otsl or html");
  num("--seed", "seed", f.seed, "Seed for every sampled request and bucket shuffle");
  num("--workers", "workers", f.workers, "Records processed concurrently");
  b.push_back({app.add_flag("--drop-zero-reward", f.drop_zero_reward,
                            "Exclude zero-reward responses from advantages"),
               [&f](json& j) { j["drop_zero_reward"] = f.drop_zero_reward; }});
  return b;
}

PipelineConfig effective_config(const Flags& f, const std::vector<Bound>& bound) {
  PipelineConfig c;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw std::runtime_error("cannot read config " + f.config_file);
    c.merge_json(json::parse(in));
  }
  json overrides = json::object();
  for (const auto& b : bound)
    if (b.opt->count() > 0) b.put(overrides);
  if (overrides.contains("bucket_target") && overrides["bucket_target"] == 0) overrides["bucket_target"] = nullptr;
  c.merge_json(overrides);
  return c;
}

StageContext make_context(const Flags& f, const std::vector<Bound>& bound, bool needs_gateway) {
  StageContext ctx;
  ctx.config = effective_config(f, bound);
  if (!f.prompts_dir.empty()) ctx.prompts = PromptSet::load(f.prompts_dir);
  if (!needs_gateway) return ctx;
  if (!f.mock_fixtures.empty() && !f.endpoint_config.empty())
    throw std::invalid_argument("--mock-fixtures and --endpoint-config are exclusive");
  if (!f.mock_fixtures.empty()) {
    ctx.gateway = Gateway::from_mock(f.mock_fixtures);
    ctx.gateway_info = {{"backend", "mock"}, {"fixtures", f.mock_fixtures}};
  } else if (!f.endpoint_config.empty()) {
    ctx.gateway = Gateway::from_config_file(f.endpoint_config);
    ordered_json roles = ordered_json::object();
    for (Role r : {Role::kPolicy, Role::kTeacher, Role::kValidator, Role::kAnswerer})
      if (ctx.gateway->configured(r)) roles[std::string(to_string(r))] = ordered_json(ctx.gateway->config(r).to_json());
    ctx.gateway_info = {{"backend", "http"}, {"roles", roles}};
  } else {
    throw std::invalid_argument("this stage needs --mock-fixtures or --endpoint-config");
  }
  if (f.verbose) ctx.gateway->set_logger([](const std::string& line) { std::cerr << line << '\n'; });
  return ctx;
}

int finish(const StageOutput& out, const StageContext& ctx, const std::string& out_path, const std::string& rejects) {
  write_records(out_path, header_record(out.stats.stage, ctx), out.records);
  write_records(rejects.empty() ? out_path + ".rejects.jsonl" : rejects, header_record(out.stats.stage, ctx),
                out.rejects);
  std::cerr << out.stats.to_json().dump() << '\n';
  return out.rejects.empty() ? kOk : kPartial;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Table recognition data engine: curation stages, rewards, simulation and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  auto bound = add_config_flags(app, f);
  app.add_option("--config", f.config_file, "JSON file of config values; flags take precedence");
  app.add_option("--endpoint-config", f.endpoint_config, "JSON file describing one endpoint per model role");
  app.add_option("--mock-fixtures", f.mock_fixtures, "Replay model replies from a fixture directory");
  app.add_option("--prompts-dir", f.prompts_dir, "Directory of prompt templates overriding the built-in ones");
  app.add_option("--rejects", f.rejects, "Reject file (default: <out>.rejects.jsonl)");
  app.add_flag("-v,--verbose", f.verbose, "Log every model exchange to stderr");

  std::string in, out, attention, qas, responses, from = "auto", to = "otsl", pred, gold;
  bool structure_only = false;

  auto* convert = app.add_subcommand("convert", "Convert table markup between HTML and OTSL");
  convert->add_option("--in", in, "Table records")->required();
  convert->add_option("--out", out, "Converted records")->required();
  convert->add_option("--from", from, "html, otsl or auto")->capture_default_str();
  convert->add_option("--to", to, "html or otsl")->capture_default_str();

  auto stage = [&](const char* name, const char* help, const char* in_help) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--in", in, in_help)->required();
    s->add_option("--out", out, "Output records")->required();
    return s;
  };
  auto* consistency = stage("consistency", "Score images by the agreement of K policy samples", "Image records");
  auto* bucket = stage("bucket", "Keep images whose consistency falls in the bucket range", "Consistency records");
  auto* qagen = stage("qagen", "Collect candidate QAs from the teacher", "Image or consistency records");
  auto* validate = stage("validate", "Cross-check candidates with and without the image", "Candidate records");
  auto* select = stage("select", "Choose QAs with non-overlapping visual sources", "Validated records");
  select->add_option("--attention", attention, "Attention records for the candidates")->required();
  auto* reward = app.add_subcommand("reward", "Sample response groups and score them with the QA reward");
  reward->add_option("--qas", qas, "QA set records")->required();
  reward->add_option("--responses", responses, "Response records; sampled from the policy when absent");
  reward->add_option("--out", out, "Group records")->required();
  auto* advantage = stage("advantage", "Group-relative advantages over legal responses", "Group records");

  std::string images, out_dir;
  auto* run = app.add_subcommand("run", "All curation and reward stages, one file per stage");
  run->add_option("--images", images, "Image records")->required();
  run->add_option("--attention", attention, "Attention records for the candidates")->required();
  run->add_option("--out-dir", out_dir, "Directory for the stage files")->required();

  DynamicsConfig dyn;
  auto* simulate = app.add_subcommand("simulate", "Offline sweep of the corruption simulator");
  simulate->add_option("--out", out, "Dynamics rows")->required();
  simulate->add_option("--error-rates", dyn.error_rates, "Error rates to sweep")->delimiter(',')->capture_default_str();
  simulate->add_option("--p-illegal", dyn.p_illegal_emit, "Probability a sample is emitted illegal")
      ->capture_default_str();
  simulate->add_option("--n-images", dyn.n_images, "Images per error rate")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Score predictions against gold tables with TEDS and S-TEDS");
  eval->add_option("--pred", pred, "Prediction records {id, markup}")->required();
  eval->add_option("--gold", gold, "Gold records {id, markup, subset?}")->required();
  eval->add_option("--out", out, "Per-item scores and the summary");
  eval->add_flag("--structure-only", structure_only, "Score structure only (S-TEDS)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFatal;
  }

  try {
    if (*convert) {
      auto ctx = make_context(f, bound, false);
      std::optional<MarkupFormat> from_fmt;
      if (from != "auto") {
        from_fmt = parse_format(from);
        if (!from_fmt) throw std::invalid_argument("--from must be html, otsl or auto");
      }
      auto to_fmt = parse_format(to);
      if (!to_fmt) throw std::invalid_argument("--to must be html or otsl");
      return finish(stage_convert(read_records(in, {"table"}), from_fmt, *to_fmt, ctx), ctx, out, f.rejects);
    }
    if (*consistency) {
      auto ctx = make_context(f, bound, true);
      return finish(stage_consistency(read_records(in, {"image"}), ctx), ctx, out, f.rejects);
    }
    if (*bucket) {
      auto ctx = make_context(f, bound, false);
      return finish(stage_bucket(read_records(in, {"consistency"}), ctx), ctx, out, f.rejects);
    }
    if (*qagen) {
      auto ctx = make_context(f, bound, true);
      return finish(stage_qagen(read_records(in, {"image", "consistency"}), ctx), ctx, out, f.rejects);
    }
    if (*validate) {
      auto ctx = make_context(f, bound, true);
      return finish(stage_validate(read_records(in, {"candidates"}), ctx), ctx, out, f.rejects);
    }
    if (*select) {
      auto ctx = make_context(f, bound, false);
      return finish(stage_select(read_records(in, {"validated"}), read_records(attention, {"attention"}), ctx), ctx,
                    out, f.rejects);
    }
    if (*reward) {
      auto ctx = make_context(f, bound, true);
      std::vector<Record> given;
      if (!responses.empty()) given = read_records(responses, {"responses"});
      return finish(stage_reward(read_records(qas, {"qaset"}), responses.empty() ? nullptr : &given, ctx), ctx, out,
                    f.rejects);
    }
    if (*advantage) {
      auto ctx = make_context(f, bound, false);
      return finish(stage_advantage(read_records(in, {"group"}), ctx), ctx, out, f.rejects);
    }
    if (*run) {
      auto ctx = make_context(f, bound, true);
      auto stats = run_pipeline(read_records(images, {"image"}), read_records(attention, {"attention"}), ctx, out_dir);
      bool rejects = false;
      for (const auto& s : stats) {
        std::cerr << s.to_json().dump() << '\n';
        rejects |= s.records_rejected > 0;
      }
      return rejects ? kPartial : kOk;
    }
    if (*simulate) {
      auto ctx = make_context(f, bound, false);
      dyn.k = ctx.config.k;
      dyn.g = ctx.config.group_size;
      dyn.seed = ctx.config.seed;
      dyn.workers = ctx.config.workers;
      StageOutput result = stage_simulate(dyn);
      ordered_json header{{"schema", kSchemaVersion}, {"kind", "header"}, {"stage", "simulate"}};
      header["config"] = ordered_json(dyn.to_json());
      write_records(out, header, result.records);
      for (const auto& r : result.records) std::cout << r.dump() << '\n';
      return kOk;
    }
    if (*eval) {
      auto ctx = make_context(f, bound, false);
      EvalReport report = evaluate(read_records(pred, {"table"}), read_records(gold, {"table"}), structure_only,
                                   ctx.config.workers);
      if (!out.empty()) {
        std::vector<ordered_json> lines;
        for (const auto& it : report.items) lines.push_back(it.to_json());
        lines.push_back(report.to_json());
        write_records(out, header_record("eval", ctx), lines);
      }
      std::cout << report.to_json().dump() << '\n';
      return kOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "trivia: " << e.what() << '\n';
    return kFatal;
  }
  return kFatal;
}
