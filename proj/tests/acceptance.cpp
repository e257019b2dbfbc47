// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "test_support.hpp"
#include "trivia/data_engine.hpp"
#include "trivia/markup.hpp"
#include "trivia/metrics.hpp"
#include "trivia/pipeline.hpp"
#include "trivia/reward.hpp"
#include "trivia/simulator.hpp"

using namespace trivia;
using nlohmann::json;

namespace {

/// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
    if (!ok && failures.size() == 5) failures.push_back("...");
  }
};

int failed = 0;

void criterion(int n, const std::string& title, double limit_s, const std::function<void(Check&)>& body) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_s) {
    c.failures.push_back("took " + std::to_string(secs) + " s, limit " + std::to_string(limit_s) + " s");
  }
  const bool ok = c.failures.empty();
  failed += !ok;
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.2fs", secs);
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << title << " [" << timing << "]";
  if (!c.detail.empty()) std::cout << " " << c.detail;
  std::cout << '\n';
  for (const auto& f : c.failures) std::cout << "    " << f << '\n';
}

std::vector<Record> as_records(const std::vector<json>& lines, const std::string& kind) {
  std::stringstream ss;
  for (auto j : lines) {
    j["schema"] = kSchemaVersion;
    j["kind"] = kind;
    ss << j.dump() << '\n';
  }
  return parse_records(ss, "inline", {});
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string run_command(const std::string& cmd) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  pclose(p);
  return out;
}

std::string line_with(const std::string& text, const std::string& needle) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.find(needle) != std::string::npos) return line;
  return "";
}

void ted_oracle(Check& c) {
  std::mt19937_64 rng(20240601);
  const int pairs = 1200;
  for (int i = 0; i < pairs; ++i) {
    TableTree a = testing::random_tree(rng, testing::uniform(rng, 1, 6));
    TableTree b = testing::random_tree(rng, testing::uniform(rng, 1, 6));
    const bool structure_only = i % 3 == 2;
    const double dp = tree_edit_distance(a, b, CostModel{structure_only});
    const double oracle = testing::brute_force_ted(a, b, structure_only);
    c.expect(std::abs(dp - oracle) <= 1e-12, "pair " + std::to_string(i) + ": dp " + std::to_string(dp) +
                                                 " oracle " + std::to_string(oracle));
  }
  c.detail = std::to_string(pairs) + " pairs";
}

void teds_sanity(Check& c) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 200; ++i) {
    TableGrid g = testing::random_grid(rng);
    c.expect(teds(g, g) == 1.0, "teds(x,x) != 1 on table " + std::to_string(i));
    c.expect(teds(g, g, true) == 1.0, "s-teds(x,x) != 1 on table " + std::to_string(i));
  }
  // One extra cell: trees of 3 and 4 nodes, one insertion.
  const TableGrid a1{1, 1, {Cell{0, 0, 1, 1, "a"}}};
  const TableGrid ab{1, 2, {Cell{0, 0, 1, 1, "a"}, Cell{0, 1, 1, 1, "b"}}};
  const double ins = teds(a1, ab);
  c.expect(std::abs(ins - 0.75) < 1e-9, "insertion case " + std::to_string(ins));
  // Renaming "xyz" to "abc": 3 of 3 characters differ, cost 1 over 3 nodes.
  const TableGrid xyz{1, 1, {Cell{0, 0, 1, 1, "xyz"}}};
  const TableGrid abc{1, 1, {Cell{0, 0, 1, 1, "abc"}}};
  const double ren = teds(xyz, abc);
  c.expect(std::abs(ren - 2.0 / 3.0) < 1e-9, "content rename case " + std::to_string(ren));
  c.detail = "insertion " + std::to_string(ins) + ", rename " + std::to_string(ren);
}

void round_trips(Check& c) {
  std::mt19937_64 rng(4242);
  for (int i = 0; i < 1000; ++i) {
    TableGrid g = testing::random_grid(rng);
    auto html = parse_html_table(grid_to_html(g));
    c.expect(html.ok() && html.value() == g, "html round trip " + std::to_string(i));
    TableGrid plain = g;
    for (auto& cell : plain.cells) cell.is_header = false;  // OTSL has no header flag
    auto otsl = parse_markup(serialize(plain, MarkupFormat::kOtsl), MarkupFormat::kOtsl);
    c.expect(otsl.ok() && otsl.value() == plain, "otsl round trip " + std::to_string(i));
  }
  static const char kBytes[] = "<>/=\"' \ttablerdhspancolowTABLE0123456789&;!-x\n";
  std::size_t parsed = 0;
  for (int i = 0; i < 10000; ++i) {
    const int len = testing::uniform(rng, 0, 200);
    std::string s;
    for (int k = 0; k < len; ++k) {
      s += testing::coin(rng, 0.5) ? static_cast<char>(rng() & 0xff) : kBytes[rng() % (sizeof kBytes - 1)];
    }
    if (i % 2 == 1) {
      // Mutated real table: flip, drop and insert bytes.
      s = grid_to_html(testing::random_grid(rng, 4, 4));
      const int edits = testing::uniform(rng, 0, 4);
      for (int e = 0; e < edits && !s.empty(); ++e) {
        const auto at = static_cast<std::size_t>(rng() % s.size());
        switch (rng() % 3) {
          case 0: s[at] = kBytes[rng() % (sizeof kBytes - 1)]; break;
          case 1: s.erase(at, 1 + rng() % 8); break;
          default: s.insert(at, 1, static_cast<char>(rng() & 0xff));
        }
      }
    } else if (testing::coin(rng, 0.5)) {
      s = "<table>" + s;
    }
    try {
      auto r = parse_html_table(s);
      if (r.ok()) {
        ++parsed;
        c.expect(grid_validate(r.value()).ok(), "fuzz input " + std::to_string(i) + " gave an invalid grid");
      }
    } catch (const std::exception& e) {
      c.expect(false, "fuzz input " + std::to_string(i) + " threw " + e.what());
    }
  }
  c.detail = "1000 grids, 10000 fuzz inputs (" + std::to_string(parsed) + " parsed)";
}

void consistency_formula(Check& c) {
  const double k3 = mean_pairwise({{0, 1.0, 0.5}, {0, 0, 0.5}, {0, 0, 0}});
  c.expect(std::abs(k3 - 2.0 / 3.0) < 1e-9, "K=3 case " + std::to_string(k3));
  std::mt19937_64 rng(8);
  std::vector<std::string> responses;
  for (int i = 0; i < 8; ++i) responses.push_back(serialize(testing::random_grid(rng, 3, 3, false), MarkupFormat::kOtsl));
  const double base = consistency_score(responses).score;
  for (int i = 0; i < 100; ++i) {
    std::shuffle(responses.begin(), responses.end(), rng);
    c.expect(consistency_score(responses).score == base, "shuffle " + std::to_string(i) + " changed the score");
  }
  const double same = consistency_score(std::vector<std::string>(8, responses[0])).score;
  c.expect(same == 1.0, "8 identical responses gave " + std::to_string(same));
  c.detail = "K=3 " + std::to_string(k3);
}

void curation_thresholds(Check& c) {
  // Bucket range.
  StageContext ctx;
  auto bucketed = stage_bucket(as_records({json{{"image_id", "a"}, {"image", "a"}, {"score", 0.35}},
                                           json{{"image_id", "b"}, {"image", "b"}, {"score", 0.55}},
                                           json{{"image_id", "c"}, {"image", "c"}, {"score", 0.95}}},
                                          "consistency"),
                               ctx);
  c.expect(bucketed.records.size() == 2, "bucket kept " + std::to_string(bucketed.records.size()) + " of 3");
  c.expect(!bucketed.rejects.empty() && bucketed.rejects[0]["id"] == "a", "score 0.35 not discarded");

  // Cross-check gates.
  c.expect(cross_check_scores(0.95, 0.1).validity == Validity::kValid, "0.95/0.1 should be valid");
  c.expect(cross_check_scores(0.9, 0.1).validity == Validity::kInvalid, "0.9 with the image must not pass");
  c.expect(cross_check_scores(0.95, 0.3).validity == Validity::kInvalid, "0.3 without the image must not pass");
  c.expect(CrossCheckThresholds{}.f1_with == 0.9 && CrossCheckThresholds{}.f1_without == 0.3, "F1 gate defaults");

  // Fewer than three valid QAs.
  auto valid = [](int i, int token) {
    QaCandidate q;
    q.qa_index = i;
    q.validity = Validity::kValid;
    q.visual_source = TokenSet{token};
    return q;
  };
  c.expect(greedy_select({valid(0, 1), valid(1, 2)}).dropped, "two valid QAs not dropped");
  c.expect(!greedy_select({valid(0, 1), valid(1, 2), valid(2, 3)}).dropped, "three valid QAs dropped");

  // tau defaults in --help and in output headers.
  const std::string help = run_command(std::string("\"") + TRIVIA_CLI_PATH + "\" --help");
  const std::string attn = line_with(help, "--tau-attn");
  const std::string iou = line_with(help, "--tau-iou");
  c.expect(attn.find("0.01") != std::string::npos, "--help tau-attn line: " + attn);
  c.expect(iou.find("0.3") != std::string::npos, "--help tau-iou line: " + iou);
  const auto header = header_record("select", ctx);
  c.expect(header["config"]["tau_attn"] == 0.01 && header["config"]["tau_iou"] == 0.3, "header defaults");
  c.expect(PipelineConfig{}.min_qas == 3, "min_qas default");
}

void greedy_maximality(Check& c) {
  std::mt19937_64 rng(606);
  const double tau = 0.3;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = testing::uniform(rng, 1, 10);
    std::vector<QaCandidate> pool;
    for (int i = 0; i < n; ++i) {
      std::vector<int> idx;
      const int lo = testing::uniform(rng, 0, 24);
      const int len = testing::uniform(rng, 1, 10);
      for (int k = lo; k < lo + len; ++k)
        if (testing::coin(rng, 0.8)) idx.push_back(k);
      if (idx.empty()) idx.push_back(lo);
      QaCandidate q;
      q.qa_index = i;
      q.validity = Validity::kValid;
      q.visual_source = make_token_set(idx);
      pool.push_back(q);
    }
    auto r = greedy_select(pool, tau, 0);
    unsigned chosen = 0;
    for (const auto& s : r.selected) chosen |= 1u << s.qa_index;

    // Exhaustive: every feasible subset, and which of them are maximal.
    auto compatible = [&](int i, int j) { return iou(*pool[i].visual_source, *pool[j].visual_source) < tau; };
    auto feasible = [&](unsigned mask) {
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if ((mask >> i & 1) && (mask >> j & 1) && !compatible(i, j)) return false;
      return true;
    };
    std::set<unsigned> maximal;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      if (!feasible(mask)) continue;
      bool extendable = false;
      for (int i = 0; i < n && !extendable; ++i)
        if (!(mask >> i & 1) && feasible(mask | 1u << i)) extendable = true;
      if (!extendable) maximal.insert(mask);
    }
    c.expect(feasible(chosen), "trial " + std::to_string(trial) + ": IoU bound violated");
    c.expect(maximal.count(chosen) == 1, "trial " + std::to_string(trial) + ": greedy set is not maximal");
  }
  c.detail = "500 pools";
}

void advantage_stats(Check& c) {
  auto a = compute_advantages({0.2, 0.4, 0.6});
  c.expect(a.size() == 3 && std::abs(a[0] + 1.2247) < 1e-3 && std::abs(a[1]) < 1e-3 && std::abs(a[2] - 1.2247) < 1e-3,
           "advantages of {0.2,0.4,0.6}");
  std::mt19937_64 rng(31337);
  int strict = 0;
  for (int g = 0; g < 1000; ++g) {
    const int m = testing::uniform(rng, 2, 16);
    const int k = testing::uniform(rng, 1, 8);
    std::vector<double> legal;
    for (int i = 0; i < m; ++i) legal.push_back(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    // Same numbers through the group path: illegal members are filtered out.
    std::vector<std::string> responses;
    for (int i = 0; i < m; ++i) responses.push_back("<fcel>r" + std::to_string(i) + "<nl>");
    for (int i = 0; i < k; ++i) responses.push_back("<fcel>broken");
    ResponseGroup group = make_group("g", responses);
    for (int i = 0; i < m; ++i) group.rewards[static_cast<std::size_t>(i)] = legal[static_cast<std::size_t>(i)];
    FilteredView view = filter_illegal(group);
    c.expect(view.rewards == legal, "group " + std::to_string(g) + ": filter kept the wrong members");
    const double filtered = advantage_variance_filtered(view.rewards);
    const double naive = advantage_variance_naive(view.rewards, static_cast<std::size_t>(k));
    c.expect(filtered <= naive, "group " + std::to_string(g) + ": filtered " + std::to_string(filtered) +
                                    " > naive " + std::to_string(naive));
    strict += filtered < naive;
  }
  c.detail = "1000 groups, " + std::to_string(strict) + " strictly lower";
}

void offline_end_to_end(Check& c) {
  const std::filesystem::path fx = std::filesystem::path(TRIVIA_SOURCE_DIR) / "fixtures" / "mock5";
  const auto images = read_records(fx / "images.jsonl", {"image"});
  const auto attention = read_records(fx / "attention.jsonl", {"attention"});
  std::vector<std::filesystem::path> dirs;
  for (int run = 0; run < 2; ++run) {
    auto dir = std::filesystem::temp_directory_path() / ("trivia_acceptance_run" + std::to_string(run));
    std::filesystem::remove_all(dir);
    StageContext ctx;
    ctx.gateway = Gateway::from_mock(fx / "gateway");  // replay only, no network backend exists
    ctx.gateway_info = {{"backend", "mock"}, {"fixtures", "mock5"}};
    run_pipeline(images, attention, ctx, dir);
    dirs.push_back(dir);
  }
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dirs[0])) {
    ++files;
    c.expect(slurp(entry.path()) == slurp(dirs[1] / entry.path().filename()),
             entry.path().filename().string() + " differs between runs");
  }
  const auto training = read_records(dirs[0] / "advantage.jsonl", {"training"});
  c.expect(!training.empty(), "no training records");
  c.detail = std::to_string(training.size()) + " training records, " + std::to_string(files) + " files identical";
}

void simulator_dynamics(Check& c) {
  DynamicsConfig cfg;
  cfg.n_images = 100;
  cfg.error_rates = {0.0, 0.2, 0.4};
  cfg.seed = 2025;
  cfg.workers = 4;
  auto rows = run_dynamics(cfg);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    c.expect(rows[i].consistency_mean < rows[i - 1].consistency_mean,
             "consistency not decreasing at error rate " + std::to_string(rows[i].error_rate));
  }
  std::ostringstream d;
  d << "consistency";
  for (const auto& r : rows) d << " " << r.consistency_mean;

  cfg.p_illegal_emit = 0.3;
  auto illegal = run_dynamics(cfg);
  double pooled = 0.0;
  for (const auto& r : illegal) {
    pooled += r.filtered_below_naive / static_cast<double>(illegal.size());
    c.expect(r.filtered_below_naive >= 0.95, "error rate " + std::to_string(r.error_rate) + ": filtered lower in " +
                                                 std::to_string(r.filtered_below_naive * 100) + "% of groups");
  }
  d << "; filtered lower in " << pooled * 100 << "% of groups";
  c.detail = d.str();
}

void eval_harness(Check& c) {
  const std::string g1 = "<table><tr><td colspan=\"2\">Revenue</td></tr><tr><td>2023</td><td>120</td></tr></table>";
  const std::string g2 = "<fcel>项目<fcel>金额<nl><fcel>收入<fcel>35<nl>";
  auto golds = as_records({json{{"id", "1"}, {"markup", g1}}, json{{"id", "2"}, {"markup", g2}}}, "table");
  auto self = evaluate(golds, golds, false);
  c.expect(self.overall.teds == 100.0, "self TEDS " + std::to_string(self.overall.teds.value_or(-1)));
  c.expect(self.overall.s_teds == 100.0, "self S-TEDS " + std::to_string(self.overall.s_teds));
  auto mixed = evaluate(
      as_records({json{{"id", "1"}, {"markup", "<fcel>Revenue<lcel"}}, json{{"id", "2"}, {"markup", g2}}}, "table"),
      golds, false);
  c.expect(mixed.overall.teds == 50.0, "mixed TEDS " + std::to_string(mixed.overall.teds.value_or(-1)));
  c.expect(mixed.items[0].teds == 0.0 && mixed.items[1].teds == 1.0, "per-item scores are not {0, 1}");
  c.detail = "self " + std::to_string(*self.overall.teds) + "/" + std::to_string(self.overall.s_teds) + ", mixed " +
             std::to_string(*mixed.overall.teds);
}

}  // namespace

int main() {
  criterion(1, "tree edit distance equals exhaustive search", 60, ted_oracle);
  criterion(2, "TEDS sanity suite", 10, teds_sanity);
  criterion(3, "markup round trips and HTML fuzz", 60, round_trips);
  criterion(4, "consistency formula", 10, consistency_formula);
  criterion(5, "curation thresholds and surfaced defaults", 10, curation_thresholds);
  criterion(6, "greedy selection is bounded and maximal", 30, greedy_maximality);
  criterion(7, "advantage statistics and filtering variance", 10, advantage_stats);
  criterion(8, "offline end-to-end on the mock fixtures", 120, offline_end_to_end);
  criterion(9, "simulator dynamics", 300, simulator_dynamics);
  criterion(10, "evaluation harness", 10, eval_harness);
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << '\n';
  return failed == 0 ? 0 : 1;
}
