// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0

#include "trivia/simulator.hpp"

#include <algorithm>
#include <map>
#include <utility>

#include "parallel.hpp"
#include "rng.hpp"
#include "trivia/data_engine.hpp"
#include "trivia/reward.hpp"
#include "utf8.hpp"

namespace trivia {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string random_text(std::mt19937_64& g, const SyntheticSpec& spec) {
  const auto alpha = utf8::decode(spec.alphabet);
  const int len = spec.min_text + static_cast<int>(rng::below(
                                      g, static_cast<std::uint64_t>(spec.max_text - spec.min_text + 1)));
  std::string out;
  for (int i = 0; i < len; ++i) utf8::append(out, alpha[rng::below(g, alpha.size())]);
  return out;
}

// Substitutes one code point (or inserts one into empty text) using
// precomputed draws so the stream position does not depend on the outcome.
std::string typo(const std::string& text, std::uint64_t pos_draw, std::uint64_t char_draw,
                 const std::vector<std::uint32_t>& alpha) {
  auto cps = utf8::decode(text);
  if (cps.empty()) {
    cps.push_back(alpha[char_draw % alpha.size()]);
  } else {
    const std::size_t pos = pos_draw % cps.size();
    std::uint32_t c = alpha[char_draw % alpha.size()];
    if (c == cps[pos]) c = alpha[(char_draw + 1) % alpha.size()];
    if (c == cps[pos]) c = '#';
    cps[pos] = c;
  }
  std::string out;
  for (auto cp : cps) utf8::append(out, cp);
  return out;
}

void split_cell(TableGrid& grid, std::size_t index) {
  const Cell c = grid.cells[index];
  grid.cells[index].row_span = 1;
  grid.cells[index].col_span = 1;
  for (int r = c.row; r < c.row + c.row_span; ++r) {
    for (int col = c.col; col < c.col + c.col_span; ++col) {
      if (r == c.row && col == c.col) continue;
      grid.cells.push_back(Cell{r, col, 1, 1, "", c.is_header});
    }
  }
  sort_reading_order(grid);
}

void break_spans(TableGrid& grid, std::uint64_t draw) {
  std::vector<std::size_t> merged;
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    if (grid.cells[i].row_span > 1 || grid.cells[i].col_span > 1) merged.push_back(i);
  }
  if (!merged.empty()) {
    split_cell(grid, merged[draw % merged.size()]);
    return;
  }
  // No merged cell: fuse two horizontally adjacent singletons, as a model
  // that fails to split them would.
  std::map<std::pair<int, int>, std::size_t> at;
  for (std::size_t i = 0; i < grid.cells.size(); ++i) at[{grid.cells[i].row, grid.cells[i].col}] = i;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    auto it = at.find({grid.cells[i].row, grid.cells[i].col + 1});
    if (it != at.end()) pairs.emplace_back(i, it->second);
  }
  if (pairs.empty()) return;
  auto [left, right] = pairs[draw % pairs.size()];
  grid.cells[left].col_span = 2;
  grid.cells.erase(grid.cells.begin() + static_cast<std::ptrdiff_t>(right));
  sort_reading_order(grid);
}

}  // namespace

json SyntheticSpec::to_json() const {
  return {{"min_rows", min_rows},   {"max_rows", max_rows},
          {"min_cols", min_cols},   {"max_cols", max_cols},
          {"merge_probability", merge_probability},
          {"alphabet", alphabet},   {"min_text", min_text},
          {"max_text", max_text},   {"seed", seed}};
}

TableGrid gen_table(const SyntheticSpec& spec) {
  std::mt19937_64 g(spec.seed);
  return gen_table(spec, g);
}

TableGrid gen_table(const SyntheticSpec& spec, std::mt19937_64& g) {
  if (spec.min_rows < 1 || spec.max_rows < spec.min_rows || spec.min_cols < 1 ||
      spec.max_cols < spec.min_cols || spec.min_text < 0 || spec.max_text < spec.min_text ||
      spec.alphabet.empty()) {
    throw std::invalid_argument("bad synthetic spec");
  }
  const int rows = spec.min_rows + static_cast<int>(rng::below(
                                       g, static_cast<std::uint64_t>(spec.max_rows - spec.min_rows + 1)));
  const int cols = spec.min_cols + static_cast<int>(rng::below(
                                       g, static_cast<std::uint64_t>(spec.max_cols - spec.min_cols + 1)));
  std::vector<std::vector<bool>> occ(static_cast<std::size_t>(rows),
                                     std::vector<bool>(static_cast<std::size_t>(cols), false));
  auto taken = [&](int r, int c) { return occ[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]; };
  TableGrid grid{rows, cols, {}};
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (taken(r, c)) continue;
      int rs = 1, cs = 1;
      if (rng::chance(g, spec.merge_probability)) {
        int free_run = 0;
        while (c + free_run < cols && !taken(r, c + free_run) && free_run < 3) ++free_run;
        const int max_rs = std::min(3, rows - r);
        if (free_run > 1 || max_rs > 1) {
          do {
            cs = 1 + static_cast<int>(rng::below(g, static_cast<std::uint64_t>(free_run)));
            rs = 1 + static_cast<int>(rng::below(g, static_cast<std::uint64_t>(max_rs)));
          } while (rs == 1 && cs == 1);
          // Rows below may already hold cells spanning down from above.
          for (int k = 1; k < rs; ++k) {
            bool clear = true;
            for (int x = c; x < c + cs; ++x) clear &= !taken(r + k, x);
            if (!clear) {
              rs = k;
              break;
            }
          }
        }
      }
      for (int y = r; y < r + rs; ++y)
        for (int x = c; x < c + cs; ++x) occ[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = true;
      grid.cells.push_back(Cell{r, c, rs, cs, random_text(g, spec), false});
    }
  }
  return grid;
}

CorruptionPolicy CorruptionPolicy::for_error_rate(double e, double p_illegal_emit, std::uint64_t seed) {
  CorruptionPolicy p;
  p.p_text_typo = e;
  p.p_cell_drop = e / 2;
  p.p_span_break = e / 2;
  p.p_illegal_emit = p_illegal_emit;
  p.seed = seed;
  return p;
}

json CorruptionPolicy::to_json() const {
  return {{"p_text_typo", p_text_typo},
          {"p_cell_drop", p_cell_drop},
          {"p_span_break", p_span_break},
          {"p_illegal_emit", p_illegal_emit},
          {"seed", seed}};
}

TableGrid corrupt(const TableGrid& gold, const CorruptionPolicy& policy, std::mt19937_64& g,
                  const std::string& alphabet) {
  const auto alpha = utf8::decode(alphabet);
  if (alpha.empty()) throw std::invalid_argument("empty corruption alphabet");
  TableGrid out = gold;
  // Fixed draws per cell couple runs at different rates: a higher rate
  // corrupts a superset of the cells a lower rate does.
  for (auto& cell : out.cells) {
    const double u_typo = rng::unit(g);
    const double u_drop = rng::unit(g);
    const std::uint64_t pos = g();
    const std::uint64_t ch = g();
    if (u_typo < policy.p_text_typo) cell.content = typo(cell.content, pos, ch, alpha);
    if (u_drop < policy.p_cell_drop) cell.content.clear();
  }
  const double u_span = rng::unit(g);
  const std::uint64_t which = g();
  if (u_span < policy.p_span_break) break_spans(out, which);
  return out;
}

std::vector<std::string> sample_responses(const TableGrid& gold, const CorruptionPolicy& policy,
                                          int n, const std::string& alphabet) {
  require_valid(gold);
  const OtslSpelling spelling;
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 g(rng::mix(policy.seed, static_cast<std::uint64_t>(i)));
    const bool illegal = rng::unit(g) < policy.p_illegal_emit;
    std::string text = render_otsl(grid_to_otsl(corrupt(gold, policy, g, alphabet)), spelling);
    if (illegal) {
      const std::string nl = spelling.spell(OtslToken::kNewline);
      if (text.size() >= nl.size() && text.compare(text.size() - nl.size(), nl.size(), nl) == 0) {
        text.resize(text.size() - nl.size());
      } else {
        text = spelling.spell(OtslToken::kLeft) + nl;
      }
    }
    out.push_back(std::move(text));
  }
  return out;
}

double oracle_reward(std::string_view response, const TableGrid& gold) {
  Legality l = is_legal(response, detect_format(response));
  if (!l.legal) throw IllegalResponse("illegal response (" + l.reason + ")");
  if (gold.cells.empty()) return 1.0;
  std::map<std::pair<int, int>, const std::string*> at;
  for (const auto& c : l.grid->cells) at[{c.row, c.col}] = &c.content;
  std::size_t kept = 0;
  for (const auto& c : gold.cells) {
    auto it = at.find({c.row, c.col});
    if (it != at.end() && *it->second == c.content) ++kept;
  }
  return static_cast<double>(kept) / static_cast<double>(gold.cells.size());
}

json DynamicsConfig::to_json() const {
  return {{"spec", spec.to_json()}, {"error_rates", error_rates}, {"p_illegal_emit", p_illegal_emit},
          {"n_images", n_images},   {"k", k},                     {"g", g},
          {"seed", seed}};
}

ordered_json DynamicsRow::to_json() const {
  ordered_json j;
  j["error_rate"] = error_rate;
  j["p_illegal_emit"] = p_illegal_emit;
  j["n_images"] = n_images;
  j["consistency_mean"] = consistency_mean;
  j["reward_mean"] = reward_mean;
  j["adv_var_filtered"] = adv_var_filtered;
  j["adv_var_naive"] = adv_var_naive;
  j["illegal_fraction"] = illegal_fraction;
  j["filtered_below_naive"] = filtered_below_naive;
  j["filtered_equal_naive"] = filtered_equal_naive;
  return j;
}

std::vector<DynamicsRow> run_dynamics(const DynamicsConfig& config) {
  if (config.n_images < 1 || config.k < 2 || config.g < 1) {
    throw std::invalid_argument("run_dynamics needs n_images >= 1, k >= 2, g >= 1");
  }
  struct ImageStats {
    double consistency = 0, reward_sum = 0, var_f = 0, var_n = 0;
    int legal = 0, illegal = 0;
    bool below = false, equal = false;
  };
  std::vector<DynamicsRow> rows;
  for (double e : config.error_rates) {
    std::vector<ImageStats> stats(static_cast<std::size_t>(config.n_images));
    detail::parallel_for(stats.size(), config.workers, [&](std::size_t i) {
      const std::uint64_t image_seed = rng::mix(config.seed, i);
      SyntheticSpec spec = config.spec;
      spec.seed = image_seed;
      const TableGrid gold = gen_table(spec);
      ImageStats& s = stats[i];
      auto k_policy = CorruptionPolicy::for_error_rate(e, config.p_illegal_emit, rng::mix(image_seed, 1));
      s.consistency = consistency_score(sample_responses(gold, k_policy, config.k, spec.alphabet)).score;
      auto g_policy = CorruptionPolicy::for_error_rate(e, config.p_illegal_emit, rng::mix(image_seed, 2));
      std::vector<double> legal;
      for (const auto& r : sample_responses(gold, g_policy, config.g, spec.alphabet)) {
        try {
          legal.push_back(oracle_reward(r, gold));
        } catch (const IllegalResponse&) {
          ++s.illegal;
        }
      }
      s.legal = static_cast<int>(legal.size());
      for (double r : legal) s.reward_sum += r;
      s.var_f = advantage_variance_filtered(legal);
      s.var_n = advantage_variance_naive(legal, static_cast<std::size_t>(s.illegal));
      s.below = s.var_f < s.var_n;
      s.equal = s.var_f == s.var_n;
    });
    DynamicsRow row;
    row.error_rate = e;
    row.p_illegal_emit = config.p_illegal_emit;
    row.n_images = config.n_images;
    double reward_sum = 0;
    long legal = 0, illegal = 0;
    int below = 0, equal = 0;
    for (const auto& s : stats) {
      row.consistency_mean += s.consistency;
      row.adv_var_filtered += s.var_f;
      row.adv_var_naive += s.var_n;
      reward_sum += s.reward_sum;
      legal += s.legal;
      illegal += s.illegal;
      below += s.below;
      equal += s.equal;
    }
    const double n = config.n_images;
    row.consistency_mean /= n;
    row.adv_var_filtered /= n;
    row.adv_var_naive /= n;
    row.reward_mean = legal > 0 ? reward_sum / static_cast<double>(legal) : 0.0;
    row.illegal_fraction = static_cast<double>(illegal) / static_cast<double>(legal + illegal);
    row.filtered_below_naive = below / n;
    row.filtered_equal_naive = equal / n;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace trivia
