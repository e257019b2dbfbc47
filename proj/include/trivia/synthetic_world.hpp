// Copyright 2026 The trivia Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small world of gold tables that can play every model role. Used to
// record the offline fixture set; never needed at pipeline run time.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "trivia/data_engine.hpp"
#include "trivia/gateway.hpp"
#include "trivia/table.hpp"

namespace trivia {

struct WorldImage {
  std::string image_id;
  std::string image;  // reference as it appears in requests
  std::string source_doc;
  TableGrid gold;
  int header_rows = 1;
  double error_rate = 0.1;      // policy corruption at temperature 1
  double p_illegal_emit = 0.1;
};

/// Question forms the world asks and understands:
///   "What is the <row label> for <column label>?"
///   "<column label>的<row label>是多少？"
std::string world_question(const std::string& row_label, const std::string& col_label, Lang lang);

/// Answers a question of the forms above from a table: the row is found by
/// its column-0 label, the column by a header cell above that row.
std::optional<std::string> lookup_answer(const TableGrid& grid, const std::string& question);

class SyntheticWorld {
 public:
  explicit SyntheticWorld(std::vector<WorldImage> images) : images_(std::move(images)) {}

  /// Five images: two share a source document, one has too few data cells to
  /// reach three selected QAs, one is Chinese.
  static SyntheticWorld mock5();

  const std::vector<WorldImage>& images() const { return images_; }
  const WorldImage* by_image(const std::string& image) const;
  const WorldImage* by_id(const std::string& image_id) const;

  /// Image records in pipeline input form.
  std::vector<nlohmann::json> image_records() const;

  /// A 16x16 patch attention map for a candidate: low noise plus the patches
  /// of the answer cell and its row and column labels.
  AttentionMap attention_for(const std::string& image_id, const QaCandidate& cand) const;

 private:
  std::vector<WorldImage> images_;
};

class SyntheticBackend : public ChatBackend {
 public:
  explicit SyntheticBackend(std::shared_ptr<const SyntheticWorld> world) : world_(std::move(world)) {}
  ChatReply complete(const ChatRequest& request) override;

 private:
  ChatReply policy(const ChatRequest& request) const;
  ChatReply teacher(const ChatRequest& request) const;
  ChatReply validator(const ChatRequest& request) const;
  ChatReply answerer(const ChatRequest& request) const;
  const WorldImage& image_of(const ChatRequest& request) const;

  std::shared_ptr<const SyntheticWorld> world_;
};

}  // namespace trivia
