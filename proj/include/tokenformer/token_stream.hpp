// Copyright 2026 The TokenFormer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tokenformer/matrix.hpp"
#include "tokenformer/tape.hpp"

namespace tokenformer {

enum class TokenType : std::uint8_t { Field, Sep, Item, Action, Target };

char token_type_code(TokenType t);

enum class SupervisionMode { UserCentric, NewImpressionOnly };

std::string_view to_string(SupervisionMode m);
SupervisionMode parse_supervision_mode(std::string_view s);

struct StreamSpec {
  std::size_t fields = 0;      // M
  std::size_t history = 0;     // T
  std::size_t targets = 1;     // K
  bool with_actions = true;
  std::size_t separators = 2;  // N_sep, fixed
  // Length used by the target position S_L + 1. Zero means "the stream's
  // own length"; a larger value models a padded maximum length.
  std::size_t position_horizon = 0;

  void validate() const;

  friend bool operator==(const StreamSpec&, const StreamSpec&) = default;
};

// S_L = M + T + K + N_sep, or M + 2T + K + N_sep with actions.
std::size_t stream_length(const StreamSpec& spec);

struct HistoryEvent {
  std::size_t item = 0;
  std::size_t action = 0;

  friend bool operator==(const HistoryEvent&, const HistoryEvent&) = default;
};

// One interaction sequence: the unit of the line-delimited dataset format.
struct Record {
  std::vector<std::size_t> fields;
  std::vector<HistoryEvent> history;
  std::vector<std::size_t> targets;
  // Same length as targets; nullopt for unlabeled candidates.
  std::vector<std::optional<std::size_t>> target_actions;

  friend bool operator==(const Record&, const Record&) = default;
};

inline constexpr std::int64_t kNoLabel = -1;

struct TokenStream {
  StreamSpec spec;
  std::vector<std::size_t> ids;  // row in the table selected by the type
  std::vector<TokenType> types;
  std::vector<std::size_t> positions;
  std::vector<std::uint8_t> loss_mask;
  std::vector<std::int64_t> labels;  // kNoLabel where unsupervised

  std::size_t size() const { return ids.size(); }
  std::vector<std::size_t> loss_indices() const;
  std::vector<std::size_t> supervised_labels() const;
  std::vector<std::size_t> indices_of(TokenType t) const;

  friend bool operator==(const TokenStream&, const TokenStream&) = default;
};

// Layout [fields, sep, (s_1, a_1, ..., s_T, a_T), sep, targets].
// Positions: 0 for fields, t for the t-th event (item and action share it),
// each separator copies its predecessor, S_L + 1 for every target.
// User-centric supervises every item (label a_t) plus labeled targets;
// new-impression-only supervises labeled targets only.
TokenStream build_stream(const StreamSpec& spec, std::span<const std::size_t> fields,
                         std::span<const HistoryEvent> history,
                         std::span<const std::size_t> targets,
                         std::span<const std::optional<std::size_t>> target_actions,
                         SupervisionMode mode);

// Convenience overload. include_fields=false drops the static prefix (M=0).
TokenStream build_stream(const Record& record, SupervisionMode mode, bool with_actions = true,
                         bool include_fields = true);

struct EmbeddingTables {
  Matrix field;   // field vocabulary x d
  Matrix item;    // item vocabulary x d (history items and targets)
  Matrix action;  // A x d
  Matrix sep;     // 1 x d
};

// Table index per ad::gather convention: 0 field, 1 item, 2 action, 3 sep.
std::vector<ad::TableRow> embedding_refs(const TokenStream& stream);

// X0 row i = embedding of token i. Throws DataError on out-of-range ids.
Matrix embed_stream(const TokenStream& stream, const EmbeddingTables& tables);

// Text round-trip of a TokenStream (one line).
std::string serialize_stream(const TokenStream& stream);
TokenStream parse_stream(std::string_view line);

// Dataset records.
// `user_fields: 3,7 | history: 5:0,9:2 | targets: 11:1,12`
std::string format_record(const Record& r);
Record parse_record(std::string_view line);
// JSON mirror: {"user_fields":[..],"history":[[item,action],..],"targets":[..],"target_actions":[a|null,..]}
std::string format_record_json(const Record& r);
Record parse_record_json(std::string_view line);

std::vector<Record> read_records(std::istream& in);
void write_records(std::ostream& out, std::span<const Record> records);

}  // namespace tokenformer
