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

#include "tokenformer/token_stream.hpp"

#include <charconv>
#include <istream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "tokenformer/errors.hpp"

namespace tokenformer {

char token_type_code(TokenType t) {
  switch (t) {
    case TokenType::Field: return 'F';
    case TokenType::Sep: return 'S';
    case TokenType::Item: return 'I';
    case TokenType::Action: return 'A';
    case TokenType::Target: return 'T';
  }
  return '?';
}

namespace {

TokenType token_type_from_code(char c) {
  switch (c) {
    case 'F': return TokenType::Field;
    case 'S': return TokenType::Sep;
    case 'I': return TokenType::Item;
    case 'A': return TokenType::Action;
    case 'T': return TokenType::Target;
    default: throw DataError(std::string("unknown token type code '") + c + "'");
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

template <typename T>
T parse_int(std::string_view s, std::string_view what) {
  s = trim(s);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  }
  return v;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace

std::string_view to_string(SupervisionMode m) {
  return m == SupervisionMode::UserCentric ? "user_centric" : "new_impression_only";
}

SupervisionMode parse_supervision_mode(std::string_view s) {
  if (s == "user_centric") return SupervisionMode::UserCentric;
  if (s == "new_impression_only") return SupervisionMode::NewImpressionOnly;
  throw ConfigError("unknown supervision mode '" + std::string(s) + "'");
}

void StreamSpec::validate() const {
  if (targets < 1) throw DataError("StreamSpec: at least one target required (K >= 1)");
  if (separators != 2) throw DataError("StreamSpec: separator count is fixed at 2");
  if (position_horizon != 0 && position_horizon < stream_length(*this)) {
    throw DataError("StreamSpec: position horizon shorter than the stream");
  }
}

std::size_t stream_length(const StreamSpec& spec) {
  const std::size_t seq = spec.with_actions ? 2 * spec.history : spec.history;
  return spec.fields + seq + spec.targets + spec.separators;
}

std::vector<std::size_t> TokenStream::loss_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < loss_mask.size(); ++i)
    if (loss_mask[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> TokenStream::supervised_labels() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < loss_mask.size(); ++i)
    if (loss_mask[i]) out.push_back(static_cast<std::size_t>(labels[i]));
  return out;
}

std::vector<std::size_t> TokenStream::indices_of(TokenType t) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < types.size(); ++i)
    if (types[i] == t) out.push_back(i);
  return out;
}

TokenStream build_stream(const StreamSpec& spec, std::span<const std::size_t> fields,
                         std::span<const HistoryEvent> history,
                         std::span<const std::size_t> targets,
                         std::span<const std::optional<std::size_t>> target_actions,
                         SupervisionMode mode) {
  if (targets.empty()) throw DataError("build_stream: empty targets");
  spec.validate();
  if (fields.size() != spec.fields || history.size() != spec.history ||
      targets.size() != spec.targets || target_actions.size() != targets.size()) {
    std::ostringstream os;
    os << "build_stream: lengths (fields " << fields.size() << ", history " << history.size()
       << ", targets " << targets.size() << ", target labels " << target_actions.size()
       << ") do not match spec (M=" << spec.fields << ", T=" << spec.history
       << ", K=" << spec.targets << ")";
    throw DataError(os.str());
  }

  const std::size_t len = stream_length(spec);
  const std::size_t horizon = spec.position_horizon == 0 ? len : spec.position_horizon;
  TokenStream s;
  s.spec = spec;
  s.ids.reserve(len);
  auto push = [&](TokenType t, std::size_t id, std::size_t pos, std::int64_t label) {
    s.types.push_back(t);
    s.ids.push_back(id);
    s.positions.push_back(pos);
    s.loss_mask.push_back(label != kNoLabel ? 1 : 0);
    s.labels.push_back(label);
  };

  for (std::size_t f : fields) push(TokenType::Field, f, 0, kNoLabel);
  push(TokenType::Sep, 0, 0, kNoLabel);
  const bool dense = mode == SupervisionMode::UserCentric;
  for (std::size_t t = 0; t < history.size(); ++t) {
    const std::size_t pos = t + 1;
    push(TokenType::Item, history[t].item, pos,
         dense ? static_cast<std::int64_t>(history[t].action) : kNoLabel);
    if (spec.with_actions) push(TokenType::Action, history[t].action, pos, kNoLabel);
  }
  push(TokenType::Sep, 0, history.size(), kNoLabel);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const std::int64_t label =
        target_actions[k] ? static_cast<std::int64_t>(*target_actions[k]) : kNoLabel;
    push(TokenType::Target, targets[k], horizon + 1, label);
  }
  return s;
}

TokenStream build_stream(const Record& r, SupervisionMode mode, bool with_actions,
                         bool include_fields) {
  StreamSpec spec;
  spec.fields = include_fields ? r.fields.size() : 0;
  spec.history = r.history.size();
  spec.targets = r.targets.size();
  spec.with_actions = with_actions;
  std::span<const std::size_t> fields = r.fields;
  if (!include_fields) fields = {};
  std::vector<std::optional<std::size_t>> labels = r.target_actions;
  if (labels.empty()) labels.resize(r.targets.size());
  return build_stream(spec, fields, r.history, r.targets, labels, mode);
}

std::vector<ad::TableRow> embedding_refs(const TokenStream& stream) {
  std::vector<ad::TableRow> refs;
  refs.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    std::size_t table = 0;
    switch (stream.types[i]) {
      case TokenType::Field: table = 0; break;
      case TokenType::Item:
      case TokenType::Target: table = 1; break;
      case TokenType::Action: table = 2; break;
      case TokenType::Sep: table = 3; break;
    }
    refs.push_back({table, table == 3 ? 0 : stream.ids[i]});
  }
  return refs;
}

Matrix embed_stream(const TokenStream& stream, const EmbeddingTables& tables) {
  const Matrix* by_index[] = {&tables.field, &tables.item, &tables.action, &tables.sep};
  const std::size_t d = tables.item.cols();
  Matrix x(stream.size(), d);
  const auto refs = embedding_refs(stream);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Matrix& tab = *by_index[refs[i].table];
    if (refs[i].row >= tab.rows()) {
      throw DataError("embed_stream: token " + std::to_string(i) + " id " +
                      std::to_string(refs[i].row) + " outside vocabulary of " +
                      std::to_string(tab.rows()));
    }
    if (tab.cols() != d) throw ShapeError("embed_stream: embedding tables differ in width");
    auto src = tab.row(refs[i].row);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return x;
}

std::string serialize_stream(const TokenStream& s) {
  std::string types;
  for (auto t : s.types) types += token_type_code(t);
  std::ostringstream os;
  os << "spec=" << s.spec.fields << ',' << s.spec.history << ',' << s.spec.targets << ','
     << (s.spec.with_actions ? 1 : 0) << ',' << s.spec.separators << ','
     << s.spec.position_horizon;
  os << ";types=" << types;
  os << ";ids=" << join(s.ids, [](std::size_t v) { return std::to_string(v); });
  os << ";positions=" << join(s.positions, [](std::size_t v) { return std::to_string(v); });
  os << ";loss=";
  for (auto m : s.loss_mask) os << (m ? '1' : '0');
  os << ";labels=" << join(s.labels, [](std::int64_t v) { return std::to_string(v); });
  return os.str();
}

TokenStream parse_stream(std::string_view line) {
  TokenStream s;
  for (std::string_view part : split(trim(line), ';')) {
    const std::size_t eq = part.find('=');
    if (eq == std::string_view::npos) throw DataError("parse_stream: missing '=' in segment");
    const std::string_view key = part.substr(0, eq);
    const std::string_view val = part.substr(eq + 1);
    auto ints = [&](auto& out) {
      using T = typename std::decay_t<decltype(out)>::value_type;
      if (val.empty()) return;
      for (auto tok : split(val, ',')) out.push_back(parse_int<T>(tok, key));
    };
    if (key == "spec") {
      std::vector<std::size_t> v;
      ints(v);
      if (v.size() != 6) throw DataError("parse_stream: spec needs 6 values");
      s.spec = StreamSpec{v[0], v[1], v[2], v[3] != 0, v[4], v[5]};
    } else if (key == "types") {
      for (char c : val) s.types.push_back(token_type_from_code(c));
    } else if (key == "ids") {
      ints(s.ids);
    } else if (key == "positions") {
      ints(s.positions);
    } else if (key == "loss") {
      for (char c : val) s.loss_mask.push_back(c == '1' ? 1 : 0);
    } else if (key == "labels") {
      ints(s.labels);
    } else {
      throw DataError("parse_stream: unknown key '" + std::string(key) + "'");
    }
  }
  const std::size_t n = s.types.size();
  if (s.ids.size() != n || s.positions.size() != n || s.loss_mask.size() != n ||
      s.labels.size() != n || n != stream_length(s.spec)) {
    throw DataError("parse_stream: inconsistent lengths");
  }
  return s;
}

std::string format_record(const Record& r) {
  std::string out = "user_fields: ";
  out += join(r.fields, [](std::size_t v) { return std::to_string(v); });
  out += " | history: ";
  out += join(r.history, [](const HistoryEvent& e) {
    return std::to_string(e.item) + ":" + std::to_string(e.action);
  });
  out += " | targets: ";
  for (std::size_t k = 0; k < r.targets.size(); ++k) {
    if (k) out += ',';
    out += std::to_string(r.targets[k]);
    if (k < r.target_actions.size() && r.target_actions[k]) {
      out += ':' + std::to_string(*r.target_actions[k]);
    }
  }
  return out;
}

Record parse_record(std::string_view line) {
  Record r;
  const auto parts = split(trim(line), '|');
  if (parts.size() != 3) throw DataError("parse_record: expected 3 '|' separated sections");
  const char* keys[] = {"user_fields", "history", "targets"};
  for (std::size_t p = 0; p < 3; ++p) {
    std::string_view sec = trim(parts[p]);
    const std::size_t colon = sec.find(':');
    if (colon == std::string_view::npos || trim(sec.substr(0, colon)) != keys[p]) {
      throw DataError(std::string("parse_record: expected section '") + keys[p] + "'");
    }
    const std::string_view body = trim(sec.substr(colon + 1));
    if (body.empty()) continue;
    for (auto tok : split(body, ',')) {
      tok = trim(tok);
      if (p == 0) {
        r.fields.push_back(parse_int<std::size_t>(tok, "field id"));
      } else if (p == 1) {
        const std::size_t c = tok.find(':');
        if (c == std::string_view::npos) throw DataError("parse_record: history needs item:action");
        r.history.push_back({parse_int<std::size_t>(tok.substr(0, c), "item id"),
                             parse_int<std::size_t>(tok.substr(c + 1), "action id")});
      } else {
        const std::size_t c = tok.find(':');
        if (c == std::string_view::npos) {
          r.targets.push_back(parse_int<std::size_t>(tok, "target id"));
          r.target_actions.push_back(std::nullopt);
        } else {
          r.targets.push_back(parse_int<std::size_t>(tok.substr(0, c), "target id"));
          r.target_actions.push_back(parse_int<std::size_t>(tok.substr(c + 1), "target action"));
        }
      }
    }
  }
  return r;
}

std::string format_record_json(const Record& r) {
  nlohmann::json j;
  j["user_fields"] = r.fields;
  auto hist = nlohmann::json::array();
  for (const auto& e : r.history) hist.push_back({e.item, e.action});
  j["history"] = hist;
  j["targets"] = r.targets;
  auto acts = nlohmann::json::array();
  for (const auto& a : r.target_actions) {
    if (a) {
      acts.push_back(*a);
    } else {
      acts.push_back(nullptr);
    }
  }
  j["target_actions"] = acts;
  return j.dump();
}

Record parse_record_json(std::string_view line) {
  Record r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.fields = j.at("user_fields").get<std::vector<std::size_t>>();
    for (const auto& e : j.at("history")) {
      r.history.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
    }
    r.targets = j.at("targets").get<std::vector<std::size_t>>();
    if (j.contains("target_actions")) {
      for (const auto& a : j.at("target_actions")) {
        r.target_actions.push_back(a.is_null() ? std::nullopt
                                               : std::optional<std::size_t>(a.get<std::size_t>()));
      }
    } else {
      r.target_actions.resize(r.targets.size());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("parse_record_json: ") + e.what());
  }
  if (r.target_actions.size() != r.targets.size()) {
    throw DataError("parse_record_json: target_actions length differs from targets");
  }
  return r;
}

std::vector<Record> read_records(std::istream& in) {
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    try {
      out.push_back(t.front() == '{' ? parse_record_json(t) : parse_record(t));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_records(std::ostream& out, std::span<const Record> records) {
  for (const auto& r : records) out << format_record(r) << '\n';
}

}  // namespace tokenformer
