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
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tokenformer::kv {

// Flat `key = value` text, `#` comments, blank lines ignored. Duplicate keys
// and lines without '=' throw ConfigError naming the line.
std::map<std::string, std::string> parse(std::istream& in);
std::map<std::string, std::string> parse_file(const std::string& path);
void write(std::ostream& out, const std::map<std::string, std::string>& values);

// Typed field parsers; `key` only appears in error messages.
std::size_t to_size(std::string_view key, std::string_view v);
std::uint64_t to_u64(std::string_view key, std::string_view v);
double to_double(std::string_view key, std::string_view v);
bool to_bool(std::string_view key, std::string_view v);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::size_t> to_size_list(std::string_view key, std::string_view v);
std::vector<double> to_double_list(std::string_view key, std::string_view v);

// Shortest text that parses back to the same double.
std::string format_double(double v);
std::string trim(std::string_view s);

}  // namespace tokenformer::kv
