// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "auglocal/common.hpp"

namespace auglocal {

/// Sectioned key-value text:
///
///     # comment
///     version = 1
///     [network]
///     name = tinynet8
///     [unit.1]
///     kind = conv3x3
///
/// Section names may be dotted to express nesting. Keys before the first
/// header live in the unnamed root section. Order is preserved.
class TextDoc {
 public:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(std::string_view key) const {
      for (const auto& [k, v] : entries)
        if (k == key) return &v;
      return nullptr;
    }

    Section& set(std::string key, std::string value) {
      for (auto& [k, v] : entries)
        if (k == key) {
          v = std::move(value);
          return *this;
        }
      entries.emplace_back(std::move(key), std::move(value));
      return *this;
    }
  };

  TextDoc() { sections_.push_back(Section{}); }

  static TextDoc parse(std::string_view text) {
    TextDoc doc;
    Section* cur = &doc.sections_.front();
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      std::string_view line = trim(text.substr(pos, eol - pos));
      pos = eol + 1;
      ++line_no;
      if (line.empty() || line.front() == '#') {
        if (eol == text.size()) break;
        continue;
      }
      if (line.front() == '[') {
        if (line.back() != ']') fail(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": unterminated section header");
        std::string name(trim(line.substr(1, line.size() - 2)));
        if (name.empty()) fail(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": empty section name");
        if (doc.find_section(name)) fail(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": duplicate section [" + name + "]");
        doc.sections_.push_back(Section{name, {}});
        cur = &doc.sections_.back();
      } else {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) fail(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) fail(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": empty key");
        if (cur->find(key)) fail(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        cur->entries.emplace_back(std::move(key), std::move(value));
      }
      if (eol == text.size()) break;
    }
    return doc;
  }

  static TextDoc load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  std::string emit() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& s : sections_) {
      if (s.name.empty()) {
        for (const auto& [k, v] : s.entries) os << k << " = " << v << '\n';
        first = s.entries.empty();
        continue;
      }
      if (!first) os << '\n';
      first = false;
      os << '[' << s.name << "]\n";
      for (const auto& [k, v] : s.entries) os << k << " = " << v << '\n';
    }
    return os.str();
  }

  Section& root() { return sections_.front(); }
  const Section& root() const { return sections_.front(); }

  Section& section(const std::string& name) {
    if (name.empty()) return root();
    if (auto* s = find_section(name)) return *s;
    sections_.push_back(Section{name, {}});
    return sections_.back();
  }

  Section* find_section(std::string_view name) {
    for (auto& s : sections_)
      if (s.name == name) return &s;
    return nullptr;
  }
  const Section* find_section(std::string_view name) const {
    for (const auto& s : sections_)
      if (s.name == name) return &s;
    return nullptr;
  }

  const std::vector<Section>& sections() const { return sections_; }
  std::vector<Section>& sections() { return sections_; }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

 private:
  std::vector<Section> sections_;
};

// Typed value conversions shared by every reader of the format.
namespace textvalue {

inline long long to_int(const std::string& s, const std::string& what) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorCode::ConfigError, what + ": expected integer, got '" + s + "'");
  return v;
}

inline double to_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) fail(ErrorCode::ConfigError, what + ": expected number, got '" + s + "'");
  return v;
}

inline bool to_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(ErrorCode::ConfigError, what + ": expected true/false, got '" + s + "'");
}

// Shortest representation that parses back to the same double.
inline std::string from_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string from_bool(bool b) { return b ? "true" : "false"; }

}  // namespace textvalue

}  // namespace auglocal
