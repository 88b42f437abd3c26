#pragma once

// Plain hierarchical key-value text:
//
//   # comment
//   [section.sub]
//   key = 1.5
//   name = "text"          (quotes optional for single words)
//   list = [1, 2, 3]
//   flag = true
//
// Keys are addressed by their full dotted path ("section.sub.key"). Every
// accessor marks the key as consumed so that unknown keys can be reported.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace saarisk {

class Config {
 public:
  // Throws kConfig with the offending line number.
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const;
  bool has_section(const std::string& prefix) const;

  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  // Keys never read through an accessor.
  std::vector<std::string> unconsumed() const;

  const std::string& text() const noexcept { return text_; }

 private:
  struct Entry {
    bool is_array = false;
    std::vector<std::string> items;  // one item for scalars
    int line = 0;
  };
  const Entry& entry(const std::string& key) const;

  std::map<std::string, Entry> entries_;
  std::set<std::string> sections_;
  mutable std::set<std::string> consumed_;
  std::string text_;
};

// Writer for the same format. Numbers are printed in shortest round-trip form.
class ConfigWriter {
 public:
  void section(const std::string& name);
  void scalar(const std::string& key, double value);
  void scalar(const std::string& key, std::int64_t value);
  void scalar(const std::string& key, const std::string& value);
  void array(const std::string& key, const std::vector<double>& values);
  void array(const std::string& key, const std::vector<std::string>& values);

  const std::string& str() const noexcept { return out_; }

 private:
  std::string out_;
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace saarisk
