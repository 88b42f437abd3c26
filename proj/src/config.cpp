#include "saarisk/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "saarisk/error.hpp"

namespace saarisk {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(int line, const std::string& what) {
  throw Error(ErrorCode::kConfig, fmt::format("config line {}: {}", line, what));
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) {
      return false;
    }
  }
  return key.front() != '.' && key.back() != '.' && key.find("..") == std::string::npos;
}

std::string unquote(const std::string& token, int line) {
  if (token.size() >= 2 && token.front() == '"' && token.back() == '"') {
    return token.substr(1, token.size() - 2);
  }
  if (token.find('"') != std::string::npos) fail(line, "unbalanced quotes");
  if (token.empty()) fail(line, "empty value");
  return token;
}

std::vector<std::string> split_items(const std::string& inner, int line) {
  std::vector<std::string> items;
  std::string cur;
  bool quoted = false;
  for (char c : inner) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      items.push_back(unquote(trim(cur), line));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) fail(line, "unbalanced quotes");
  if (!trim(cur).empty()) {
    items.push_back(unquote(trim(cur), line));
  } else if (!items.empty()) {
    fail(line, "trailing comma in array");
  }
  return items;
}

double to_double(const std::string& s, const std::string& key, int line) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) fail(line, fmt::format("'{}' is not a number: {}", key, s));
  return v;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  cfg.text_ = text;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "section header must end with ']'");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section)) fail(line_no, fmt::format("invalid section name '{}'", section));
      cfg.sections_.insert(section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) fail(line_no, fmt::format("invalid key '{}'", key));
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(full)) fail(line_no, fmt::format("duplicate key '{}'", full));

    Entry e;
    e.line = line_no;
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']') fail(line_no, "array must end with ']'");
      e.is_array = true;
      e.items = split_items(value.substr(1, value.size() - 2), line_no);
    } else {
      e.items.push_back(unquote(value, line_no));
    }
    cfg.entries_.emplace(full, std::move(e));
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot read config file '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

bool Config::has_section(const std::string& prefix) const {
  if (sections_.count(prefix)) return true;
  const std::string dotted = prefix + ".";
  for (const auto& [k, v] : entries_) {
    if (k.rfind(dotted, 0) == 0) return true;
  }
  return false;
}

const Config::Entry& Config::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw Error(ErrorCode::kConfig, fmt::format("missing key '{}'", key));
  consumed_.insert(key);
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const Entry& e = entry(key);
  if (e.is_array) fail(e.line, fmt::format("'{}' must be a scalar", key));
  return to_double(e.items.front(), key, e.line);
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t Config::get_int(const std::string& key) const {
  const Entry& e = entry(key);
  if (e.is_array) fail(e.line, fmt::format("'{}' must be a scalar", key));
  std::int64_t v = 0;
  const std::string& s = e.items.front();
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(e.line, fmt::format("'{}' is not an integer: {}", key, s));
  }
  return v;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const Entry& e = entry(key);
  const std::string& s = e.items.front();
  if (e.is_array || (s != "true" && s != "false")) {
    fail(e.line, fmt::format("'{}' must be true or false", key));
  }
  return s == "true";
}

std::string Config::get_string(const std::string& key) const {
  const Entry& e = entry(key);
  if (e.is_array) fail(e.line, fmt::format("'{}' must be a scalar", key));
  return e.items.front();
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  const Entry& e = entry(key);
  std::vector<double> out;
  for (const std::string& s : e.items) out.push_back(to_double(s, key, e.line));
  return out;
}

std::vector<std::string> Config::get_strings(const std::string& key) const {
  return entry(key).items;
}

std::vector<std::string> Config::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (!consumed_.count(k)) out.push_back(k);
  }
  return out;
}

void ConfigWriter::section(const std::string& name) {
  if (!out_.empty()) out_ += "\n";
  out_ += fmt::format("[{}]\n", name);
}

void ConfigWriter::scalar(const std::string& key, double value) {
  out_ += fmt::format("{} = {}\n", key, value);
}

void ConfigWriter::scalar(const std::string& key, std::int64_t value) {
  out_ += fmt::format("{} = {}\n", key, value);
}

void ConfigWriter::scalar(const std::string& key, const std::string& value) {
  out_ += fmt::format("{} = \"{}\"\n", key, value);
}

void ConfigWriter::array(const std::string& key, const std::vector<double>& values) {
  out_ += fmt::format("{} = [{}]\n", key, fmt::join(values, ", "));
}

void ConfigWriter::array(const std::string& key, const std::vector<std::string>& values) {
  std::vector<std::string> quoted;
  for (const std::string& v : values) quoted.push_back("\"" + v + "\"");
  out_ += fmt::format("{} = [{}]\n", key, fmt::join(quoted, ", "));
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace saarisk
