#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace protoadapt {

/// Ordered key=value text: one pair per line, '#' starts a comment.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, unsigned long long value);
  void set(const std::string& key, bool value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, unsigned value) { set(key, static_cast<unsigned long long>(value)); }
  void set(const std::string& key, unsigned long value) { set(key, static_cast<unsigned long long>(value)); }
  void set(const std::string& key, long value) { set(key, static_cast<long long>(value)); }

  bool contains(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::string require(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const& { return entries_; }
  // By value on temporaries, so `for (... : KeyValues::load(p).entries())` is safe.
  std::vector<std::pair<std::string, std::string>> entries() && { return std::move(entries_); }

  /// Keys present here but absent from `allowed`; used to reject typos.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& allowed) const;

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

double parse_double(const std::string& key, const std::string& text);
long long parse_int(const std::string& key, const std::string& text);
unsigned long long parse_uint(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::vector<double> parse_double_list(const std::string& key, const std::string& text);
std::string format_double_list(const std::vector<double>& values);

}  // namespace protoadapt
