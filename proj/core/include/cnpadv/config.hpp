#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cnpadv {

/// Flat `key = value` text config. Lines starting with '#' and blank lines
/// are ignored. Consumers must drain every key they accept and then call
/// finish(), which rejects unknown keys.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_text(const std::string& text);

  void set(const std::string& key, const std::string& value);  // override/add
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback);
  std::string require_string(const std::string& key);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback);
  std::vector<std::uint64_t> get_u64s(const std::string& key,
                                      std::vector<std::uint64_t> fallback);

  /// Throws ConfigError if any key was never consumed.
  void finish() const;

  /// Canonical `key = value` text, keys sorted (used for hashing).
  std::string canonical() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  mutable std::map<std::string, bool> consumed_;
  const std::string& fetch(const std::string& key);
};

/// FNV-1a 64-bit over the canonical config text, as a fixed-width hex string.
std::string spec_hash(const std::string& canonical_text);

}  // namespace cnpadv
