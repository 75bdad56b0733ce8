#pragma once

#include <map>
#include <string>
#include <vector>

namespace diffma {

/// Flat key-value configuration with dotted section names, stored as plain
/// text (`section.key = value`, '#' comments). Keys are kept sorted so run
/// snapshots diff cleanly.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(const std::string& text);
  static KvConfig load(const std::string& path);

  std::string serialize() const;
  void save(const std::string& path) const;

  bool has(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, long long value);
  void set_double(const std::string& key, double value);
  void set_bool(const std::string& key, bool value);

  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;

  std::vector<std::string> keys() const;

  /// Copy every entry of `other` into this config, overwriting duplicates.
  void merge(const KvConfig& other);

  /// FNV-1a hash over the sorted serialized entries; used as a cheap
  /// fingerprint for compatibility checks between artifacts.
  std::uint64_t fingerprint() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace diffma
