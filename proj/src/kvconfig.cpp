#include "diffma/kvconfig.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace diffma {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("kvconfig: missing '=' on line " +
                               std::to_string(lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("kvconfig: empty key on line " +
                               std::to_string(lineno));
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("kvconfig: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string KvConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : entries_) out << k << " = " << v << "\n";
  return out.str();
}

void KvConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("kvconfig: cannot write " + path);
  f << serialize();
}

bool KvConfig::has(const std::string& key) const {
  return entries_.count(key) != 0;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

void KvConfig::set_int(const std::string& key, long long value) {
  entries_[key] = std::to_string(value);
}

void KvConfig::set_double(const std::string& key, double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  entries_[key] = out.str();
}

void KvConfig::set_bool(const std::string& key, bool value) {
  entries_[key] = value ? "true" : "false";
}

const std::string& KvConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end())
    throw std::runtime_error("kvconfig: missing key '" + key + "'");
  return it->second;
}

std::string KvConfig::get_or(const std::string& key,
                             const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

long long KvConfig::get_int(const std::string& key) const {
  return std::stoll(get(key));
}

long long KvConfig::get_int_or(const std::string& key,
                               long long fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : std::stoll(it->second);
}

double KvConfig::get_double(const std::string& key) const {
  return std::stod(get(key));
}

double KvConfig::get_double_or(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : std::stod(it->second);
}

bool KvConfig::get_bool_or(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  return it->second == "true" || it->second == "1";
}

std::vector<std::string> KvConfig::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void KvConfig::merge(const KvConfig& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

std::uint64_t KvConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::string s = serialize();
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace diffma
