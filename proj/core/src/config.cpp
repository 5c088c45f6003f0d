#include "cnpadv/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cnpadv/errors.hpp"

namespace cnpadv {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_text(buf.str());
}

KvConfig KvConfig::parse_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + stripped);
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
    cfg.entries_[key] = value;
  }
  return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

const std::string& KvConfig::fetch(const std::string& key) {
  consumed_[key] = true;
  return entries_.at(key);
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
  consumed_[key] = true;
  return has(key) ? entries_.at(key) : fallback;
}

std::string KvConfig::require_string(const std::string& key) {
  if (!has(key)) throw ConfigError("missing required config key: " + key);
  return fetch(key);
}

double KvConfig::get_double(const std::string& key, double fallback) {
  if (!has(key)) {
    consumed_[key] = true;
    return fallback;
  }
  const std::string& v = fetch(key);
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + v);
  }
}

int KvConfig::get_int(const std::string& key, int fallback) {
  if (!has(key)) {
    consumed_[key] = true;
    return fallback;
  }
  const std::string& v = fetch(key);
  try {
    std::size_t pos = 0;
    const int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: " + v);
  }
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) {
  if (!has(key)) {
    consumed_[key] = true;
    return fallback;
  }
  const std::string& v = fetch(key);
  try {
    std::size_t pos = 0;
    const std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an unsigned integer: " + v);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) {
  if (!has(key)) {
    consumed_[key] = true;
    return fallback;
  }
  const std::string& v = fetch(key);
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + v);
}

std::vector<double> KvConfig::get_doubles(const std::string& key,
                                          std::vector<double> fallback) {
  if (!has(key)) {
    consumed_[key] = true;
    return fallback;
  }
  std::vector<double> out;
  for (const std::string& item : split(fetch(key), ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a bad number: " + item);
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " has no values");
  return out;
}

std::vector<std::uint64_t> KvConfig::get_u64s(const std::string& key,
                                              std::vector<std::uint64_t> fallback) {
  if (!has(key)) {
    consumed_[key] = true;
    return fallback;
  }
  std::vector<std::uint64_t> out;
  for (const std::string& item : split(fetch(key), ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a bad integer: " + item);
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " has no values");
  return out;
}

void KvConfig::finish() const {
  for (const auto& [key, value] : entries_) {
    if (!consumed_.count(key)) {
      throw ConfigError("unknown config key: " + key);
    }
  }
}

std::string KvConfig::canonical() const {
  std::ostringstream os;
  for (const auto& [key, value] : entries_) {
    os << key << " = " << value << "\n";
  }
  return os.str();
}

std::string spec_hash(const std::string& canonical_text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical_text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cnpadv
