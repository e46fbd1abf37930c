#include "corrnet/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace corrnet {

namespace {

void trim(std::string& s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) {
    s.pop_back();
  }
}

bool digest_skips(const std::string& key) {
  return key == "out" || key.rfind("ts_", 0) == 0;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::uint64_t digest_excluding(const FlatConfig& cfg, bool drop_seed) {
  std::string buf;
  for (const auto& [k, v] : cfg) {
    if (digest_skips(k)) continue;
    if (drop_seed && k == "seed") continue;
    buf += k;
    buf += '=';
    buf += v;
    buf += '\n';
  }
  return fnv1a64(buf);
}

}  // namespace

FlatConfig parse_config_text(const std::string& text) {
  FlatConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    trim(key);
    trim(val);
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    }
    cfg[key] = val;
  }
  return cfg;
}

FlatConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string render_config(const FlatConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void save_config_file(const FlatConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path);
  out << render_config(cfg);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_digest(const FlatConfig& cfg) { return hex64(digest_excluding(cfg, false)); }

std::string cell_digest(const FlatConfig& cfg) { return hex64(digest_excluding(cfg, true)); }

std::string get_string(const FlatConfig& cfg, const std::string& key, const std::string& dflt) {
  const auto it = cfg.find(key);
  return it == cfg.end() ? dflt : it->second;
}

std::uint64_t get_u64(const FlatConfig& cfg, const std::string& key, std::uint64_t dflt) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) return dflt;
  const std::string& s = it->second;
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw std::invalid_argument("config key " + key + ": not an unsigned integer: " + s);
  }
  return v;
}

double get_double(const FlatConfig& cfg, const std::string& key, double dflt) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) return dflt;
  const std::string& s = it->second;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": not a number: " + s);
  }
}

bool get_bool(const FlatConfig& cfg, const std::string& key, bool dflt) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) return dflt;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw std::invalid_argument("config key " + key + ": not a bool: " + s);
}

void set_u64(FlatConfig& cfg, const std::string& key, std::uint64_t v) {
  cfg[key] = std::to_string(v);
}

void set_double(FlatConfig& cfg, const std::string& key, double v) {
  cfg[key] = format_double(v);
}

void set_bool(FlatConfig& cfg, const std::string& key, bool v) { cfg[key] = v ? "true" : "false"; }

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: to_chars failed");
  return std::string(buf, p);
}

}  // namespace corrnet
