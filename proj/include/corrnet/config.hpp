#pragma once

// Flat key-value run configuration: "key = value" lines, '#' comments.
// Digests make runs joinable and reproducible: config_digest covers every
// key that affects results (seed included), cell_digest drops the seed so
// sweep cells group across seeds. "out" and timestamp keys never count.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace corrnet {

using FlatConfig = std::map<std::string, std::string>;

FlatConfig parse_config_text(const std::string& text);
FlatConfig load_config_file(const std::string& path);
std::string render_config(const FlatConfig& cfg);
void save_config_file(const FlatConfig& cfg, const std::string& path);

std::uint64_t fnv1a64(std::string_view bytes);

std::string config_digest(const FlatConfig& cfg);
std::string cell_digest(const FlatConfig& cfg);

// Typed getters. A present key must parse; a missing key yields the default.
std::string get_string(const FlatConfig& cfg, const std::string& key, const std::string& dflt);
std::uint64_t get_u64(const FlatConfig& cfg, const std::string& key, std::uint64_t dflt);
double get_double(const FlatConfig& cfg, const std::string& key, double dflt);
bool get_bool(const FlatConfig& cfg, const std::string& key, bool dflt);

void set_u64(FlatConfig& cfg, const std::string& key, std::uint64_t v);
void set_double(FlatConfig& cfg, const std::string& key, double v);
void set_bool(FlatConfig& cfg, const std::string& key, bool v);

// Round-trip-exact decimal rendering for doubles (shortest form).
std::string format_double(double v);

}  // namespace corrnet
