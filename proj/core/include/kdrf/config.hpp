#pragma once

#include <map>
#include <string>
#include <vector>

namespace kdrf {

// Flat key=value text ('#' starts a comment, blank lines ignored).
// Duplicate keys are rejected.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);
std::string serialize_kv(const std::map<std::string, std::string>& kv);

bool parse_bool(const std::string& key, const std::string& value);
long long parse_int(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);

// FNV-1a over the canonical serialized form; used as the config hash in
// checkpoint manifests.
std::uint64_t kv_hash(const std::map<std::string, std::string>& kv);

}  // namespace kdrf
