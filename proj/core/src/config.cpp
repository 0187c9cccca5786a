#include "kdrf/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kdrf {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
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
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw std::invalid_argument("duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str());
}

std::string serialize_kv(const std::map<std::string, std::string>& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  return os.str();
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("key '" + key + "': expected true/false, got '" + value + "'");
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("key '" + key + "': expected integer, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("key '" + key + "': expected unsigned integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("key '" + key + "': expected number, got '" + value + "'");
  }
}

std::uint64_t kv_hash(const std::map<std::string, std::string>& kv) {
  const std::string s = serialize_kv(kv);
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace kdrf
