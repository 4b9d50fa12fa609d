#include "sslm/kvconfig.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sslm {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key=value, got '" + t + "'");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void KvConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path.string());
  out << to_string();
}

std::string KvConfig::to_string() const {
  std::string s;
  for (const auto& [k, v] : items_) {
    s += k;
    s += '=';
    s += v;
    s += '\n';
  }
  return s;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  items_.emplace_back(key, value);
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
  for (const auto& [k, v] : items_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    return std::stod(*v);
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not a number: " + *v);
  }
}

long long KvConfig::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    long long r = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument(*v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not an integer: " + *v);
  }
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

}  // namespace sslm
