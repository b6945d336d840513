#include "core/config.h"

#include <sstream>

#include "core/io.h"

namespace artrec::config {

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

void KeyValues::declare(const std::string& key, const std::string& default_value) {
  declared_.insert(key);
  values_[key] = default_value;
}

void KeyValues::parse_text(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(Err::Config, origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!declared_.count(key))
      fail(Err::Config, origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    values_[key] = value;
  }
}

void KeyValues::parse_file(const std::string& path) {
  parse_text(io::read_text_file(path), path);
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (!declared_.count(key)) fail(Err::Config, "unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& KeyValues::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(Err::Config, "undeclared key '" + key + "'");
  return it->second;
}

double KeyValues::num(const std::string& key) const {
  const std::string& s = str(key);
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(Err::Config, "key '" + key + "' is not a number: '" + s + "'");
  }
}

int KeyValues::integer(const std::string& key) const {
  double v = num(key);
  int i = (int)std::llround(v);
  if ((double)i != v) fail(Err::Config, "key '" + key + "' is not an integer");
  return i;
}

bool KeyValues::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  fail(Err::Config, "key '" + key + "' is not a flag: '" + s + "'");
}

std::string KeyValues::snapshot() const {
  std::ostringstream ss;
  for (const auto& [k, v] : values_) ss << k << " = " << v << "\n";
  return ss.str();
}

}  // namespace artrec::config
