#pragma once

#include <map>
#include <set>
#include <string>

#include "core/common.h"

namespace artrec::config {

/// Flat "key = value" text with '#' comments. Unknown keys are hard errors:
/// the caller declares the full key set up front, and parse() rejects
/// anything outside it so misspelled hyperparameters cannot silently default.
class KeyValues {
 public:
  void declare(const std::string& key, const std::string& default_value);
  void parse_text(const std::string& text, const std::string& origin = "<config>");
  void parse_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  bool has_declared(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  int integer(const std::string& key) const;
  bool flag(const std::string& key) const;  // 0/1, true/false, yes/no

  // Canonical snapshot: sorted "key = value" lines.
  std::string snapshot() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> declared_;
};

}  // namespace artrec::config
