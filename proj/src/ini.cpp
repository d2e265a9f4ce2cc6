/*
 Copyright 2026 The pdpl authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include "pdpl/ini.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pdpl/common.hpp"

namespace pdpl::ini {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || trim(end).size() > 0) {
    throw ConfigError("bad numeric value '" + s + "' for " + where);
  }
  return v;
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
  IniFile out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("unterminated section header at line " +
                          std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected 'key = value' at line " +
                        std::to_string(lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("empty key at line " + std::to_string(lineno));
    }
    out.values_[section + "." + key] = value;
  }
  return out;
}

IniFile IniFile::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

const std::string* IniFile::find(const std::string& section,
                                 const std::string& key) const {
  const auto it = values_.find(section + "." + key);
  if (it == values_.end()) return nullptr;
  consumed_[it->first] = true;
  return &it->second;
}

bool IniFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

double IniFile::get_double(const std::string& section, const std::string& key,
                           double fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  return parse_double(*v, section + "." + key);
}

long IniFile::get_int(const std::string& section, const std::string& key,
                      long fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  const double d = parse_double(*v, section + "." + key);
  const long l = static_cast<long>(d);
  if (static_cast<double>(l) != d) {
    throw ConfigError("expected integer for " + section + "." + key);
  }
  return l;
}

std::vector<double> IniFile::get_list(const std::string& section,
                                      const std::string& key,
                                      const std::vector<double>& fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  std::vector<double> out;
  std::string item;
  std::istringstream in(*v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_double(item, section + "." + key));
  }
  if (out.empty()) throw ConfigError("empty list for " + section + "." + key);
  return out;
}

std::vector<std::string> IniFile::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : values_) {
    if (!consumed_.count(k)) out.push_back(k);
  }
  return out;
}

}  // namespace pdpl::ini
