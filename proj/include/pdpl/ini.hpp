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

#ifndef PDPL_INI_HPP_
#define PDPL_INI_HPP_

#include <map>
#include <string>
#include <vector>

namespace pdpl::ini {

/// Minimal INI reader: `[section]` headers, `key = value` lines, `#`/`;`
/// comments. Values may be scalars or comma-separated lists.
class IniFile {
 public:
  static IniFile parse(const std::string& text);
  static IniFile load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  long get_int(const std::string& section, const std::string& key,
               long fallback) const;
  std::vector<double> get_list(const std::string& section,
                               const std::string& key,
                               const std::vector<double>& fallback) const;

  /// Keys present in the file but never queried; used to reject typos.
  std::vector<std::string> unconsumed() const;

 private:
  const std::string* find(const std::string& section,
                          const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> consumed_;
};

}  // namespace pdpl::ini

#endif  // PDPL_INI_HPP_
