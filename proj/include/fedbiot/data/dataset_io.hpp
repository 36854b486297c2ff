#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "fedbiot/data/tasks.hpp"

namespace fedbiot {

// Line-oriented dataset text format:
//
//   # fedbiot-dataset v1
//   <category>\t<space-separated token ids>\t<mask as a string of 0/1>
//
// one sample per line.
inline constexpr const char* kDatasetHeader = "# fedbiot-dataset v1";

inline void write_dataset(std::ostream& os, const Dataset& data) {
  os << kDatasetHeader << '\n';
  for (const Sample& s : data) {
    os << to_string(s.category) << '\t';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) os << (i ? " " : "") << s.tokens[i];
    os << '\t';
    for (auto m : s.gt_mask) os << (m ? '1' : '0');
    os << '\n';
  }
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetHeader) throw FileError("dataset: missing header line");
  Dataset out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string category, ids, mask;
    if (!std::getline(fields, category, '\t') || !std::getline(fields, ids, '\t') || !std::getline(fields, mask)) {
      throw FileError("dataset line " + std::to_string(lineno) + ": expected three tab-separated fields");
    }
    Sample s;
    try {
      s.category = parse_task(category);
    } catch (const ConfigError& e) {
      throw FileError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    std::istringstream is_ids(ids);
    for (int id; is_ids >> id;) s.tokens.push_back(id);
    for (char c : mask) {
      if (c != '0' && c != '1') throw FileError("dataset line " + std::to_string(lineno) + ": bad mask character");
      s.gt_mask.push_back(c == '1');
    }
    if (s.tokens.size() != s.gt_mask.size() || s.tokens.size() < 2) {
      throw FileError("dataset line " + std::to_string(lineno) + ": token and mask lengths differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw FileError("cannot write " + path);
  write_dataset(os, data);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FileError("cannot read " + path);
  return read_dataset(is);
}

}  // namespace fedbiot
