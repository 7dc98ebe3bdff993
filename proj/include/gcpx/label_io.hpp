#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"

namespace gcpx {

// Two-column CSV: a header line, then "instance_id,<label>" rows with ids
// 0..N-1 in any order.
inline std::string encode_label_csv(const std::vector<int>& labels, const std::string& column) {
  std::string out = "instance_id," + column + "\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
  return out;
}

inline std::vector<int> decode_label_csv(const std::vector<char>& bytes, const std::string& source) {
  const std::string text(bytes.begin(), bytes.end());
  std::vector<std::pair<long, int>> rows;
  std::size_t pos = 0;
  bool header = true;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    const std::size_t line_start = pos;
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line.rfind("instance_id,", 0) != 0) {
        throw FormatError(source + ": expected a header starting with 'instance_id,'", line_start);
      }
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    long id = 0;
    int label = 0;
    const char* b = line.data();
    const char* e = b + line.size();
    const bool ok = comma != std::string::npos && line.find(',', comma + 1) == std::string::npos &&
                    std::from_chars(b, b + comma, id).ptr == b + comma &&
                    std::from_chars(b + comma + 1, e, label).ptr == e && comma + 1 < line.size();
    if (!ok) throw FormatError(source + ": line " + std::to_string(line_no) + " is not 'id,label'", line_start);
    rows.emplace_back(id, label);
  }
  if (header) throw FormatError(source + ": empty label file", 0);
  std::vector<int> labels(rows.size(), 0);
  std::vector<bool> seen(rows.size(), false);
  for (const auto& [id, label] : rows) {
    if (id < 0 || id >= static_cast<long>(rows.size()) || seen[static_cast<std::size_t>(id)]) {
      throw DataError(source + ": instance ids must be a permutation of 0.." + std::to_string(rows.size() - 1));
    }
    seen[static_cast<std::size_t>(id)] = true;
    labels[static_cast<std::size_t>(id)] = label;
  }
  return labels;
}

inline void write_label_csv(const std::vector<int>& labels, const std::string& column,
                            const std::filesystem::path& path) {
  io::write_text(path, encode_label_csv(labels, column));
}

inline std::vector<int> read_label_csv(const std::filesystem::path& path) {
  return decode_label_csv(io::read_file(path), path.string());
}

}  // namespace gcpx
