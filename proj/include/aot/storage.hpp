#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>
#include <unordered_set>
#include <vector>

#include "aot/errors.hpp"
#include "aot/geometry.hpp"
#include "aot/hash.hpp"

namespace aot {

// Stable id-hash partition across shards: total and disjoint.
inline bool shard_filter(std::string_view id, int shard_index, int shard_count) {
  if (shard_count < 1 || shard_index < 0 || shard_index >= shard_count)
    throw ContractViolation("shard_filter: index must be in [0, count)");
  return fnv1a64(id) % static_cast<std::uint64_t>(shard_count) ==
         static_cast<std::uint64_t>(shard_index);
}

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

// Boxes serialize in corner form rounded to 2 decimals; model responses
// return integers but canvas transforms produce fractions.
inline nlohmann::json bbox_to_json(const BBox& b) {
  return nlohmann::json::array(
      {round2(b.x1), round2(b.y1), round2(b.x2), round2(b.y2)});
}

inline BBox bbox_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4)
    throw StorageError("box must be a 4-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

// Client-boundary conversion for detection responses that use
// [x, y, width, height].
inline BBox bbox_from_xywh(double x, double y, double w, double h) {
  return {x, y, x + w, y + h};
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot read: " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw StorageError(path.string() + ":" + std::to_string(line_no) +
                         ": bad JSONL row: " + e.what());
    }
  }
  return rows;
}

// Ids already present in a manifest; missing file means an empty manifest.
inline std::unordered_set<std::string> jsonl_ids(
    const std::filesystem::path& path, const std::string& key = "id") {
  std::unordered_set<std::string> ids;
  if (!std::filesystem::exists(path)) return ids;
  for (const auto& row : read_jsonl(path))
    if (row.contains(key)) ids.insert(row[key].get<std::string>());
  return ids;
}

// Serialized appender for JSONL record streams. Workers funnel rows through
// one writer; each row is flushed as a complete line.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path, bool append = true)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw StorageError("cannot open for writing: " + path.string());
  }

  void append(const nlohmann::json& row) {
    std::lock_guard lock(mu_);
    out_ << row.dump() << '\n';
    out_.flush();
    if (!out_) throw StorageError("write failed");
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// Staged write: content lands under a temporary name and is renamed into
// place, so readers never observe a partial file.
inline void atomic_write(const std::filesystem::path& path,
                         std::string_view content) {
  const std::filesystem::path tmp = path.string() + ".staging";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw StorageError("cannot open for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw StorageError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void atomic_write_json(const std::filesystem::path& path,
                              const nlohmann::json& j) {
  atomic_write(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot read: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw StorageError(path.string() + ": " + e.what());
  }
}

}  // namespace aot
