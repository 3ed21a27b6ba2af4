#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <unordered_set>
#include <vector>

#include "aot/errors.hpp"
#include "aot/geometry.hpp"
#include "aot/storage.hpp"

namespace aot {

// Ground-truth instances of one object class named in the question. The
// instance count defends the duplication check; it defaults to the number
// of annotated boxes.
struct TargetInstance {
  std::string name;
  std::vector<BBox> boxes;
  int count = 0;

  int effective_count() const {
    return count > 0 ? count : static_cast<int>(boxes.size());
  }
};

// One VQA item: image reference, question, answer letter, target boxes.
struct SampleRecord {
  std::string id;
  std::string image;  // path, relative to the dataset file's directory
  std::string question;
  char answer = 'A';
  std::map<char, std::string> options;
  std::vector<TargetInstance> targets;

  std::vector<BBox> all_target_boxes() const {
    std::vector<BBox> boxes;
    for (const auto& t : targets)
      boxes.insert(boxes.end(), t.boxes.begin(), t.boxes.end());
    return boxes;
  }
};

inline nlohmann::json sample_to_json(const SampleRecord& s) {
  nlohmann::json opts = nlohmann::json::object();
  for (const auto& [letter, text] : s.options) opts[std::string(1, letter)] = text;
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : s.targets) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : t.boxes) boxes.push_back(bbox_to_json(b));
    targets.push_back({{"name", t.name},
                       {"boxes", std::move(boxes)},
                       {"count", t.effective_count()}});
  }
  return {{"id", s.id},          {"image", s.image},
          {"question", s.question}, {"answer", std::string(1, s.answer)},
          {"options", std::move(opts)}, {"targets", std::move(targets)}};
}

inline SampleRecord sample_from_json(const nlohmann::json& j) {
  SampleRecord s;
  try {
    s.id = j.at("id").get<std::string>();
    s.image = j.at("image").get<std::string>();
    s.question = j.at("question").get<std::string>();
    const std::string answer = j.at("answer").get<std::string>();
    if (answer.size() != 1 || answer[0] < 'A' || answer[0] > 'Z')
      throw StorageError("sample " + s.id + ": answer must be a capital letter");
    s.answer = answer[0];
    for (const auto& [key, value] : j.at("options").items()) {
      if (key.size() != 1 || key[0] < 'A' || key[0] > 'Z')
        throw StorageError("sample " + s.id + ": bad option key " + key);
      s.options[key[0]] = value.get<std::string>();
    }
    for (const auto& tj : j.at("targets")) {
      TargetInstance t;
      t.name = tj.at("name").get<std::string>();
      for (const auto& bj : tj.at("boxes")) t.boxes.push_back(bbox_from_json(bj));
      if (tj.contains("count")) t.count = tj["count"].get<int>();
      if (t.boxes.empty())
        throw StorageError("sample " + s.id + ": target without boxes");
      s.targets.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw StorageError(std::string("bad sample record: ") + e.what());
  }
  if (!s.options.count(s.answer))
    throw StorageError("sample " + s.id + ": answer not among options");
  return s;
}

inline std::vector<SampleRecord> load_dataset(
    const std::filesystem::path& path) {
  std::vector<SampleRecord> records;
  std::unordered_set<std::string> seen;
  for (const auto& row : read_jsonl(path)) {
    SampleRecord s = sample_from_json(row);
    if (!seen.insert(s.id).second)
      throw StorageError("duplicate sample id: " + s.id);
    records.push_back(std::move(s));
  }
  return records;
}

inline void save_dataset(const std::filesystem::path& path,
                         const std::vector<SampleRecord>& records) {
  std::string body;
  for (const auto& s : records) body += sample_to_json(s).dump() + "\n";
  atomic_write(path, body);
}

}  // namespace aot
