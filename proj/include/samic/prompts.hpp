#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace samic {

// A positive point prompt in pixel coordinates: x is the column, y the row.
struct PointPrompt {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

// Point prompts grouped per object instance, in submission order.
struct PromptSet {
  std::string image_id;
  std::vector<std::vector<PointPrompt>> instances;

  [[nodiscard]] std::vector<PointPrompt> flatten() const;
  [[nodiscard]] std::size_t point_count() const;
  [[nodiscard]] bool empty() const { return point_count() == 0; }
  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

// Persisted prompt record. Serialized (key order fixed) as
// {"version":1,"image":id,"size":[H,W],"instances":[[[x,y],...],...],"confidence":c,"backend":id}
struct PromptRecord {
  PromptSet prompts;
  int height = 0;
  int width = 0;
  double confidence = 0.0;
  std::string backend;
  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

nlohmann::ordered_json to_json(const PromptRecord& record);
PromptRecord prompt_record_from_json(const nlohmann::json& j);

// Compact single-line dump used for the on-disk prompt files.
std::string dump_prompt_record(const PromptRecord& record);

}  // namespace samic
