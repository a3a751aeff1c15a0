#include "samic/prompts.hpp"

#include "samic/errors.hpp"

namespace samic {

std::vector<PointPrompt> PromptSet::flatten() const {
  std::vector<PointPrompt> out;
  for (const auto& group : instances) out.insert(out.end(), group.begin(), group.end());
  return out;
}

std::size_t PromptSet::point_count() const {
  std::size_t n = 0;
  for (const auto& group : instances) n += group.size();
  return n;
}

nlohmann::ordered_json to_json(const PromptRecord& record) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["image"] = record.prompts.image_id;
  j["size"] = {record.height, record.width};
  auto instances = nlohmann::ordered_json::array();
  for (const auto& group : record.prompts.instances) {
    auto pts = nlohmann::ordered_json::array();
    for (const auto& p : group) pts.push_back({p.x, p.y});
    instances.push_back(std::move(pts));
  }
  j["instances"] = std::move(instances);
  j["confidence"] = record.confidence;
  j["backend"] = record.backend;
  return j;
}

PromptRecord prompt_record_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw ArgumentError("unsupported prompt record version");
  PromptRecord r;
  r.prompts.image_id = j.at("image").get<std::string>();
  r.height = j.at("size").at(0).get<int>();
  r.width = j.at("size").at(1).get<int>();
  for (const auto& group : j.at("instances")) {
    std::vector<PointPrompt> pts;
    for (const auto& p : group) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    r.prompts.instances.push_back(std::move(pts));
  }
  r.confidence = j.at("confidence").get<double>();
  r.backend = j.at("backend").get<std::string>();
  return r;
}

std::string dump_prompt_record(const PromptRecord& record) { return to_json(record).dump() + "\n"; }

}  // namespace samic
