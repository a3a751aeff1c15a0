#include "samic/config.hpp"

#define TOML_ENABLE_FORMATTERS 0
#include <toml.hpp>

#include <set>

namespace samic {
namespace {

nlohmann::json from_toml(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [key, value] : *t) out[std::string(key.str())] = from_toml(value);
    return out;
  }
  if (const auto* a = node.as_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& value : *a) out.push_back(from_toml(value));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  throw ConfigError("unsupported TOML value type (dates and times are not config values)");
}

}  // namespace

nlohmann::json parse_toml(const std::string& text) {
  try {
    return from_toml(toml::parse(text));
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("TOML: ") + std::string(e.description()) + " at line " +
                      std::to_string(e.source().begin.line));
  }
}

nlohmann::json load_config_document(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  const std::string text = read_file(path);
  if (path.extension() == ".toml") return parse_toml(text);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig apply_config(const nlohmann::json& doc, RunConfig c) {
  if (!doc.is_object()) throw ConfigError("config document must be a table/object");
  static const std::set<std::string> sections = {"net", "train", "heatmap", "segmenter", "data"};
  for (const auto& [key, value] : doc.items()) {
    if (!sections.contains(key)) throw ConfigError("unknown config section: " + key);
    if (!value.is_object()) throw ConfigError("config section " + key + " must be a table");
  }
  if (doc.contains("net")) c.net = net_config_from_json(doc["net"], c.net);
  if (doc.contains("train")) c.train = train_config_from_json(doc["train"], c.train);
  try {
    if (doc.contains("heatmap")) {
      const auto& h = doc["heatmap"];
      for (const auto& [key, value] : h.items()) {
        if (key != "sigma" && key != "tau" && key != "connectivity") throw ConfigError("unknown heatmap key: " + key);
      }
      c.heatmap.sigma = h.value("sigma", c.heatmap.sigma);
      c.heatmap.tau = h.value("tau", c.heatmap.tau);
      c.heatmap.connectivity = h.value("connectivity", c.heatmap.connectivity);
    }
    if (doc.contains("segmenter")) {
      const auto& s = doc["segmenter"];
      for (const auto& [key, value] : s.items()) {
        if (key != "backend") throw ConfigError("unknown segmenter key: " + key);
      }
      c.segmenter = s.value("backend", c.segmenter);
    }
    if (doc.contains("data")) {
      const auto& d = doc["data"];
      for (const auto& [key, value] : d.items()) {
        if (key != "manifest" && key != "benchmark") throw ConfigError("unknown data key: " + key);
      }
      if (d.contains("manifest")) c.manifest = d["manifest"].get<std::string>();
      c.benchmark = d.value("benchmark", c.benchmark);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.heatmap.validate();
  if (c.segmenter != "mock" && c.segmenter != "external") throw ConfigError("segmenter.backend must be mock or external");
  return c;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["net"] = to_json(c.net);
  j["train"] = to_json(c.train);
  j["heatmap"] = {{"sigma", c.heatmap.sigma}, {"tau", c.heatmap.tau}, {"connectivity", c.heatmap.connectivity}};
  j["segmenter"] = {{"backend", c.segmenter}};
  j["data"] = {{"manifest", c.manifest.string()}, {"benchmark", c.benchmark}};
  return j;
}

}  // namespace samic
