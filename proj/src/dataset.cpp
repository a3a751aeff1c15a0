#include "samic/dataset.hpp"

#include "samic/segmenter.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

namespace samic {
namespace {

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

ManifestError::ManifestError(std::vector<std::string> problems)
    : StorageError("invalid dataset manifest:\n  " + join(problems, "\n  ")), problems_(std::move(problems)) {}

std::vector<const DatasetItem*> DatasetIndex::items_in(const std::string& split) const {
  std::vector<const DatasetItem*> out;
  for (const auto& item : items) {
    if (item.split == split) out.push_back(&item);
  }
  return out;
}

std::vector<std::string> DatasetIndex::classes_in(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& c : classes) {
    const bool present = std::any_of(items.begin(), items.end(), [&](const DatasetItem& i) {
      return i.split == split && i.class_name == c;
    });
    if (present) out.push_back(c);
  }
  return out;
}

std::optional<BenchmarkLayout> benchmark_layout(const std::string& id) {
  if (id == "fss1000") return BenchmarkLayout{id, 520, 240, 240, 1000};
  if (id == "pascal5i") return BenchmarkLayout{id, 0, 0, 0, 20};
  if (id == "coco20i") return BenchmarkLayout{id, 0, 0, 0, 80};
  return std::nullopt;
}

DatasetIndex load_split_manifest(const std::filesystem::path& manifest, const std::string& benchmark) {
  std::optional<BenchmarkLayout> layout;
  if (!benchmark.empty()) {
    layout = benchmark_layout(benchmark);
    if (!layout) throw ConfigError("unknown benchmark id: " + benchmark);
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError({manifest.string() + ": " + e.what()});
  }

  DatasetIndex index;
  index.root = manifest.parent_path();
  index.frame_sampling = j.value("frame_sampling", "");
  std::vector<std::string> problems;
  if (!j.contains("classes") || !j["classes"].is_array()) problems.push_back("missing \"classes\" array");
  if (!j.contains("items") || !j["items"].is_array()) problems.push_back("missing \"items\" array");
  if (!problems.empty()) throw ManifestError(problems);

  index.classes = j["classes"].get<std::vector<std::string>>();
  const std::set<std::string> known(index.classes.begin(), index.classes.end());
  std::set<std::string> ids;
  std::map<std::string, std::set<std::string>> split_classes;
  for (const auto& e : j["items"]) {
    DatasetItem item;
    try {
      item.id = e.at("id").get<std::string>();
      item.class_name = e.at("class").get<std::string>();
      item.split = e.at("split").get<std::string>();
      item.image = index.root / e.at("image").get<std::string>();
      item.prompts = index.root / e.at("prompts").get<std::string>();
      item.mask = index.root / e.at("mask").get<std::string>();
      item.sequence = e.value("sequence", "");
      item.frame = e.value("frame", -1);
    } catch (const nlohmann::json::exception& ex) {
      problems.push_back("malformed item " + e.dump() + ": " + ex.what());
      continue;
    }
    if (!ids.insert(item.id).second) problems.push_back("duplicate item id: " + item.id);
    if (!known.contains(item.class_name)) problems.push_back(item.id + ": unknown class " + item.class_name);
    if (item.split != "train" && item.split != "val" && item.split != "test") {
      problems.push_back(item.id + ": unknown split " + item.split);
    }
    for (const auto* p : {&item.image, &item.prompts, &item.mask}) {
      if (!std::filesystem::exists(*p)) problems.push_back(item.id + ": missing file " + p->string());
    }
    split_classes[item.split].insert(item.class_name);
    index.items.push_back(std::move(item));
  }

  std::vector<std::string> overlap;
  std::set_intersection(split_classes["train"].begin(), split_classes["train"].end(), split_classes["test"].begin(),
                        split_classes["test"].end(), std::back_inserter(overlap));
  if (!overlap.empty()) problems.push_back("classes in both train and test splits: " + join(overlap, ", "));

  if (layout) {
    auto check = [&](const char* split, int expected) {
      const int got = static_cast<int>(split_classes[split].size());
      if (expected > 0 && got != expected) {
        problems.push_back(benchmark + ": expected " + std::to_string(expected) + " " + split + " classes, found " +
                           std::to_string(got));
      }
    };
    check("train", layout->train_classes);
    check("val", layout->val_classes);
    check("test", layout->test_classes);
    if (static_cast<int>(index.classes.size()) != layout->total_classes) {
      problems.push_back(benchmark + ": expected " + std::to_string(layout->total_classes) + " classes, found " +
                         std::to_string(index.classes.size()));
    }
  }
  if (!problems.empty()) throw ManifestError(problems);
  return index;
}

void write_manifest(const std::filesystem::path& manifest, const DatasetIndex& index) {
  const std::filesystem::path base = manifest.parent_path();
  nlohmann::ordered_json j;
  j["classes"] = index.classes;
  if (!index.frame_sampling.empty()) j["frame_sampling"] = index.frame_sampling;
  j["items"] = nlohmann::ordered_json::array();
  for (const auto& item : index.items) {
    nlohmann::ordered_json e{{"id", item.id},
                             {"class", item.class_name},
                             {"split", item.split},
                             {"image", std::filesystem::relative(item.image, base).generic_string()},
                             {"prompts", std::filesystem::relative(item.prompts, base).generic_string()},
                             {"mask", std::filesystem::relative(item.mask, base).generic_string()}};
    if (item.is_video()) {
      e["sequence"] = item.sequence;
      e["frame"] = item.frame;
    }
    j["items"].push_back(std::move(e));
  }
  write_file_atomic(manifest, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

namespace {

enum class Shape { Disk, Square, Triangle, Diamond, Ellipse, Cross, Hexagon };
constexpr int kShapeCount = 7;

// Point (dx,dy) relative to the shape centre, shape of "radius" r.
bool inside(Shape shape, double dx, double dy, double r) {
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  switch (shape) {
    case Shape::Disk: return dx * dx + dy * dy <= r * r;
    case Shape::Square: return ax <= 0.8 * r && ay <= 0.8 * r;
    case Shape::Triangle: return dy <= 0.7 * r && dy >= -r + 2.0 * ax;  // apex up
    case Shape::Diamond: return ax + ay <= r;
    case Shape::Ellipse: return (dx * dx) / (r * r) + (dy * dy) / (0.36 * r * r) <= 1.0;
    case Shape::Cross: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    case Shape::Hexagon: return ay <= 0.866 * r && 0.866 * ax + 0.5 * ay <= 0.866 * r;
  }
  return false;
}

// Quantized to 8 bits so PNG storage is lossless.
Eigen::Vector3f quantized(double r, double g, double b) {
  auto q = [](double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); };
  return {q(r), q(g), q(b)};
}

Eigen::Vector3f class_colour(int c, int classes) {
  // Evenly spaced saturated hues.
  const double h = 6.0 * static_cast<double>(c) / classes;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  return quantized(0.1 + 0.85 * r, 0.1 + 0.85 * g, 0.1 + 0.85 * b);
}

struct Placed {
  double cx, cy, r;
};

}  // namespace

DatasetIndex generate_synthetic_dataset(const std::filesystem::path& root, const SyntheticConfig& config) {
  if (config.classes < 2 || config.images_per_class < 2) throw ConfigError("synthetic dataset needs >= 2 classes and images");
  if (config.folds < 1 || config.folds > config.classes || config.test_fold < 0 || config.test_fold >= config.folds) {
    throw ConfigError("synthetic dataset: invalid fold settings");
  }
  for (const char* sub : {"images", "prompts", "masks"}) std::filesystem::create_directories(root / sub);

  // Contiguous class folds, remainder to the first folds.
  std::vector<int> fold_of(static_cast<std::size_t>(config.classes));
  {
    const int base = config.classes / config.folds;
    const int extra = config.classes % config.folds;
    int c = 0;
    for (int f = 0; f < config.folds; ++f) {
      for (int k = 0; k < base + (f < extra ? 1 : 0); ++k) fold_of[static_cast<std::size_t>(c++)] = f;
    }
  }

  DatasetIndex index;
  index.root = root;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double scale = std::min(config.height, config.width) / 224.0;

  for (int c = 0; c < config.classes; ++c) {
    const std::string cname = "class" + std::to_string(c);
    index.classes.push_back(cname);
    for (int n = 0; n < config.images_per_class; ++n) {
      RgbImage img(config.height, config.width);
      const double grey = 0.25 + 0.4 * unit(rng);
      const Eigen::Vector3f bg = quantized(grey + 0.06 * (unit(rng) - 0.5), grey + 0.06 * (unit(rng) - 0.5),
                                           grey + 0.06 * (unit(rng) - 0.5));
      img.pixels.colwise() = bg;

      // The object first, then distractors of other classes without overlap.
      std::vector<std::pair<int, Placed>> objects;
      std::uniform_int_distribution<int> other(0, config.classes - 2);
      const int distractors = std::uniform_int_distribution<int>(1, std::max(1, config.max_distractors))(rng);
      for (int k = 0; k <= distractors; ++k) {
        const int cls = k == 0 ? c : [&] { const int o = other(rng); return o >= c ? o + 1 : o; }();
        const double r = scale * (k == 0 ? 28.0 + 16.0 * unit(rng) : 20.0 + 14.0 * unit(rng));
        for (int attempt = 0; attempt < 200; ++attempt) {
          const double cx = r + 2 + unit(rng) * (config.width - 2 * r - 4);
          const double cy = r + 2 + unit(rng) * (config.height - 2 * r - 4);
          const bool clear = std::all_of(objects.begin(), objects.end(), [&](const auto& o) {
            return std::hypot(o.second.cx - cx, o.second.cy - cy) > o.second.r + r + 4.0 * scale;
          });
          if (clear) {
            objects.push_back({cls, {cx, cy, r}});
            break;
          }
        }
        if (k == 0 && objects.empty()) throw ConfigError("synthetic dataset: image too small for its object");
      }

      BinaryMask truth = BinaryMask::Zero(config.height, config.width);
      for (std::size_t k = 0; k < objects.size(); ++k) {
        const auto& [cls, p] = objects[k];
        const Shape shape = static_cast<Shape>(cls % kShapeCount);
        const Eigen::Vector3f colour = class_colour(cls, config.classes);
        for (int y = 0; y < config.height; ++y) {
          for (int x = 0; x < config.width; ++x) {
            if (!inside(shape, x - p.cx, y - p.cy, p.r)) continue;
            img.at(x, y) = colour;
            if (k == 0) truth(y, x) = 1;
          }
        }
      }
      double sx = 0, sy = 0;
      for (int y = 0; y < config.height; ++y) {
        for (int x = 0; x < config.width; ++x) {
          if (truth(y, x)) sx += x, sy += y;
        }
      }
      const double area = static_cast<double>(truth.cast<int>().sum());
      const PointPrompt centroid{std::round(sx / area), std::round(sy / area)};

      const std::string id = cname + "_" + (n < 10 ? "0" : "") + std::to_string(n);
      DatasetItem item;
      item.id = id;
      item.class_name = cname;
      item.split = fold_of[static_cast<std::size_t>(c)] == config.test_fold ? "test" : "train";
      item.image = root / "images" / (id + ".png");
      item.prompts = root / "prompts" / (id + ".json");
      item.mask = root / "masks" / (id + ".png");

      const PromptSet prompts{id, {{centroid}}};
      const MockSegmenter mock;
      const SegmentationResult seg = segment_instances(mock, img, prompts);
      if ((seg.mask != truth).any()) throw DegenerateError("synthetic object is not a single flat region: " + id);
      write_png_rgb(item.image, img);
      write_png_mask(item.mask, seg.mask);
      write_file_atomic(item.prompts,
                        dump_prompt_record({prompts, config.height, config.width, seg.confidence, mock.id()}));
      index.items.push_back(std::move(item));
    }
  }
  write_manifest(root / "manifest.json", index);
  return index;
}

}  // namespace samic
