#pragma once

// Dataset manifests, benchmark split validation and the synthetic flat-colour
// shape benchmark used for desk-scale training.

#include "samic/errors.hpp"
#include "samic/image.hpp"
#include "samic/prompts.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace samic {

struct DatasetItem {
  std::string id;
  std::string class_name;
  std::string split;  // "train", "val" or "test"
  std::filesystem::path image;
  std::filesystem::path prompts;
  std::filesystem::path mask;
  // Video items: sequence name and frame number (frame t-1 is the reference for frame t).
  std::string sequence;
  int frame = -1;

  [[nodiscard]] bool is_video() const { return !sequence.empty(); }
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<DatasetItem> items;  // paths resolved against root
  std::string frame_sampling;      // video frame selection, e.g. "stride:1"

  [[nodiscard]] std::vector<const DatasetItem*> items_in(const std::string& split) const;
  [[nodiscard]] std::vector<std::string> classes_in(const std::string& split) const;
};

// Every problem found while validating a manifest, not just the first one.
class ManifestError : public StorageError {
 public:
  explicit ManifestError(std::vector<std::string> problems);
  [[nodiscard]] const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Known benchmark layouts and their per-split class counts.
struct BenchmarkLayout {
  std::string id;
  int train_classes = 0;  // 0: not checked
  int val_classes = 0;
  int test_classes = 0;
  int total_classes = 0;  // fold-based benchmarks: classes across all splits
};
std::optional<BenchmarkLayout> benchmark_layout(const std::string& id);

// Manifest JSON: {"classes":[...],"items":[{"id","class","split","image","prompts","mask"}...]}
// with optional "sequence"/"frame" per item and a top-level "frame_sampling".
// Throws ManifestError listing all missing files, unknown classes, duplicate ids,
// train/test class overlap and (when `benchmark` is set) split-size mismatches.
DatasetIndex load_split_manifest(const std::filesystem::path& manifest, const std::string& benchmark = "");
void write_manifest(const std::filesystem::path& manifest, const DatasetIndex& index);

struct SyntheticConfig {
  int classes = 8;
  int images_per_class = 25;
  int height = 224;
  int width = 224;
  int folds = 4;
  int test_fold = 0;  // classes of this fold are marked "test", the rest "train"
  int max_distractors = 2;
  std::uint64_t seed = 2024;
};

// Writes images/, prompts/, masks/ and manifest.json under `root`. Each image holds
// one object of its class (a class-specific colour and shape) on a muted background
// plus distractors drawn from other classes. The prompt is the object's centroid;
// the mask is the mock segmenter's region for that prompt.
DatasetIndex generate_synthetic_dataset(const std::filesystem::path& root, const SyntheticConfig& config = {});

}  // namespace samic
