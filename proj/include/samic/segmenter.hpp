#pragma once

// Promptable segmenter gateway: backend interface, the deterministic mock
// backend, the HTTP plug-in backend, a content-addressed embedding cache,
// multi-instance union and k-means++ clustering of embeddings.

#include "samic/errors.hpp"
#include "samic/image.hpp"
#include "samic/prompts.hpp"

#include <Eigen/Core>

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace samic {

// C x h x w feature volume; row c of `grid` holds channel c in row-major (y, x) order.
struct ImageEmbedding {
  int channels = 0;
  int height = 0;
  int width = 0;
  Eigen::MatrixXf grid;
  std::string image_hash;
  std::string producer;
};

struct SegmentationResult {
  BinaryMask mask;
  double confidence = 0.0;
  std::vector<PointPrompt> prompts;
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  [[nodiscard]] virtual std::string id() const = 0;
  // All candidate masks for one prompt group; at least one.
  [[nodiscard]] virtual std::vector<SegmentationResult> segment_candidates(
      const RgbImage& image, std::span<const PointPrompt> points) const = 0;
  [[nodiscard]] virtual ImageEmbedding embed(const RgbImage& image) const = 0;
};

// Validates the prompts and returns the highest-confidence candidate.
SegmentationResult segment(const Segmenter& backend, const RgbImage& image, std::span<const PointPrompt> points);

// One segment() call per instance group; mask = pixel-wise OR, confidence = min over groups.
SegmentationResult segment_instances(const Segmenter& backend, const RgbImage& image, const PromptSet& prompts);

// Deterministic stand-in for a promptable foundation segmenter on flat-coloured scenes.
//  * Region of a point: 4-connected flood fill over pixels whose colour is within
//    1/255 (max over channels) of the point's pixel colour.
//  * Mask: union of the regions hit by the points.
//  * Confidence: 1.01 * (1 - exp(-n)) for n points, divided by the number of
//    distinct regions hit, and scaled by 0.1 when one of them is the background
//    (the region containing pixel (0,0)).
//  * Embedding: 6 x ceil(H/8) x ceil(W/8); per 8x8 patch the mean and the
//    standard deviation of each colour channel.
class MockSegmenter final : public Segmenter {
 public:
  static constexpr double kColorTolerance = 1.0 / 255.0;
  static constexpr int kPatch = 8;
  static constexpr int kChannels = 6;

  [[nodiscard]] std::string id() const override { return "mock"; }
  [[nodiscard]] std::vector<SegmentationResult> segment_candidates(
      const RgbImage& image, std::span<const PointPrompt> points) const override;
  [[nodiscard]] ImageEmbedding embed(const RgbImage& image) const override;

  static double confidence_for(std::size_t points, std::size_t regions, bool touches_background);
};

// Region containing pixel (x,y) under the mock's flood-fill rule.
BinaryMask flood_region(const RgbImage& image, int x, int y, double tolerance = MockSegmenter::kColorTolerance);

// Client for an external segmenter service speaking the plug-in protocol:
//   POST {url}/segment  {"image":{"height","width","rgb8":base64},"points":[[x,y],...]}
//        -> {"masks":[{"png":base64 8-bit mask,"score":s},...]}
//   POST {url}/embed    {"image":...} -> {"channels","height","width","data":base64 float32 LE}
class ExternalSegmenter final : public Segmenter {
 public:
  explicit ExternalSegmenter(std::string url);
  [[nodiscard]] std::string id() const override { return "external"; }
  [[nodiscard]] std::vector<SegmentationResult> segment_candidates(
      const RgbImage& image, std::span<const PointPrompt> points) const override;
  [[nodiscard]] ImageEmbedding embed(const RgbImage& image) const override;

 private:
  std::string url_;
};

// Backend selection: `name` is "mock" or "external". The SAMIC_SEGMENTER env var,
// when set, overrides `name`; the external backend reads its address from
// SAMIC_EXTERNAL_SEGMENTER_URL and throws BackendUnavailable when it is unset or unreachable.
std::unique_ptr<Segmenter> make_segmenter(const std::string& name);

// Hex SHA-256 over the image dimensions and its 8-bit quantised pixels.
std::string image_content_hash(const RgbImage& image);

// Content-addressed on-disk cache of embeddings: <hash>-<producer>.f32 (raw float32 LE)
// plus a <hash>-<producer>.json sidecar {"shape":[C,h,w],"producer":id,"hash":hex}.
// Safe for concurrent readers; inserts publish atomically via rename.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path directory);

  ImageEmbedding embed_image(const Segmenter& backend, const RgbImage& image);
  [[nodiscard]] bool contains(const std::string& image_hash, const std::string& producer) const;

  [[nodiscard]] std::size_t computations() const { return computations_.load(); }
  [[nodiscard]] std::size_t hits() const { return hits_.load(); }
  [[nodiscard]] const std::filesystem::path& directory() const { return dir_; }

 private:
  [[nodiscard]] std::filesystem::path stem(const std::string& hash, const std::string& producer) const;

  std::filesystem::path dir_;
  std::mutex write_mutex_;
  std::atomic<std::size_t> computations_{0};
  std::atomic<std::size_t> hits_{0};
};

struct ClusterResult {
  std::vector<int> assignment;  // per spatial position, row-major
  Eigen::MatrixXf centroids;    // C x n
  int iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations (until assignments stop changing, at most 100).
ClusterResult cluster_embedding(const ImageEmbedding& embedding, int clusters, std::uint64_t seed);

}  // namespace samic
