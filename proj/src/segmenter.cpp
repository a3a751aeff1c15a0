#include "samic/segmenter.hpp"

#include "samic/codec.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <limits>
#include <random>
#include <set>

namespace samic {
namespace {

void validate_points(const RgbImage& image, std::span<const PointPrompt> points) {
  if (points.empty()) throw ArgumentError("segment: at least one point prompt is required");
  for (const auto& p : points) {
    if (!image.contains(p.x, p.y)) throw ArgumentError("segment: point outside the image bounds");
  }
}

}  // namespace

SegmentationResult segment(const Segmenter& backend, const RgbImage& image, std::span<const PointPrompt> points) {
  validate_points(image, points);
  auto candidates = backend.segment_candidates(image, points);
  if (candidates.empty()) throw BackendUnavailable(backend.id() + ": returned no masks");
  auto best = std::max_element(candidates.begin(), candidates.end(),
                               [](const auto& a, const auto& b) { return a.confidence < b.confidence; });
  SegmentationResult out = std::move(*best);
  if (out.mask.rows() != image.height || out.mask.cols() != image.width) {
    throw DimensionError(backend.id() + ": mask size differs from the image");
  }
  if (!std::isfinite(out.confidence)) throw BackendUnavailable(backend.id() + ": non-finite confidence");
  out.prompts.assign(points.begin(), points.end());
  return out;
}

SegmentationResult segment_instances(const Segmenter& backend, const RgbImage& image, const PromptSet& prompts) {
  std::vector<const std::vector<PointPrompt>*> groups;
  for (const auto& g : prompts.instances) {
    if (!g.empty()) groups.push_back(&g);
  }
  if (groups.empty()) throw ArgumentError("segment_instances: no non-empty instance group");
  SegmentationResult out;
  out.mask = BinaryMask::Zero(image.height, image.width);
  out.confidence = std::numeric_limits<double>::infinity();
  for (const auto* g : groups) {
    const SegmentationResult r = segment(backend, image, *g);
    out.mask = out.mask.max(r.mask);
    out.confidence = std::min(out.confidence, r.confidence);
    out.prompts.insert(out.prompts.end(), g->begin(), g->end());
  }
  return out;
}

BinaryMask flood_region(const RgbImage& image, int x, int y, double tolerance) {
  BinaryMask mask = BinaryMask::Zero(image.height, image.width);
  const Eigen::Vector3f seed = image.at(x, y);
  const float tol = static_cast<float>(tolerance) + 1e-6f;
  auto similar = [&](int px, int py) { return (image.at(px, py) - seed).cwiseAbs().maxCoeff() <= tol; };
  std::deque<std::pair<int, int>> queue{{x, y}};
  mask(y, x) = 1;
  constexpr int dx[4] = {1, -1, 0, 0};
  constexpr int dy[4] = {0, 0, 1, -1};
  while (!queue.empty()) {
    const auto [cx, cy] = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      const int nx = cx + dx[k];
      const int ny = cy + dy[k];
      if (nx < 0 || ny < 0 || nx >= image.width || ny >= image.height || mask(ny, nx)) continue;
      if (!similar(nx, ny)) continue;
      mask(ny, nx) = 1;
      queue.emplace_back(nx, ny);
    }
  }
  return mask;
}

double MockSegmenter::confidence_for(std::size_t points, std::size_t regions, bool touches_background) {
  double c = 1.01 * (1.0 - std::exp(-static_cast<double>(points)));
  c /= static_cast<double>(std::max<std::size_t>(regions, 1));
  if (touches_background) c *= 0.1;
  return c;
}

std::vector<SegmentationResult> MockSegmenter::segment_candidates(const RgbImage& image,
                                                                  std::span<const PointPrompt> points) const {
  validate_points(image, points);
  SegmentationResult r;
  r.mask = BinaryMask::Zero(image.height, image.width);
  std::size_t regions = 0;
  bool background = false;
  for (const auto& p : points) {
    const int x = static_cast<int>(std::floor(p.x));
    const int y = static_cast<int>(std::floor(p.y));
    if (r.mask(y, x)) continue;  // already inside a region found earlier
    const BinaryMask region = flood_region(image, x, y);
    ++regions;
    background = background || region(0, 0) != 0;
    r.mask = r.mask.max(region);
  }
  r.confidence = confidence_for(points.size(), regions, background);
  r.prompts.assign(points.begin(), points.end());
  return {std::move(r)};
}

ImageEmbedding MockSegmenter::embed(const RgbImage& image) const {
  ImageEmbedding e;
  e.channels = kChannels;
  e.height = (image.height + kPatch - 1) / kPatch;
  e.width = (image.width + kPatch - 1) / kPatch;
  e.producer = id();
  e.image_hash = image_content_hash(image);
  e.grid = Eigen::MatrixXf::Zero(kChannels, static_cast<Eigen::Index>(e.height) * e.width);
  for (int py = 0; py < e.height; ++py) {
    for (int px = 0; px < e.width; ++px) {
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      Eigen::Vector3d sq = Eigen::Vector3d::Zero();
      int n = 0;
      for (int y = py * kPatch; y < std::min(image.height, (py + 1) * kPatch); ++y) {
        for (int x = px * kPatch; x < std::min(image.width, (px + 1) * kPatch); ++x) {
          const Eigen::Vector3d c = image.at(x, y).cast<double>();
          sum += c;
          sq += c.cwiseProduct(c);
          ++n;
        }
      }
      const Eigen::Vector3d mean = sum / n;
      const Eigen::Vector3d var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
      const Eigen::Index col = static_cast<Eigen::Index>(py) * e.width + px;
      e.grid.block<3, 1>(0, col) = mean.cast<float>();
      e.grid.block<3, 1>(3, col) = var.cwiseSqrt().cast<float>();
    }
  }
  return e;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json image_payload(const RgbImage& image) {
  std::string rgb(static_cast<std::size_t>(image.pixels.cols()) * 3, '\0');
  for (Eigen::Index p = 0; p < image.pixels.cols(); ++p) {
    for (int c = 0; c < 3; ++c) {
      rgb[static_cast<std::size_t>(p) * 3 + c] =
          static_cast<char>(std::lround(std::clamp(image.pixels(c, p), 0.0f, 1.0f) * 255.0f));
    }
  }
  return {{"height", image.height}, {"width", image.width}, {"rgb8", base64_encode(rgb)}};
}

nlohmann::json post_json(const std::string& url, const std::string& path, const nlohmann::json& body) {
  httplib::Client client(url);
  client.set_connection_timeout(5);
  client.set_read_timeout(120);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) throw BackendUnavailable("external segmenter unreachable at " + url);
  if (res->status != 200) {
    throw BackendUnavailable("external segmenter returned HTTP " + std::to_string(res->status));
  }
  return nlohmann::json::parse(res->body);
}

}  // namespace

ExternalSegmenter::ExternalSegmenter(std::string url) : url_(std::move(url)) {
  if (url_.empty()) throw BackendUnavailable("external segmenter: no URL configured");
}

std::vector<SegmentationResult> ExternalSegmenter::segment_candidates(const RgbImage& image,
                                                                      std::span<const PointPrompt> points) const {
  validate_points(image, points);
  nlohmann::json body{{"image", image_payload(image)}, {"points", nlohmann::json::array()}};
  for (const auto& p : points) body["points"].push_back({p.x, p.y});
  const nlohmann::json reply = post_json(url_, "/segment", body);
  std::vector<SegmentationResult> out;
  for (const auto& m : reply.at("masks")) {
    const std::string png = base64_decode(m.at("png").get<std::string>());
    SegmentationResult r;
    r.mask = decode_png_mask({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()});
    r.confidence = m.at("score").get<double>();
    r.prompts.assign(points.begin(), points.end());
    out.push_back(std::move(r));
  }
  return out;
}

ImageEmbedding ExternalSegmenter::embed(const RgbImage& image) const {
  const nlohmann::json reply = post_json(url_, "/embed", {{"image", image_payload(image)}});
  ImageEmbedding e;
  e.channels = reply.at("channels").get<int>();
  e.height = reply.at("height").get<int>();
  e.width = reply.at("width").get<int>();
  e.producer = id();
  e.image_hash = image_content_hash(image);
  const std::string raw = base64_decode(reply.at("data").get<std::string>());
  const std::size_t count = static_cast<std::size_t>(e.channels) * e.height * e.width;
  if (raw.size() != count * 4) throw BackendUnavailable("external segmenter: embedding size mismatch");
  e.grid.resize(e.channels, static_cast<Eigen::Index>(e.height) * e.width);
  for (Eigen::Index i = 0; i < e.grid.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
    e.grid(i / e.grid.cols(), i % e.grid.cols()) = std::bit_cast<float>(bits);
  }
  return e;
}

std::unique_ptr<Segmenter> make_segmenter(const std::string& name) {
  std::string chosen = name;
  if (const char* env = std::getenv("SAMIC_SEGMENTER"); env != nullptr && *env != '\0') chosen = env;
  if (chosen == "mock") return std::make_unique<MockSegmenter>();
  if (chosen == "external") {
    const char* url = std::getenv("SAMIC_EXTERNAL_SEGMENTER_URL");
    if (url == nullptr || *url == '\0') {
      throw BackendUnavailable("external segmenter selected but SAMIC_EXTERNAL_SEGMENTER_URL is not set");
    }
    return std::make_unique<ExternalSegmenter>(url);
  }
  throw ConfigError("unknown segmenter backend: " + chosen);
}

std::string image_content_hash(const RgbImage& image) {
  std::string bytes = std::to_string(image.height) + "x" + std::to_string(image.width) + ":";
  bytes.reserve(bytes.size() + static_cast<std::size_t>(image.pixels.size()));
  for (Eigen::Index i = 0; i < image.pixels.size(); ++i) {
    bytes.push_back(static_cast<char>(std::lround(std::clamp(image.pixels.data()[i], 0.0f, 1.0f) * 255.0f)));
  }
  return sha256_hex(bytes);
}

// ---------------------------------------------------------------------------

EmbeddingCache::EmbeddingCache(std::filesystem::path directory) : dir_(std::move(directory)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path EmbeddingCache::stem(const std::string& hash, const std::string& producer) const {
  return dir_ / (hash + "-" + producer);
}

bool EmbeddingCache::contains(const std::string& hash, const std::string& producer) const {
  const auto s = stem(hash, producer);
  return std::filesystem::exists(s.string() + ".json") && std::filesystem::exists(s.string() + ".f32");
}

ImageEmbedding EmbeddingCache::embed_image(const Segmenter& backend, const RgbImage& image) {
  const std::string hash = image_content_hash(image);
  const std::string producer = backend.id();
  const auto s = stem(hash, producer);
  if (contains(hash, producer)) {
    const nlohmann::json meta = nlohmann::json::parse(read_file(s.string() + ".json"));
    const std::string raw = read_file(s.string() + ".f32");
    ImageEmbedding e;
    e.channels = meta.at("shape").at(0).get<int>();
    e.height = meta.at("shape").at(1).get<int>();
    e.width = meta.at("shape").at(2).get<int>();
    e.producer = meta.at("producer").get<std::string>();
    e.image_hash = meta.at("hash").get<std::string>();
    const Eigen::Index cols = static_cast<Eigen::Index>(e.height) * e.width;
    if (raw.size() != static_cast<std::size_t>(e.channels * cols) * 4) {
      throw StorageError("embedding cache entry is truncated: " + s.string());
    }
    e.grid.resize(e.channels, cols);
    for (Eigen::Index c = 0; c < e.channels; ++c) {
      for (Eigen::Index p = 0; p < cols; ++p) {
        std::uint32_t bits = 0;
        const std::size_t off = static_cast<std::size_t>(c * cols + p) * 4;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[off + b])) << (8 * b);
        e.grid(c, p) = std::bit_cast<float>(bits);
      }
    }
    ++hits_;
    return e;
  }
  ImageEmbedding e = backend.embed(image);
  ++computations_;
  std::string raw;
  raw.reserve(static_cast<std::size_t>(e.grid.size()) * 4);
  for (Eigen::Index c = 0; c < e.grid.rows(); ++c) {
    for (Eigen::Index p = 0; p < e.grid.cols(); ++p) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(e.grid(c, p));
      for (int b = 0; b < 4; ++b) raw.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  const nlohmann::json meta{{"shape", {e.channels, e.height, e.width}}, {"producer", producer}, {"hash", hash}};
  std::lock_guard lock(write_mutex_);
  // Data first, sidecar last: an entry is visible only once both files exist.
  write_file_atomic(s.string() + ".f32", raw);
  write_file_atomic(s.string() + ".json", meta.dump() + "\n");
  return e;
}

// ---------------------------------------------------------------------------

ClusterResult cluster_embedding(const ImageEmbedding& embedding, int clusters, std::uint64_t seed) {
  const Eigen::MatrixXd x = embedding.grid.cast<double>();
  const Eigen::Index n = x.cols();
  if (clusters < 1 || clusters > n) throw ArgumentError("cluster_embedding: n must lie in [1, positions]");
  {
    std::set<std::vector<double>> distinct;
    for (Eigen::Index p = 0; p < n && static_cast<int>(distinct.size()) < clusters; ++p) {
      distinct.insert(std::vector<double>(x.col(p).data(), x.col(p).data() + x.rows()));
    }
    if (static_cast<int>(distinct.size()) < clusters) {
      throw DegenerateError("cluster_embedding: fewer distinct vectors than clusters");
    }
  }
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centroids(x.rows(), clusters);
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centroids.col(0) = x.col(first(rng));
  Eigen::VectorXd d2 = (x.colwise() - centroids.col(0)).colwise().squaredNorm().transpose();
  for (int k = 1; k < clusters; ++k) {
    const double total = d2.sum();
    std::uniform_real_distribution<double> pick(0.0, total);
    double r = pick(rng);
    Eigen::Index chosen = 0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (d2(p) <= 0.0) continue;
      chosen = p;
      r -= d2(p);
      if (r <= 0.0) break;
    }
    centroids.col(k) = x.col(chosen);
    d2 = d2.cwiseMin((x.colwise() - centroids.col(k)).colwise().squaredNorm().transpose());
  }

  ClusterResult result;
  result.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 1; iter <= 100; ++iter) {
    bool changed = false;
    for (Eigen::Index p = 0; p < n; ++p) {
      Eigen::Index best = 0;
      (centroids.colwise() - x.col(p)).colwise().squaredNorm().minCoeff(&best);
      if (result.assignment[static_cast<std::size_t>(p)] != static_cast<int>(best)) {
        result.assignment[static_cast<std::size_t>(p)] = static_cast<int>(best);
        changed = true;
      }
    }
    result.iterations = iter;
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(x.rows(), clusters);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(clusters);
    for (Eigen::Index p = 0; p < n; ++p) {
      sums.col(result.assignment[static_cast<std::size_t>(p)]) += x.col(p);
      counts(result.assignment[static_cast<std::size_t>(p)]) += 1.0;
    }
    for (int k = 0; k < clusters; ++k) {
      if (counts(k) > 0) centroids.col(k) = sums.col(k) / counts(k);  // empty clusters keep their centroid
    }
  }
  result.centroids = centroids.cast<float>();
  return result;
}

}  // namespace samic
