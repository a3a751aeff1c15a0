#pragma once

// Annotation backend: sessions over an image queue, background embedding
// precompute, iterative point prompting with live masks, immutable commits
// persisted as prompt JSON plus a mask PNG, and export to a dataset manifest.

#include "samic/dataset.hpp"
#include "samic/errors.hpp"
#include "samic/prompts.hpp"
#include "samic/segmenter.hpp"

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace samic {

// Unknown session or image id.
class NotFound : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

// The operation conflicts with stored state (committing an image twice).
class Conflict : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct AnnotationRecord {
  std::string session_id;
  std::string image_id;
  PromptRecord record;
  std::filesystem::path prompts_file;
  std::filesystem::path mask_file;
  std::string created_at;    // first prompt, ISO-8601 UTC
  std::string committed_at;  // ISO-8601 UTC
};

struct ImageSlot {
  std::string id;
  std::filesystem::path source;
  int height = 0;
  int width = 0;
  bool ready = false;  // embedding computed
  bool committed = false;
  std::string error;  // embedding failure, if any
};

struct SessionSummary {
  std::string id;
  std::vector<ImageSlot> images;
  std::optional<std::string> next;  // first uncommitted image in queue order
};

// Draft state returned after every prompt change.
struct DraftState {
  PromptSet prompts;
  SegmentationResult result;  // empty mask and zero confidence when the draft is empty
};

class AnnotationService {
 public:
  // Sessions and records live under `storage`; existing sessions there are reloaded.
  AnnotationService(std::filesystem::path storage, std::shared_ptr<const Segmenter> backend,
                    std::shared_ptr<EmbeddingCache> cache);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  // Rejects the whole list with every unreadable file listed; schedules embeddings.
  std::string open_session(const std::vector<std::filesystem::path>& images);
  [[nodiscard]] SessionSummary session(const std::string& session_id) const;
  [[nodiscard]] std::vector<std::string> session_ids() const;

  // Blocks until every embedding of the session is computed.
  void wait_until_ready(const std::string& session_id) const;

  // Appends the point to instance group `instance` (== group count starts a new group).
  // Throws NotReady while the image's embedding is pending.
  DraftState submit_prompt(const std::string& session_id, const std::string& image_id, std::size_t instance,
                           const PointPrompt& point);
  // Removes the most recently submitted point.
  DraftState undo_last(const std::string& session_id, const std::string& image_id);
  [[nodiscard]] DraftState draft(const std::string& session_id, const std::string& image_id) const;

  AnnotationRecord commit(const std::string& session_id, const std::string& image_id);
  [[nodiscard]] std::optional<AnnotationRecord> record(const std::string& session_id,
                                                       const std::string& image_id) const;
  [[nodiscard]] std::vector<AnnotationRecord> records(const std::string& session_id) const;
  [[nodiscard]] RgbImage image(const std::string& session_id, const std::string& image_id) const;

  // images/, prompts/, masks/ and manifest.json; every record becomes a "train" item of `class_name`.
  DatasetIndex export_dataset(const std::string& session_id, const std::filesystem::path& out,
                              const std::string& class_name = "annotated") const;

  [[nodiscard]] const Segmenter& backend() const { return *backend_; }
  [[nodiscard]] const std::filesystem::path& storage() const { return storage_; }

 private:
  struct Slot {
    ImageSlot info;
    std::string content_hash;
    std::shared_ptr<const RgbImage> pixels;
    std::unique_ptr<std::mutex> submit_mutex = std::make_unique<std::mutex>();  // serializes prompt changes
    PromptSet draft;
    std::vector<std::size_t> history;  // instance index of every submitted point
    std::string draft_started;
    std::optional<AnnotationRecord> committed;
  };
  struct Session {
    std::string id;
    std::filesystem::path dir;
    std::vector<Slot> slots;
  };

  Session& find_session(const std::string& id);
  const Session& find_session(const std::string& id) const;
  Slot& find_slot(Session& s, const std::string& image_id);
  const Slot& find_slot(const Session& s, const std::string& image_id) const;
  DraftState evaluate(const Slot& slot, const RgbImage& img) const;
  void load_existing();
  void worker();

  std::filesystem::path storage_;
  std::shared_ptr<const Segmenter> backend_;
  std::shared_ptr<EmbeddingCache> cache_;

  mutable std::mutex mutex_;  // guards sessions_ structure and slot flags
  mutable std::condition_variable ready_cv_;
  std::map<std::string, Session> sessions_;

  std::deque<std::pair<std::string, std::size_t>> jobs_;  // (session, slot) awaiting embedding
  std::condition_variable jobs_cv_;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace samic
