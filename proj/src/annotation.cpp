#include "samic/annotation.hpp"

#include <chrono>
#include <ctime>
#include <cstdio>
#include <random>
#include <set>

namespace samic {
namespace {

std::string utc_now() {
  const auto now = std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  const auto ms = now.time_since_epoch().count() % 1000;
  return std::string(buf) + "." + (ms < 100 ? (ms < 10 ? "00" : "0") : "") + std::to_string(ms) + "Z";
}

std::string new_session_id() {
  static std::mt19937_64 rng{std::random_device{}()};
  static std::mutex m;
  std::lock_guard lock(m);
  char buf[24];
  std::snprintf(buf, sizeof buf, "s%012llx", static_cast<unsigned long long>(rng() & 0xffffffffffffull));
  return buf;
}

bool safe_id(const std::string& id) {
  return !id.empty() && id.find_first_of("/\\") == std::string::npos && id != "." && id != "..";
}

}  // namespace

AnnotationService::AnnotationService(std::filesystem::path storage, std::shared_ptr<const Segmenter> backend,
                                     std::shared_ptr<EmbeddingCache> cache)
    : storage_(std::move(storage)), backend_(std::move(backend)), cache_(std::move(cache)) {
  if (!backend_) throw BackendUnavailable("annotation service needs a segmenter backend");
  if (!cache_) throw ArgumentError("annotation service needs an embedding cache");
  std::filesystem::create_directories(storage_ / "sessions");
  load_existing();
  worker_ = std::thread([this] { worker(); });
}

AnnotationService::~AnnotationService() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void AnnotationService::worker() {
  for (;;) {
    std::pair<std::string, std::size_t> job;
    std::shared_ptr<const RgbImage> pixels;
    {
      std::unique_lock lock(mutex_);
      jobs_cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
      if (stopping_) return;
      job = jobs_.front();
      jobs_.pop_front();
      pixels = sessions_.at(job.first).slots[job.second].pixels;
    }
    std::string error;
    try {
      (void)cache_->embed_image(*backend_, *pixels);
    } catch (const std::exception& e) {
      error = e.what();
    }
    {
      std::lock_guard lock(mutex_);
      auto& info = sessions_.at(job.first).slots[job.second].info;
      info.ready = error.empty();
      info.error = error;
    }
    ready_cv_.notify_all();
  }
}

std::string AnnotationService::open_session(const std::vector<std::filesystem::path>& images) {
  if (images.empty()) throw ArgumentError("open_session: no images given");
  std::vector<std::string> problems;
  Session session;
  session.id = new_session_id();
  session.dir = storage_ / "sessions" / session.id;
  std::set<std::string> used;
  for (const auto& path : images) {
    Slot slot;
    try {
      slot.pixels = std::make_shared<const RgbImage>(read_png_rgb(path));
    } catch (const std::exception& e) {
      problems.push_back(path.string() + ": " + e.what());
      continue;
    }
    std::string id = path.stem().string();
    if (!safe_id(id)) id = "image";
    for (int n = 2; used.contains(id); ++n) id = path.stem().string() + "_" + std::to_string(n);
    used.insert(id);
    slot.info.id = id;
    slot.info.source = std::filesystem::absolute(path);
    slot.info.height = slot.pixels->height;
    slot.info.width = slot.pixels->width;
    slot.content_hash = image_content_hash(*slot.pixels);
    session.slots.push_back(std::move(slot));
  }
  if (!problems.empty()) throw ManifestError(problems);

  std::filesystem::create_directories(session.dir / "records");
  std::filesystem::create_directories(session.dir / "masks");
  nlohmann::ordered_json j{{"id", session.id}, {"images", nlohmann::ordered_json::array()}};
  for (const auto& slot : session.slots) {
    j["images"].push_back({{"id", slot.info.id},
                           {"source", slot.info.source.string()},
                           {"hash", slot.content_hash},
                           {"size", {slot.info.height, slot.info.width}}});
  }
  write_file_atomic(session.dir / "session.json", j.dump(2) + "\n");

  const std::string id = session.id;
  {
    std::lock_guard lock(mutex_);
    const std::size_t n = session.slots.size();
    sessions_.emplace(id, std::move(session));
    for (std::size_t i = 0; i < n; ++i) jobs_.emplace_back(id, i);
  }
  jobs_cv_.notify_all();
  return id;
}

void AnnotationService::load_existing() {
  for (const auto& entry : std::filesystem::directory_iterator(storage_ / "sessions")) {
    const auto manifest = entry.path() / "session.json";
    if (!std::filesystem::exists(manifest)) continue;
    const auto j = nlohmann::json::parse(read_file(manifest));
    Session session;
    session.id = j.at("id").get<std::string>();
    session.dir = entry.path();
    for (const auto& e : j.at("images")) {
      Slot slot;
      slot.info.id = e.at("id").get<std::string>();
      slot.info.source = e.at("source").get<std::string>();
      slot.info.height = e.at("size").at(0).get<int>();
      slot.info.width = e.at("size").at(1).get<int>();
      slot.content_hash = e.at("hash").get<std::string>();
      try {
        slot.pixels = std::make_shared<const RgbImage>(read_png_rgb(slot.info.source));
      } catch (const std::exception& ex) {
        slot.info.error = ex.what();
      }
      // A record counts only when its prompt JSON (written last) and mask both exist.
      const auto rec = session.dir / "records" / (slot.info.id + ".json");
      const auto meta = session.dir / "records" / (slot.info.id + ".meta.json");
      const auto mask = session.dir / "masks" / (slot.info.id + ".png");
      if (std::filesystem::exists(rec) && std::filesystem::exists(mask) && std::filesystem::exists(meta)) {
        AnnotationRecord r;
        r.session_id = session.id;
        r.image_id = slot.info.id;
        r.record = prompt_record_from_json(nlohmann::json::parse(read_file(rec)));
        r.prompts_file = rec;
        r.mask_file = mask;
        const auto m = nlohmann::json::parse(read_file(meta));
        r.created_at = m.value("created_at", "");
        r.committed_at = m.value("committed_at", "");
        slot.committed = std::move(r);
        slot.info.committed = true;
      }
      session.slots.push_back(std::move(slot));
    }
    const std::string id = session.id;
    const std::size_t n = session.slots.size();
    sessions_.emplace(id, std::move(session));
    for (std::size_t i = 0; i < n; ++i) {
      if (sessions_.at(id).slots[i].pixels) jobs_.emplace_back(id, i);
    }
  }
}

AnnotationService::Session& AnnotationService::find_session(const std::string& id) {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session: " + id);
  return it->second;
}

const AnnotationService::Session& AnnotationService::find_session(const std::string& id) const {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session: " + id);
  return it->second;
}

AnnotationService::Slot& AnnotationService::find_slot(Session& s, const std::string& image_id) {
  for (auto& slot : s.slots) {
    if (slot.info.id == image_id) return slot;
  }
  throw NotFound("unknown image " + image_id + " in session " + s.id);
}

const AnnotationService::Slot& AnnotationService::find_slot(const Session& s, const std::string& image_id) const {
  for (const auto& slot : s.slots) {
    if (slot.info.id == image_id) return slot;
  }
  throw NotFound("unknown image " + image_id + " in session " + s.id);
}

SessionSummary AnnotationService::session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const Session& s = find_session(session_id);
  SessionSummary out;
  out.id = s.id;
  for (const auto& slot : s.slots) {
    out.images.push_back(slot.info);
    if (!out.next && !slot.info.committed) out.next = slot.info.id;
  }
  return out;
}

std::vector<std::string> AnnotationService::session_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

void AnnotationService::wait_until_ready(const std::string& session_id) const {
  std::unique_lock lock(mutex_);
  const Session& s = find_session(session_id);
  ready_cv_.wait(lock, [&] {
    return std::all_of(s.slots.begin(), s.slots.end(),
                       [](const Slot& slot) { return slot.info.ready || !slot.info.error.empty(); });
  });
}

DraftState AnnotationService::evaluate(const Slot& slot, const RgbImage& img) const {
  DraftState out;
  out.prompts = slot.draft;
  if (slot.draft.empty()) {
    out.result.mask = BinaryMask::Zero(img.height, img.width);
    return out;
  }
  out.result = segment_instances(*backend_, img, slot.draft);
  return out;
}

DraftState AnnotationService::submit_prompt(const std::string& session_id, const std::string& image_id,
                                            std::size_t instance, const PointPrompt& point) {
  Slot* slot = nullptr;
  {
    std::lock_guard lock(mutex_);
    slot = &find_slot(find_session(session_id), image_id);
    if (!slot->info.error.empty()) throw BackendUnavailable("embedding failed for " + image_id + ": " + slot->info.error);
    if (!slot->info.ready) throw NotReady("embedding for " + image_id + " is still being computed");
    if (slot->info.committed) throw Conflict(image_id + " is already committed");
  }
  // Submissions to one image queue on this mutex; each sees the previous one's draft.
  std::lock_guard submit(*slot->submit_mutex);
  const RgbImage& img = *slot->pixels;
  if (!img.contains(point.x, point.y)) throw ArgumentError("point outside the image bounds");
  if (instance > slot->draft.instances.size()) {
    throw ArgumentError("instance index " + std::to_string(instance) + " skips a group");
  }
  {
    std::lock_guard lock(mutex_);
    if (slot->info.committed) throw Conflict(image_id + " is already committed");
  }
  if (slot->draft.image_id.empty()) slot->draft.image_id = image_id;
  if (slot->draft_started.empty()) slot->draft_started = utc_now();
  if (instance == slot->draft.instances.size()) slot->draft.instances.emplace_back();
  slot->draft.instances[instance].push_back(point);
  slot->history.push_back(instance);
  try {
    return evaluate(*slot, img);
  } catch (...) {
    slot->draft.instances[instance].pop_back();
    slot->history.pop_back();
    if (slot->draft.instances[instance].empty() && instance + 1 == slot->draft.instances.size()) {
      slot->draft.instances.pop_back();
    }
    throw;
  }
}

DraftState AnnotationService::undo_last(const std::string& session_id, const std::string& image_id) {
  Slot* slot = nullptr;
  {
    std::lock_guard lock(mutex_);
    slot = &find_slot(find_session(session_id), image_id);
    if (slot->info.committed) throw Conflict(image_id + " is already committed");
  }
  std::lock_guard submit(*slot->submit_mutex);
  if (slot->history.empty()) throw ArgumentError("nothing to undo for " + image_id);
  const std::size_t instance = slot->history.back();
  slot->history.pop_back();
  slot->draft.instances[instance].pop_back();
  while (!slot->draft.instances.empty() && slot->draft.instances.back().empty()) slot->draft.instances.pop_back();
  if (slot->history.empty()) slot->draft_started.clear();
  return evaluate(*slot, *slot->pixels);
}

DraftState AnnotationService::draft(const std::string& session_id, const std::string& image_id) const {
  const Slot* slot = nullptr;
  {
    std::lock_guard lock(mutex_);
    slot = &find_slot(find_session(session_id), image_id);
  }
  std::lock_guard submit(*slot->submit_mutex);
  if (!slot->pixels) throw StorageError("image unavailable: " + slot->info.source.string());
  return evaluate(*slot, *slot->pixels);
}

AnnotationRecord AnnotationService::commit(const std::string& session_id, const std::string& image_id) {
  Slot* slot = nullptr;
  std::filesystem::path dir;
  {
    std::lock_guard lock(mutex_);
    Session& s = find_session(session_id);
    slot = &find_slot(s, image_id);
    dir = s.dir;
  }
  std::lock_guard submit(*slot->submit_mutex);
  {
    std::lock_guard lock(mutex_);
    if (slot->info.committed) throw Conflict(image_id + " is already committed");
  }
  if (slot->draft.empty()) throw ArgumentError("cannot commit " + image_id + ": the draft has no prompts");
  const RgbImage& img = *slot->pixels;
  const SegmentationResult seg = segment_instances(*backend_, img, slot->draft);

  AnnotationRecord r;
  r.session_id = session_id;
  r.image_id = image_id;
  r.record = PromptRecord{slot->draft, img.height, img.width, seg.confidence, backend_->id()};
  r.prompts_file = dir / "records" / (image_id + ".json");
  r.mask_file = dir / "masks" / (image_id + ".png");
  r.created_at = slot->draft_started;
  r.committed_at = utc_now();
  // Mask and metadata first, prompt JSON last: the JSON's presence marks the commit.
  write_png_mask(r.mask_file, seg.mask);
  const nlohmann::ordered_json meta{{"created_at", r.created_at},
                                    {"committed_at", r.committed_at},
                                    {"mask", "masks/" + image_id + ".png"}};
  write_file_atomic(dir / "records" / (image_id + ".meta.json"), meta.dump(2) + "\n");
  write_file_atomic(r.prompts_file, dump_prompt_record(r.record));

  std::lock_guard lock(mutex_);
  slot->committed = r;
  slot->info.committed = true;
  slot->draft = {};
  slot->history.clear();
  slot->draft_started.clear();
  return r;
}

std::optional<AnnotationRecord> AnnotationService::record(const std::string& session_id,
                                                          const std::string& image_id) const {
  std::lock_guard lock(mutex_);
  return find_slot(find_session(session_id), image_id).committed;
}

std::vector<AnnotationRecord> AnnotationService::records(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  std::vector<AnnotationRecord> out;
  for (const auto& slot : find_session(session_id).slots) {
    if (slot.committed) out.push_back(*slot.committed);
  }
  return out;
}

RgbImage AnnotationService::image(const std::string& session_id, const std::string& image_id) const {
  std::lock_guard lock(mutex_);
  const Slot& slot = find_slot(find_session(session_id), image_id);
  if (!slot.pixels) throw StorageError("image unavailable: " + slot.info.source.string());
  return *slot.pixels;
}

DatasetIndex AnnotationService::export_dataset(const std::string& session_id, const std::filesystem::path& out,
                                               const std::string& class_name) const {
  std::vector<std::pair<AnnotationRecord, std::filesystem::path>> committed;
  {
    std::lock_guard lock(mutex_);
    for (const auto& slot : find_session(session_id).slots) {
      if (slot.committed) committed.emplace_back(*slot.committed, slot.info.source);
    }
  }
  if (committed.empty()) throw ArgumentError("export: session " + session_id + " has no committed records");
  for (const char* sub : {"images", "prompts", "masks"}) std::filesystem::create_directories(out / sub);
  DatasetIndex index;
  index.root = out;
  index.classes = {class_name};
  for (const auto& [r, source] : committed) {
    DatasetItem item;
    item.id = r.image_id;
    item.class_name = class_name;
    item.split = "train";
    item.image = out / "images" / (r.image_id + ".png");
    item.prompts = out / "prompts" / (r.image_id + ".json");
    item.mask = out / "masks" / (r.image_id + ".png");
    write_file_atomic(item.image, read_file(source));
    write_file_atomic(item.prompts, read_file(r.prompts_file));
    write_file_atomic(item.mask, read_file(r.mask_file));
    index.items.push_back(std::move(item));
  }
  write_manifest(out / "manifest.json", index);
  return index;
}

}  // namespace samic
