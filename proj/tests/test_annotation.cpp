#include "samic/annotation.hpp"
#include "samic/errors.hpp"

#include "annotation_support.hpp"

#include <doctest.h>

#include <fstream>
#include <thread>

using namespace samic;

namespace {

class FailingEmbed final : public Segmenter {
 public:
  [[nodiscard]] std::string id() const override { return "failing"; }
  [[nodiscard]] std::vector<SegmentationResult> segment_candidates(
      const RgbImage& image, std::span<const PointPrompt> points) const override {
    return MockSegmenter().segment_candidates(image, points);
  }
  [[nodiscard]] ImageEmbedding embed(const RgbImage&) const override { throw BackendUnavailable("encoder offline"); }
};

}  // namespace

TEST_CASE("a session queues images in order and reports the next uncommitted one") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  const std::string sid = svc.open_session(fx.images);
  svc.wait_until_ready(sid);
  const SessionSummary s = svc.session(sid);
  REQUIRE(s.images.size() == 3);
  CHECK(s.images[0].id == "red");
  CHECK(s.images[1].height == 48);
  CHECK(s.images[2].ready);
  CHECK(s.next == "red");
  CHECK(fx.cache->computations() == 3);
  CHECK(svc.session_ids() == std::vector<std::string>{sid});
}

TEST_CASE("unreadable images reject the whole session and are all listed") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  std::ofstream(fx.dir / "in/broken.png") << "nope";
  try {
    svc.open_session({fx.images[0], fx.dir / "in/missing.png", fx.dir / "in/broken.png"});
    FAIL("expected ManifestError");
  } catch (const ManifestError& e) {
    CHECK(e.problems().size() == 2);
  }
  CHECK(svc.session_ids().empty());
  CHECK_THROWS_AS(svc.open_session({}), ArgumentError);
}

TEST_CASE("duplicate file stems get distinct image ids") {
  testing::ServiceFixture fx;
  const auto other = testing::write_scene(fx.dir / "in/b/red.png", {1.0f, 0.0f, 0.0f}, 2, 2);
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  const std::string sid = svc.open_session({fx.images[0], other});
  const auto s = svc.session(sid);
  CHECK(s.images[0].id == "red");
  CHECK(s.images[1].id == "red_2");
}

TEST_CASE("each prompt updates the live mask; undo restores the previous draft") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  const std::string sid = svc.open_session(fx.images);
  svc.wait_until_ready(sid);
  const DraftState empty = svc.draft(sid, "red");
  CHECK(empty.result.mask.cast<int>().sum() == 0);
  CHECK(empty.result.confidence == 0.0);

  std::vector<double> conf;
  for (const PointPrompt p : {PointPrompt{10, 12}, PointPrompt{15, 18}, PointPrompt{18, 20}}) {
    const DraftState d = svc.submit_prompt(sid, "red", 0, p);
    CHECK(d.result.mask.cast<int>().sum() == 144);
    conf.push_back(d.result.confidence);
  }
  CHECK(conf[0] < conf[1]);
  CHECK(conf[1] < conf[2]);
  const DraftState undone = svc.undo_last(sid, "red");
  CHECK(undone.prompts.point_count() == 2);
  CHECK(undone.result.confidence == doctest::Approx(conf[1]));
  svc.undo_last(sid, "red");
  svc.undo_last(sid, "red");
  CHECK(svc.draft(sid, "red").prompts.instances.empty());
  CHECK_THROWS_AS(svc.undo_last(sid, "red"), ArgumentError);
}

TEST_CASE("prompt validation and instance groups") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  const std::string sid = svc.open_session(fx.images);
  svc.wait_until_ready(sid);
  CHECK_THROWS_AS(svc.submit_prompt(sid, "red", 0, {64.0, 3.0}), ArgumentError);
  CHECK_THROWS_AS(svc.submit_prompt(sid, "red", 1, {3.0, 3.0}), ArgumentError);
  CHECK(svc.draft(sid, "red").prompts.empty());
  svc.submit_prompt(sid, "red", 0, {10, 12});
  const DraftState two = svc.submit_prompt(sid, "red", 1, {1, 1});
  CHECK(two.prompts.instances.size() == 2);
  // Background instance: union covers everything, confidence is the weaker group's.
  CHECK(two.result.mask.cast<int>().sum() == 48 * 64);
  CHECK(two.result.confidence == doctest::Approx(MockSegmenter::confidence_for(1, 1, true)));
  CHECK_THROWS_AS(svc.submit_prompt("nope", "red", 0, {1, 1}), NotFound);
  CHECK_THROWS_AS(svc.submit_prompt(sid, "purple", 0, {1, 1}), NotFound);
}

TEST_CASE("commit persists prompts and mask; records are immutable") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  const std::string sid = svc.open_session(fx.images);
  svc.wait_until_ready(sid);
  CHECK_THROWS_AS(svc.commit(sid, "red"), ArgumentError);
  svc.submit_prompt(sid, "red", 0, {10, 12});
  svc.submit_prompt(sid, "red", 0, {12, 15});
  const AnnotationRecord r = svc.commit(sid, "red");
  CHECK(r.record.backend == "mock");
  CHECK(r.record.height == 48);
  CHECK(r.record.prompts.point_count() == 2);
  CHECK(r.created_at <= r.committed_at);
  CHECK(r.committed_at.back() == 'Z');
  const BinaryMask mask = read_png_mask(r.mask_file);
  CHECK(mask.cast<int>().sum() == 144);
  CHECK(prompt_record_from_json(nlohmann::json::parse(read_file(r.prompts_file))) == r.record);

  CHECK_THROWS_AS(svc.commit(sid, "red"), Conflict);
  CHECK_THROWS_AS(svc.submit_prompt(sid, "red", 0, {1, 1}), Conflict);
  CHECK_THROWS_AS(svc.undo_last(sid, "red"), Conflict);
  CHECK(svc.session(sid).next == "green");
  CHECK(svc.records(sid).size() == 1);
  CHECK(read_file(r.prompts_file) == dump_prompt_record(r.record));
}

TEST_CASE("a restarted service reloads sessions and committed records") {
  testing::ServiceFixture fx;
  std::string sid;
  AnnotationRecord before;
  {
    AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
    sid = svc.open_session(fx.images);
    svc.wait_until_ready(sid);
    svc.submit_prompt(sid, "green", 0, {33, 25});
    before = svc.commit(sid, "green");
    svc.submit_prompt(sid, "blue", 0, {46, 6});  // uncommitted draft is not persisted
  }
  AnnotationService again(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  CHECK(again.session_ids() == std::vector<std::string>{sid});
  const auto r = again.record(sid, "green");
  REQUIRE(r.has_value());
  CHECK(r->record == before.record);
  CHECK(r->committed_at == before.committed_at);
  CHECK_FALSE(again.record(sid, "blue").has_value());
  CHECK(again.session(sid).next == "red");
  again.wait_until_ready(sid);
  CHECK(again.draft(sid, "blue").prompts.empty());
  CHECK_THROWS_AS(again.commit(sid, "green"), Conflict);
}

TEST_CASE("prompts wait for the embedding") {
  testing::ServiceFixture fx;
  auto gated = std::make_shared<testing::GatedSegmenter>();
  AnnotationService svc(fx.dir / "store", gated, fx.cache);
  struct Release {
    testing::GatedSegmenter& g;
    ~Release() { g.open(); }
  } release{*gated};
  const std::string sid = svc.open_session({fx.images[0]});
  CHECK_FALSE(svc.session(sid).images[0].ready);
  CHECK_THROWS_AS(svc.submit_prompt(sid, "red", 0, {10, 12}), NotReady);
  gated->open();
  svc.wait_until_ready(sid);
  CHECK(svc.submit_prompt(sid, "red", 0, {10, 12}).result.mask.cast<int>().sum() == 144);
}

TEST_CASE("a failed embedding surfaces as backend unavailable") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<FailingEmbed>(), fx.cache);
  const std::string sid = svc.open_session({fx.images[0]});
  svc.wait_until_ready(sid);
  CHECK(svc.session(sid).images[0].error.find("encoder offline") != std::string::npos);
  CHECK_THROWS_AS(svc.submit_prompt(sid, "red", 0, {10, 12}), BackendUnavailable);
}

TEST_CASE("concurrent prompts on one image are serialized") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  const std::string sid = svc.open_session({fx.images[0]});
  svc.wait_until_ready(sid);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 5; ++i) svc.submit_prompt(sid, "red", 0, {8.0 + t, 10.0 + i});
    });
  }
  for (auto& t : threads) t.join();
  const DraftState d = svc.draft(sid, "red");
  CHECK(d.prompts.point_count() == 20);
  CHECK(d.result.confidence == doctest::Approx(MockSegmenter::confidence_for(20, 1, false)));
}

TEST_CASE("export writes a loadable dataset of the committed records") {
  testing::ServiceFixture fx;
  AnnotationService svc(fx.dir / "store", std::make_shared<MockSegmenter>(), fx.cache);
  const std::string sid = svc.open_session(fx.images);
  svc.wait_until_ready(sid);
  CHECK_THROWS_AS(svc.export_dataset(sid, fx.dir / "out"), ArgumentError);
  svc.submit_prompt(sid, "red", 0, {10, 12});
  svc.commit(sid, "red");
  svc.submit_prompt(sid, "blue", 0, {46, 6});
  svc.commit(sid, "blue");
  const DatasetIndex idx = svc.export_dataset(sid, fx.dir / "out", "squares");
  CHECK(idx.items.size() == 2);
  const DatasetIndex loaded = load_split_manifest(fx.dir / "out/manifest.json");
  CHECK(loaded.classes == std::vector<std::string>{"squares"});
  CHECK(loaded.items[1].id == "blue");
  CHECK(read_png_mask(loaded.items[1].mask).cast<int>().sum() == 144);
}
