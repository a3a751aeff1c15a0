#include "samic/http_api.hpp"

#include "samic/codec.hpp"

#include <httplib.h>

namespace samic {
namespace {

void reply(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string mask_png_string(const BinaryMask& mask) {
  const auto bytes = encode_png_mask(mask);
  return {bytes.begin(), bytes.end()};
}

// Maps the service's exception types onto HTTP statuses.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFound& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const ManifestError& e) {
      reply(res, 400, {{"error", "unreadable images"}, {"problems", e.problems()}});
    } catch (const NotReady& e) {
      res.set_header("Retry-After", "1");
      reply(res, 503, {{"error", e.what()}, {"retriable", true}});
    } catch (const Conflict& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const BackendUnavailable& e) {
      reply(res, 502, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, {{"error", std::string("malformed request body: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

nlohmann::ordered_json summary_json(const SessionSummary& s) {
  nlohmann::ordered_json j{{"session", s.id}, {"images", nlohmann::ordered_json::array()}};
  for (const auto& img : s.images) {
    nlohmann::ordered_json e{{"id", img.id},
                             {"size", {img.height, img.width}},
                             {"ready", img.ready},
                             {"committed", img.committed}};
    if (!img.error.empty()) e["error"] = img.error;
    j["images"].push_back(std::move(e));
  }
  j["next"] = s.next ? nlohmann::ordered_json(*s.next) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace

nlohmann::ordered_json to_json(const DraftState& state) {
  nlohmann::ordered_json instances = nlohmann::ordered_json::array();
  for (const auto& group : state.prompts.instances) {
    nlohmann::ordered_json g = nlohmann::ordered_json::array();
    for (const auto& p : group) g.push_back({p.x, p.y});
    instances.push_back(std::move(g));
  }
  const BinaryMask& m = state.result.mask;
  return {{"instances", instances},
          {"confidence", state.result.confidence},
          {"mask_area", m.size() == 0 ? 0 : static_cast<long>(m.cast<long>().sum())},
          {"mask_png", base64_encode(mask_png_string(m))}};
}

nlohmann::ordered_json to_json(const AnnotationRecord& r) {
  nlohmann::ordered_json j;
  j["session"] = r.session_id;
  j["image"] = r.image_id;
  j["record"] = to_json(r.record);
  j["created_at"] = r.created_at;
  j["committed_at"] = r.committed_at;
  return j;
}

void mount_annotation_api(httplib::Server& server, AnnotationService& service) {
  server.Post("/v1/sessions", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const auto body = nlohmann::json::parse(req.body);
                std::vector<std::filesystem::path> paths;
                for (const auto& p : body.at("images")) paths.emplace_back(p.get<std::string>());
                const std::string id = service.open_session(paths);
                reply(res, 201, summary_json(service.session(id)));
              }));
  server.Get(R"(/v1/sessions/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
               reply(res, 200, summary_json(service.session(req.matches[1])));
             }));
  server.Get(R"(/v1/sessions/([^/]+)/next)", guarded([&](const httplib::Request& req, httplib::Response& res) {
               const SessionSummary s = service.session(req.matches[1]);
               nlohmann::ordered_json j{{"session", s.id}};
               if (!s.next) {
                 j["image"] = nullptr;
                 reply(res, 200, j);
                 return;
               }
               const auto it = std::find_if(s.images.begin(), s.images.end(),
                                            [&](const ImageSlot& i) { return i.id == *s.next; });
               j["image"] = it->id;
               j["size"] = {it->height, it->width};
               j["ready"] = it->ready;
               j["remaining"] = std::count_if(s.images.begin(), s.images.end(),
                                              [](const ImageSlot& i) { return !i.committed; });
               j["draft"] = to_json(service.draft(s.id, it->id));
               reply(res, 200, j);
             }));
  server.Get(R"(/v1/sessions/([^/]+)/images/([^/]+)/image\.png)",
             guarded([&](const httplib::Request& req, httplib::Response& res) {
               const auto bytes = encode_png_rgb(service.image(req.matches[1], req.matches[2]));
               res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
             }));
  server.Get(R"(/v1/sessions/([^/]+)/images/([^/]+)/mask\.png)",
             guarded([&](const httplib::Request& req, httplib::Response& res) {
               if (const auto r = service.record(req.matches[1], req.matches[2])) {
                 res.set_content(read_file(r->mask_file), "image/png");
               } else {
                 res.set_content(mask_png_string(service.draft(req.matches[1], req.matches[2]).result.mask),
                                 "image/png");
               }
             }));
  server.Post(R"(/v1/sessions/([^/]+)/images/([^/]+)/prompts)",
              guarded([&](const httplib::Request& req, httplib::Response& res) {
                const auto body = nlohmann::json::parse(req.body);
                const auto instance = body.value("instance", 0);
                if (instance < 0) throw ArgumentError("instance must be non-negative");
                const PointPrompt p{body.at("x").get<double>(), body.at("y").get<double>()};
                reply(res, 200,
                      to_json(service.submit_prompt(req.matches[1], req.matches[2], static_cast<std::size_t>(instance), p)));
              }));
  server.Delete(R"(/v1/sessions/([^/]+)/images/([^/]+)/prompts/last)",
                guarded([&](const httplib::Request& req, httplib::Response& res) {
                  reply(res, 200, to_json(service.undo_last(req.matches[1], req.matches[2])));
                }));
  server.Post(R"(/v1/sessions/([^/]+)/images/([^/]+)/commit)",
              guarded([&](const httplib::Request& req, httplib::Response& res) {
                const AnnotationRecord r = service.commit(req.matches[1], req.matches[2]);
                nlohmann::ordered_json j = to_json(r);
                const auto next = service.session(req.matches[1]).next;
                j["next"] = next ? nlohmann::ordered_json(*next) : nlohmann::ordered_json(nullptr);
                reply(res, 201, j);
              }));
  server.Get(R"(/v1/sessions/([^/]+)/export)", guarded([&](const httplib::Request& req, httplib::Response& res) {
               const std::string sid = req.matches[1];
               const std::string cls = req.has_param("class") ? req.get_param_value("class") : "annotated";
               const auto out = service.storage() / "exports" / sid;
               const DatasetIndex index = service.export_dataset(sid, out, cls);
               nlohmann::ordered_json j{{"directory", out.string()},
                                        {"manifest", (out / "manifest.json").string()},
                                        {"items", index.items.size()}};
               reply(res, 200, j);
             }));
}

}  // namespace samic
