#pragma once

// JSON-over-HTTP binding of the annotation service, all routes under /v1:
//   POST   /v1/sessions                                   {"images":[path,...]}
//   GET    /v1/sessions/{sid}
//   GET    /v1/sessions/{sid}/next
//   GET    /v1/sessions/{sid}/images/{img}/image.png
//   GET    /v1/sessions/{sid}/images/{img}/mask.png        committed mask, else the draft's
//   POST   /v1/sessions/{sid}/images/{img}/prompts         {"instance":i,"x":x,"y":y}
//   DELETE /v1/sessions/{sid}/images/{img}/prompts/last
//   POST   /v1/sessions/{sid}/images/{img}/commit
//   GET    /v1/sessions/{sid}/export[?class=name]
// Errors: 400 bad input, 404 unknown id, 409 conflict, 503 (+Retry-After) not ready,
// 502 backend unavailable, 500 storage failure; body {"error":message}.

#include "samic/annotation.hpp"

namespace httplib {
class Server;
}

namespace samic {

void mount_annotation_api(httplib::Server& server, AnnotationService& service);

nlohmann::ordered_json to_json(const DraftState& state);
nlohmann::ordered_json to_json(const AnnotationRecord& record);

}  // namespace samic
