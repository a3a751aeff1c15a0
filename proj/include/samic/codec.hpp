#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace samic {

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);
std::string sha256_hex(std::string_view bytes);
std::string openssl_version();

}  // namespace samic
