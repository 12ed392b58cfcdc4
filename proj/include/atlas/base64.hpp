#pragma once

#include <string>
#include <string_view>

namespace atlas {

std::string base64_encode(std::string_view bytes);
// Throws kInvalidArgument on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

}  // namespace atlas
