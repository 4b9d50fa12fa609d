#pragma once

#include <string>
#include <string_view>

namespace sslm::utf8 {

// Decodes UTF-8 bytes into Unicode scalar values. Throws std::runtime_error
// on malformed input.
std::u32string decode(std::string_view bytes);

std::string encode(std::u32string_view chars);
void append(char32_t c, std::string& out);

// Unicode whitespace (the word-separator set used for word extents).
bool is_space(char32_t c);

}  // namespace sslm::utf8
