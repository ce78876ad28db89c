#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace msda::io {

using ordered_json = nlohmann::ordered_json;

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// Writes `body` as JSON whose first line carries the invocation string under
// the key "invocation". The result is still plain JSON.
void write_json(const std::filesystem::path& path, std::string_view invocation,
                const ordered_json& body);
ordered_json read_json(const std::filesystem::path& path);

std::string hex64(double v);
double from_hex64(std::string_view s);

std::uint64_t fnv1a(std::string_view s);

}  // namespace msda::io
