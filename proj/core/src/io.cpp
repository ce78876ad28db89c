#include "msda/io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

#include "msda/errors.hpp"

namespace msda::io {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_json(const std::filesystem::path& path, std::string_view invocation,
                const ordered_json& body) {
  std::string text = "{\"invocation\": " + ordered_json(invocation).dump();
  ordered_json rest = ordered_json::object();
  for (const auto& [k, v] : body.items())
    if (k != "invocation") rest[k] = v;
  if (rest.empty()) {
    text += "}\n";
  } else {
    const std::string dumped = rest.dump(2);  // "{\n  ...\n}"
    text += ",\n" + dumped.substr(2) + "\n";
  }
  write_text(path, text);
}

ordered_json read_json(const std::filesystem::path& path) {
  try {
    return ordered_json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string hex64(double v) {
  char buf[17];
  const auto bits = std::bit_cast<std::uint64_t>(v);
  auto [end, ec] = std::to_chars(buf, buf + 16, bits, 16);
  std::string s(buf, end);
  return std::string(16 - s.size(), '0') + s;
}

double from_hex64(std::string_view s) {
  std::uint64_t bits = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), bits, 16);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.size() != 16)
    throw CheckpointError("malformed hex value '" + std::string(s) + "'");
  return std::bit_cast<double>(bits);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace msda::io
