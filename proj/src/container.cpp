#include "endonet/container.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace endonet::io {

std::uint32_t crc32(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large bodies.
  const char* p = bytes.data();
  std::size_t left = bytes.size();
  while (left > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_text_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ContainerError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ContainerError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string serialize_container(const std::string& kind, const nlohmann::json& body) {
  const std::string payload = body.dump();
  char header[128];
  std::snprintf(header, sizeof header, "crc32 %08x bytes %zu\n", crc32(payload), payload.size());
  return "ENDONET-CONTAINER " + std::to_string(kContainerVersion) + " " + kind + "\n" + header + payload;
}

void write_container(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& body) {
  write_text_atomic(path, serialize_container(kind, body));
}

nlohmann::json parse_container(std::string_view text, const std::string& expected_kind) {
  const auto nl1 = text.find('\n');
  if (nl1 == std::string_view::npos) throw ContainerError("container: truncated header");
  const auto nl2 = text.find('\n', nl1 + 1);
  if (nl2 == std::string_view::npos) throw ContainerError("container: truncated header");

  std::istringstream first{std::string(text.substr(0, nl1))};
  std::string magic, kind;
  int version = 0;
  first >> magic >> version >> kind;
  if (magic != "ENDONET-CONTAINER") throw ContainerError("container: bad magic");
  if (version != kContainerVersion)
    throw ContainerError("container: unsupported version " + std::to_string(version));
  if (kind != expected_kind) throw ContainerError("container: expected kind '" + expected_kind + "', found '" + kind + "'");

  std::istringstream second{std::string(text.substr(nl1 + 1, nl2 - nl1 - 1))};
  std::string crc_tag, bytes_tag;
  std::string crc_hex;
  std::size_t length = 0;
  second >> crc_tag >> crc_hex >> bytes_tag >> length;
  if (crc_tag != "crc32" || bytes_tag != "bytes") throw ContainerError("container: bad checksum line");

  const std::string_view payload = text.substr(nl2 + 1);
  if (payload.size() != length) throw ContainerError("container: payload length mismatch");
  const auto expected = static_cast<std::uint32_t>(std::stoul(crc_hex, nullptr, 16));
  if (crc32(payload) != expected) throw ContainerError("container: checksum mismatch");
  return nlohmann::json::parse(payload);
}

nlohmann::json read_container(const std::filesystem::path& path, const std::string& expected_kind) {
  return parse_container(read_text(path), expected_kind);
}

}  // namespace endonet::io
