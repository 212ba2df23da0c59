#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace endonet::io {

inline constexpr int kContainerVersion = 1;

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32(std::string_view bytes);

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_text(const std::filesystem::path& path);

/// Versioned, checksummed model container:
///   line 1: "ENDONET-CONTAINER <version> <kind>"
///   line 2: "crc32 <hex> bytes <n>"
///   rest:   JSON body of exactly n bytes
void write_container(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& body);
std::string serialize_container(const std::string& kind, const nlohmann::json& body);

/// Throws ContainerError on a missing file, wrong kind, unsupported version,
/// or checksum mismatch.
nlohmann::json read_container(const std::filesystem::path& path, const std::string& expected_kind);
nlohmann::json parse_container(std::string_view text, const std::string& expected_kind);

}  // namespace endonet::io
