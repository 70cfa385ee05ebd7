#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace subscale {

inline constexpr std::string_view kToolName = "subscale";
inline constexpr std::string_view kToolVersion = "0.1.0";

struct NamedPayload {
  std::string name;  // file name inside the output directory
  std::string content;
};

struct ReportBundle {
  std::vector<NamedPayload> tables;  // CSV, JSON and plain-text artifacts
  std::vector<NamedPayload> plots;   // SVG documents
  nlohmann::json manifest = nlohmann::json::object();
};

// 64-bit FNV-1a, hex encoded. Used to fingerprint inputs and outputs.
std::string fnv1a_hex(std::string_view bytes);
std::string file_fingerprint(const std::filesystem::path& path);

// Writes every payload, then manifest.json with an "outputs" array listing
// each file (name, kind, fnv1a64). Returns the manifest as written.
nlohmann::json write_bundle(const std::filesystem::path& dir, const ReportBundle& bundle);

// Reads a whole file; throws Error{Io} on failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace subscale
