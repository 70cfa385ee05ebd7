#include "subscale/report.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "subscale/error.hpp"

namespace subscale {

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::string file_fingerprint(const std::filesystem::path& path) { return fnv1a_hex(read_file(path)); }

nlohmann::json write_bundle(const std::filesystem::path& dir, const ReportBundle& bundle) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json outputs = nlohmann::json::array();
  auto emit = [&](const NamedPayload& p, const char* kind) {
    if (p.name.empty() || p.name == "manifest.json" || p.name.find('/') != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "bad artifact name '" + p.name + "'");
    }
    write_file(dir / p.name, p.content);
    outputs.push_back({{"name", p.name}, {"kind", kind}, {"fnv1a64", fnv1a_hex(p.content)}});
  };
  for (const auto& t : bundle.tables) emit(t, "table");
  for (const auto& p : bundle.plots) emit(p, "plot");

  nlohmann::json manifest = bundle.manifest;
  manifest["tool"] = kToolName;
  manifest["version"] = kToolVersion;
  manifest["outputs"] = outputs;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

}  // namespace subscale
