#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace lda {

// Flat array-of-float64 files, little-endian byte order regardless of host,
// paired with a JSON sidecar describing the layout.  Bytes are moved with
// memcpy and never formatted, so a write/read round trip is bit-exact.
void write_f64(const std::filesystem::path& path, const double* data, std::size_t count);
std::vector<double> read_f64(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace lda
