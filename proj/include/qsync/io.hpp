#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qsync {

using json = nlohmann::json;

/// Shortest decimal that parses back to exactly `value`.
std::string format_double(double value);

/// Strict parse of a whole field; throws ParseError carrying `line`.
double parse_double(std::string_view field, std::size_t line);

std::vector<std::string_view> split_csv_line(std::string_view line);

/// FNV-1a 64-bit, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

/// Hash of the canonical (sorted-key, compact) JSON dump.
std::string json_hash(const json& value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

/// SplitMix64 finalizer, used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Library version string recorded in manifests.
const char* version();

}  // namespace qsync
