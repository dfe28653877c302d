#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fleetlab {

std::optional<std::string> read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);  // throws

std::string to_hex(const unsigned char* data, std::size_t len);

std::string base64_encode(std::string_view data);
// Returns nullopt on any malformed input (bad alphabet, bad padding).
std::optional<std::string> base64_decode(std::string_view text);

// Unix wall-clock time in milliseconds.
std::int64_t now_unix_ms();

// Monotonic clock for measuring durations.
inline std::chrono::steady_clock::time_point mono_now() {
    return std::chrono::steady_clock::now();
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(mono_now() - start).count();
}

// FNV-1a, used to derive per-signal stream seeds.
std::uint64_t fnv1a64(std::string_view text);

// splitmix64, used to expand user seeds into generator state.
std::uint64_t splitmix64(std::uint64_t x);

// Identifiers that end up in file names and message routing (user ids,
// client ids) are restricted to a safe charset.
bool is_safe_identifier(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);

}  // namespace fleetlab
