#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace preempt::util {

// SHA-256 of `data`, lowercase hex.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);
std::optional<std::string> read_file_if_exists(const std::filesystem::path& path);

// Writes via a temp file in the same directory followed by rename, so readers
// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

// Unbiased uniform draw in [0, n) from a mt19937_64 stream. Uses the classic
// rejection method (retry while the raw draw falls below 2^64 mod n), so the
// result depends only on the generator's output sequence and is identical on
// every platform.
std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t n);

// First `take` positions of a Fisher-Yates shuffle of [0, size) driven by
// uniform_below. Deterministic for a given seed.
std::vector<std::size_t> sampled_indices(std::size_t size, std::size_t take, std::uint64_t seed);

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// FNV-1a, used to derive per-item sub-seeds from string ids.
std::uint64_t fnv1a64(std::string_view s);

}  // namespace preempt::util
