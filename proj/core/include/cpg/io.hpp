#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cpg {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// FNV-1a over a byte stream; used for run manifests and determinism checks.
std::uint64_t fnv1a(const std::uint8_t* data, std::size_t len,
                    std::uint64_t seed = 1469598103934665603ull);
std::uint64_t fnv1a_str(const std::string& s);
std::string hex64(std::uint64_t v);
std::uint64_t file_digest(const std::string& path);  // throws if unreadable

// Per-record RNG derivation: serial and parallel generation agree bit-for-bit.
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream_id);

// Minimal RGB8 PNG writer (zlib deflate), for human inspection dumps.
void write_png(const std::string& path, const std::vector<std::uint8_t>& rgb,
               int width, int height);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace cpg
