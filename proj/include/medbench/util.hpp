#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace medbench {

// Error taxonomy mapped to CLI exit codes: DataError -> 1, UsageError -> 2,
// EndpointError -> 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EndpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, 64-bit. Used for fingerprints, config digests and split keys;
// stable across platforms, unlike std::hash.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string to_hex(std::uint64_t value);

// splitmix64 finalizer; turns a mixed seed into a well-distributed value.
std::uint64_t splitmix64(std::uint64_t x);

// Round half away from zero is NOT what we want; the contract is round
// half-up (0.5 -> 1, -0.5 -> 0), applied at serialization only.
long long round_half_up(double v);

// Fixed-point formatting ("%.2f" style) without locale surprises.
std::string format_fixed(double v, int decimals);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

std::string base64_encode(std::string_view bytes);

// "data:<mime>;base64,...." for an image payload; mime sniffed from magic
// bytes (png/jpeg/webp), defaulting to application/octet-stream.
std::string image_data_uri(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

std::vector<std::string> split_string(std::string_view s, char sep);

}  // namespace medbench
