#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace recondet {

// Configuration / usage problems (bad file, bad key, bad flag). CLI exit 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required artifact (checkpoint, cache, dataset) is missing. CLI exit 2.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or insufficient data (empty slice, unknown model name, broken layout).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Divergence or numerical failure during training / optimization.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit over raw bytes. Used for checkpoint / report digests.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

std::string to_hex(std::uint64_t v);

// Digest of a file's raw contents; throws ConfigError if unreadable.
std::uint64_t file_digest(const std::string& path);

// Writes through a sibling .tmp file and renames, so readers never observe
// a half-written artifact.
void atomic_write_text(const std::string& path, std::string_view text);

}  // namespace recondet
