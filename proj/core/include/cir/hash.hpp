#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace cir {

inline constexpr std::uint32_t kFnv32Offset = 2166136261u;
inline constexpr std::uint32_t kFnv32Prime = 16777619u;
inline constexpr std::uint64_t kFnv64Offset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnv64Prime = 1099511628211ull;

/// 32-bit FNV-1a over raw bytes. Token ids are derived from it.
constexpr std::uint32_t fnv1a32(std::string_view bytes,
                                std::uint32_t h = kFnv32Offset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnv32Prime;
  }
  return h;
}

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = kFnv64Offset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnv64Prime;
  }
  return h;
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t h = kFnv64Offset);

/// splitmix64 finalizer; used to derive well-mixed sub-seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace cir
