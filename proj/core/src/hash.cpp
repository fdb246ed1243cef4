#include "cir/hash.hpp"

namespace cir {

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t h) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= kFnv64Prime;
  }
  return h;
}

}  // namespace cir
