#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cir {

inline constexpr std::string_view kEmbeddingDtype = "f32le";
inline constexpr std::string_view kChecksumAlgorithm = "fnv1a64";

// Row-major f32 matrix of item embeddings with a parallel id list. Immutable
// once constructed; the constructor enforces every invariant.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t dims, std::vector<std::string> ids,
                  std::vector<float> values);

  std::size_t dims() const noexcept { return dims_; }
  std::size_t count() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const float> values() const noexcept { return values_; }

  std::span<const float> row(std::size_t i) const;
  /// Throws kUnknownId when absent.
  std::size_t index_of(std::string_view id) const;
  bool contains(std::string_view id) const;

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.dims_ == b.dims_ && a.ids_ == b.ids_ && a.values_ == b.values_;
  }

 private:
  std::size_t dims_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Manifest {
  std::size_t dims = 0;
  std::size_t count = 0;
  std::string dtype{kEmbeddingDtype};
  std::string values_file;
  std::string ids_file;
  /// "<algorithm>:<hex digest>" over the raw values file.
  std::string checksum;
};

/// Paths in the manifest are resolved relative to the manifest's directory.
EmbeddingMatrix load_embeddings(const std::filesystem::path& manifest_path);

/// Writes manifest.json, embeddings.f32 and ids.txt into dir.
Manifest save_embeddings(const EmbeddingMatrix& matrix,
                         const std::filesystem::path& dir);

Manifest read_manifest(const std::filesystem::path& manifest_path);

std::string checksum_bytes(std::span<const std::byte> bytes);

std::vector<double> l2_normalize(std::span<const double> v);
std::vector<double> l2_normalize(std::span<const float> v);

std::span<const float> lookup(const EmbeddingMatrix& matrix,
                              std::string_view id);

/// Cosine similarity as the dot product of the two normalized vectors.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace cir
