#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cir/embedding_store.hpp"
#include "cir/tensor.hpp"

namespace cir {

struct ScoredItem {
  std::string id;
  double score = 0.0;
  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

/// Ordered by score descending, ties by ascending id.
using RankedList = std::vector<ScoredItem>;

/// Strict weak ordering used by every ranking in the library.
inline bool ranks_before(double score_a, std::string_view id_a, double score_b,
                         std::string_view id_b) {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

// Exact cosine index: every row is unit-norm, scoring is a dot product.
class GalleryIndex {
 public:
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dims() const noexcept { return rows_.cols; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const double> row(std::size_t i) const { return rows_.row(i); }
  /// Throws kUnknownId.
  std::size_t index_of(std::string_view id) const;

  /// Cosine score of every row against an already-normalized query.
  std::vector<double> scores(std::span<const double> unit_query) const;

 private:
  friend GalleryIndex build_index(const EmbeddingMatrix& m);
  friend GalleryIndex build_index(std::vector<std::string> ids,
                                  const Tensor& rows);

  Tensor rows_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> id_to_row_;
};

/// Throws kDegenerateInput naming the first zero row.
GalleryIndex build_index(const EmbeddingMatrix& m);
GalleryIndex build_index(std::vector<std::string> ids, const Tensor& rows);

RankedList search_topk(const GalleryIndex& idx, std::span<const double> q,
                       std::size_t k);

/// Position-aligned with queries.
std::vector<RankedList> search_topk_batch(const GalleryIndex& idx,
                                          const Tensor& queries, std::size_t k);

/// 1-based rank of target among all gallery items.
std::size_t rank_of(const GalleryIndex& idx, std::span<const double> q,
                    std::string_view target_id);

/// 1-based rank of target among subset members only.
std::size_t subset_rank(const GalleryIndex& idx, std::span<const double> q,
                        std::span<const std::string> subset_ids,
                        std::string_view target_id);

}  // namespace cir
