#include "cir/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cir/error.hpp"

namespace cir {
namespace {

std::vector<double> unit_query(const GalleryIndex& idx,
                               std::span<const double> q) {
  if (q.size() != idx.dims()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query has " + std::to_string(q.size()) + " dims, index has " +
                    std::to_string(idx.dims()));
  }
  for (double x : q) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::kNonFinite, "query has a non-finite value");
    }
  }
  return l2_normalize(q);
}

}  // namespace

std::size_t GalleryIndex::index_of(std::string_view id) const {
  auto it = id_to_row_.find(std::string(id));
  if (it == id_to_row_.end()) {
    throw Error(ErrorCode::kUnknownId, "id '" + std::string(id) +
                                           "' is not in the gallery");
  }
  return it->second;
}

std::vector<double> GalleryIndex::scores(
    std::span<const double> unit_query) const {
  if (unit_query.size() != dims()) {
    throw Error(ErrorCode::kDimensionMismatch, "query/index dims differ");
  }
  std::vector<double> out(size());
  for (std::size_t r = 0; r < size(); ++r) {
    const double* row = &rows_.data[r * rows_.cols];
    double dot = 0.0;
    for (std::size_t i = 0; i < rows_.cols; ++i) dot += row[i] * unit_query[i];
    out[r] = dot;
  }
  return out;
}

GalleryIndex build_index(std::vector<std::string> ids, const Tensor& rows) {
  if (ids.size() != rows.rows) {
    throw Error(ErrorCode::kCountMismatch,
                std::to_string(ids.size()) + " ids for " +
                    std::to_string(rows.rows) + " rows");
  }
  if (rows.cols == 0) {
    throw Error(ErrorCode::kInvalidArgument, "index rows must be non-empty");
  }
  GalleryIndex idx;
  idx.rows_ = Tensor(rows.rows, rows.cols);
  for (std::size_t r = 0; r < rows.rows; ++r) {
    std::vector<double> unit;
    try {
      unit = l2_normalize(rows.row(r));
    } catch (const Error&) {
      throw Error(ErrorCode::kDegenerateInput,
                  "gallery item '" + ids[r] + "' has a zero embedding");
    }
    std::copy(unit.begin(), unit.end(), idx.rows_.row(r).begin());
    if (!idx.id_to_row_.emplace(ids[r], r).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate id '" + ids[r] + "'");
    }
  }
  idx.ids_ = std::move(ids);
  return idx;
}

GalleryIndex build_index(const EmbeddingMatrix& m) {
  Tensor rows(m.count(), m.dims());
  for (std::size_t r = 0; r < m.count(); ++r) {
    const auto src = m.row(r);
    std::copy(src.begin(), src.end(), rows.row(r).begin());
  }
  return build_index(m.ids(), rows);
}

RankedList search_topk(const GalleryIndex& idx, std::span<const double> q,
                       std::size_t k) {
  if (k < 1 || k > idx.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "k = " + std::to_string(k) + " outside [1, " +
                    std::to_string(idx.size()) + "]");
  }
  const auto s = idx.scores(unit_query(idx, q));
  const auto& ids = idx.ids();
  std::vector<std::size_t> order(idx.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      return ranks_before(s[a], ids[a], s[b], ids[b]);
                    });
  RankedList out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({ids[order[i]], s[order[i]]});
  }
  return out;
}

std::vector<RankedList> search_topk_batch(const GalleryIndex& idx,
                                          const Tensor& queries,
                                          std::size_t k) {
  std::vector<RankedList> out;
  out.reserve(queries.rows);
  for (std::size_t j = 0; j < queries.rows; ++j) {
    out.push_back(search_topk(idx, queries.row(j), k));
  }
  return out;
}

std::size_t rank_of(const GalleryIndex& idx, std::span<const double> q,
                    std::string_view target_id) {
  const std::size_t t = idx.index_of(target_id);
  const auto s = idx.scores(unit_query(idx, q));
  const auto& ids = idx.ids();
  std::size_t rank = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != t && ranks_before(s[i], ids[i], s[t], ids[t])) ++rank;
  }
  return rank;
}

std::size_t subset_rank(const GalleryIndex& idx, std::span<const double> q,
                        std::span<const std::string> subset_ids,
                        std::string_view target_id) {
  std::unordered_set<std::string_view> seen;
  bool has_target = false;
  for (const auto& id : subset_ids) {
    idx.index_of(id);
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kDuplicateId,
                  "subset lists '" + id + "' more than once");
    }
    has_target = has_target || id == target_id;
  }
  if (!has_target) {
    throw Error(ErrorCode::kInvalidArgument,
                "target '" + std::string(target_id) + "' is not in its subset");
  }
  const auto uq = unit_query(idx, q);
  const auto t = idx.index_of(target_id);
  const auto& ids = idx.ids();
  const auto st = idx.scores(uq);
  std::size_t rank = 1;
  for (const auto& id : subset_ids) {
    const auto i = idx.index_of(id);
    if (i != t && ranks_before(st[i], ids[i], st[t], ids[t])) ++rank;
  }
  return rank;
}

}  // namespace cir
