#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cir/dataset.hpp"
#include "cir/metrics.hpp"
#include "cir/model.hpp"
#include "cir/retrieval.hpp"

namespace cir {

struct EvalOptions {
  std::vector<std::size_t> k_list{1, 5, 10, 50};
  std::vector<std::size_t> subset_k_list{1, 2, 3};
  std::vector<std::size_t> map_k_list{5, 10, 25, 50};
};

/// Throws kInvalidArgument unless every list is strictly increasing and
/// positive.
void validate(const EvalOptions& o);

struct QueryResult {
  std::string pair_id;
  RankedList top;
};

struct Evaluation {
  EvalReport report;
  std::vector<QueryResult> results;
};

/// Scores precomputed query vectors (row j for triplet j) against an index.
/// K values larger than the gallery are clamped for the top-k export only.
Evaluation evaluate_queries(const GalleryIndex& idx, const Tensor& queries,
                            std::span<const Triplet> triplets,
                            const EvalOptions& options);

/// Gallery rows projected through the model's image projection.
GalleryIndex build_model_index(const ParamSet& p,
                               const EmbeddingMatrix& gallery);

/// e_q for every triplet.
Tensor compose_queries(const ParamSet& p, const EmbeddingMatrix& gallery,
                       std::span<const Triplet> triplets);

Evaluation evaluate_model(const ParamSet& p, const EmbeddingMatrix& gallery,
                          std::span<const Triplet> triplets,
                          const EvalOptions& options);

/// {pair_id, ranked_ids, scores} per line.
std::string results_to_jsonl(std::span<const QueryResult> results);

}  // namespace cir
