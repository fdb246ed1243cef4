#include "cir/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cir/error.hpp"
#include "json.hpp"

namespace cir {
namespace {

void check_k_list(const std::vector<std::size_t>& ks, const char* name) {
  if (ks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, std::string(name) + " is empty");
  }
  std::size_t prev = 0;
  for (auto k : ks) {
    if (k <= prev) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string(name) + " must be strictly increasing positives");
    }
    prev = k;
  }
}

}  // namespace

void validate(const EvalOptions& o) {
  check_k_list(o.k_list, "k_list");
  check_k_list(o.subset_k_list, "subset_k_list");
  check_k_list(o.map_k_list, "map_k_list");
}

Evaluation evaluate_queries(const GalleryIndex& idx, const Tensor& queries,
                            std::span<const Triplet> triplets,
                            const EvalOptions& options) {
  validate(options);
  if (triplets.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty query set");
  }
  if (queries.rows != triplets.size()) {
    throw Error(ErrorCode::kCountMismatch,
                std::to_string(queries.rows) + " query vectors for " +
                    std::to_string(triplets.size()) + " triplets");
  }
  if (queries.cols != idx.dims()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query dims " + std::to_string(queries.cols) +
                    " != index dims " + std::to_string(idx.dims()));
  }

  const std::size_t n_items = idx.size();
  const std::size_t export_k =
      std::min(n_items, std::max(options.k_list.back(), options.map_k_list.back()));
  const auto& ids = idx.ids();

  std::vector<std::size_t> ranks;
  std::vector<std::size_t> subset_ranks;
  std::vector<std::vector<std::string>> ranked_ids;
  std::vector<std::unordered_set<std::string>> gts;
  Evaluation ev;
  std::vector<std::size_t> order(n_items);

  for (std::size_t j = 0; j < triplets.size(); ++j) {
    const Triplet& t = triplets[j];
    validate(t);
    const std::size_t target = idx.index_of(t.target_id);
    idx.index_of(t.reference_id);
    const auto s = idx.scores(l2_normalize(queries.row(j)));

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ranks_before(s[a], ids[a], s[b], ids[b]);
    });
    const auto pos = std::find(order.begin(), order.end(), target);
    ranks.push_back(static_cast<std::size_t>(pos - order.begin()) + 1);

    if (t.subset_ids) {
      std::size_t r = 1;
      for (const auto& id : *t.subset_ids) {
        const auto i = idx.index_of(id);
        if (i != target && ranks_before(s[i], ids[i], s[target], ids[target])) {
          ++r;
        }
      }
      subset_ranks.push_back(r);
    }

    QueryResult qr{t.pair_id, {}};
    auto& top_ids = ranked_ids.emplace_back();
    for (std::size_t i = 0; i < export_k; ++i) {
      qr.top.push_back({ids[order[i]], s[order[i]]});
      top_ids.push_back(ids[order[i]]);
    }
    if (t.gt_ids) {
      gts.emplace_back(t.gt_ids->begin(), t.gt_ids->end());
    } else {
      gts.push_back({t.target_id});
    }
    ev.results.push_back(std::move(qr));
  }

  EvalReport& r = ev.report;
  r.query_count = triplets.size();
  for (auto k : options.k_list) r.recall[k] = recall_at_k(ranks, k);
  if (!subset_ranks.empty()) {
    for (auto k : options.subset_k_list) {
      r.subset_recall[k] = subset_recall_at_k(subset_ranks, k);
    }
  }
  for (auto k : options.map_k_list) r.map[k] = map_at_k(ranked_ids, gts, k);
  const auto r5 = r.recall.find(5);
  const auto rs1 = r.subset_recall.find(1);
  if (r5 != r.recall.end() && rs1 != r.subset_recall.end()) {
    r.has_cirr_average = true;
    r.cirr_avg = cirr_average(r5->second, rs1->second);
  }
  validate(r);
  return ev;
}

GalleryIndex build_model_index(const ParamSet& p,
                               const EmbeddingMatrix& gallery) {
  if (gallery.dims() != p.dims.image_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "gallery dims " + std::to_string(gallery.dims()) +
                    " != model image_dim " + std::to_string(p.dims.image_dim));
  }
  Tensor rows(gallery.count(), p.dims.embed_dim);
  for (std::size_t i = 0; i < gallery.count(); ++i) {
    const Vec v = project_image(p, gallery.row(i));
    std::copy(v.begin(), v.end(), rows.row(i).begin());
  }
  return build_index(gallery.ids(), rows);
}

Tensor compose_queries(const ParamSet& p, const EmbeddingMatrix& gallery,
                       std::span<const Triplet> triplets) {
  if (gallery.dims() != p.dims.image_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "gallery dims " + std::to_string(gallery.dims()) +
                    " != model image_dim " + std::to_string(p.dims.image_dim));
  }
  Tensor out(triplets.size(), p.dims.embed_dim);
  for (std::size_t j = 0; j < triplets.size(); ++j) {
    const auto toks = tokenize(triplets[j].modification_text, p.dims.vocab_size);
    const Vec txt = encode_text(p, toks);
    const Vec q = compose_query(p, lookup(gallery, triplets[j].reference_id), txt);
    std::copy(q.begin(), q.end(), out.row(j).begin());
  }
  return out;
}

Evaluation evaluate_model(const ParamSet& p, const EmbeddingMatrix& gallery,
                          std::span<const Triplet> triplets,
                          const EvalOptions& options) {
  validate(options);
  if (triplets.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty query set");
  }
  const GalleryIndex idx = build_model_index(p, gallery);
  return evaluate_queries(idx, compose_queries(p, gallery, triplets), triplets,
                          options);
}

std::string results_to_jsonl(std::span<const QueryResult> results) {
  std::string out;
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["pair_id"] = r.pair_id;
    auto ids = nlohmann::ordered_json::array();
    auto scores = nlohmann::ordered_json::array();
    for (const auto& item : r.top) {
      ids.push_back(item.id);
      scores.push_back(item.score);
    }
    j["ranked_ids"] = std::move(ids);
    j["scores"] = std::move(scores);
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace cir
