#include "cir/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "cir/error.hpp"
#include "json.hpp"

namespace cir {
namespace {

using nlohmann::ordered_json;

void check_k(std::size_t k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "K must be >= 1");
}

void check_percent(double v, const char* what) {
  if (!(v >= 0.0 && v <= 100.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(what) + " must be a percentage in [0, 100]");
  }
}

ordered_json k_map_to_json(const std::map<std::size_t, double>& m) {
  ordered_json out = ordered_json::object();
  for (const auto& [k, v] : m) out[std::to_string(k)] = v;
  return out;
}

std::map<std::size_t, double> k_map_from_json(const ordered_json& j) {
  std::map<std::size_t, double> out;
  for (const auto& [key, v] : j.items()) {
    std::size_t pos = 0;
    const unsigned long k = std::stoul(key, &pos);
    if (pos != key.size() || k == 0) {
      throw Error(ErrorCode::kParse, "bad K key '" + key + "'");
    }
    out[k] = v.get<double>();
  }
  return out;
}

}  // namespace

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  check_k(k);
  if (ranks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "recall of an empty rank list");
  }
  std::size_t hits = 0;
  for (auto r : ranks) {
    if (r < 1) throw Error(ErrorCode::kInvalidArgument, "ranks are 1-based");
    if (r <= k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double subset_recall_at_k(std::span<const std::size_t> subset_ranks,
                          std::size_t k) {
  return recall_at_k(subset_ranks, k);
}

double ap_at_k(std::span<const std::string> ranked_ids,
               const std::unordered_set<std::string>& gt_ids, std::size_t k) {
  check_k(k);
  if (gt_ids.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "AP needs a ground-truth set");
  }
  const std::size_t n = std::min(k, ranked_ids.size());
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt_ids.count(ranked_ids[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(gt_ids.size(), k));
}

double map_at_k(std::span<const std::vector<std::string>> ranked_ids,
                std::span<const std::unordered_set<std::string>> gt_ids,
                std::size_t k) {
  if (ranked_ids.size() != gt_ids.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::to_string(ranked_ids.size()) + " rankings for " +
                    std::to_string(gt_ids.size()) + " ground-truth sets");
  }
  if (ranked_ids.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "mAP over zero queries");
  }
  double sum = 0.0;
  for (std::size_t q = 0; q < ranked_ids.size(); ++q) {
    sum += ap_at_k(ranked_ids[q], gt_ids[q], k);
  }
  return sum / static_cast<double>(ranked_ids.size());
}

double cirr_average(double r5, double rs1) {
  check_percent(r5, "R@5");
  check_percent(rs1, "R_subset@1");
  return (r5 + rs1) / 2.0;
}

double fiq_average(std::span<const double> per_category) {
  if (per_category.size() != 3) {
    throw Error(ErrorCode::kInvalidArgument,
                "expected 3 category values, got " +
                    std::to_string(per_category.size()));
  }
  return (per_category[0] + per_category[1] + per_category[2]) / 3.0;
}

std::string format_percent(double value) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kNonFinite, "cannot format a non-finite value");
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

void validate(const EvalReport& r) {
  auto fail = [](const std::string& m) {
    throw Error(ErrorCode::kInvariantViolation, "report: " + m);
  };
  auto check_recalls = [&](const std::map<std::size_t, double>& m,
                           const char* name) {
    double prev = 0.0;
    for (const auto& [k, v] : m) {
      if (!(v >= 0.0 && v <= 100.0)) fail(std::string(name) + " outside [0,100]");
      if (v < prev) fail(std::string(name) + " decreases with K");
      prev = v;
    }
  };
  check_recalls(r.recall, "recall");
  check_recalls(r.subset_recall, "subset recall");
  for (const auto& [k, v] : r.map) {
    if (!(v >= 0.0 && v <= 1.0)) fail("mAP@" + std::to_string(k) + " outside [0,1]");
  }
  if (r.has_cirr_average) {
    const auto a = r.recall.find(5);
    const auto b = r.subset_recall.find(1);
    if (a == r.recall.end() || b == r.subset_recall.end()) {
      fail("cirr_average without R@5 and R_subset@1");
    }
    const double lo = std::min(a->second, b->second);
    const double hi = std::max(a->second, b->second);
    if (r.cirr_avg < lo || r.cirr_avg > hi) fail("cirr_average out of range");
  }
}

std::string to_json(const EvalReport& r) {
  ordered_json j;
  j["query_count"] = r.query_count;
  j["recall"] = k_map_to_json(r.recall);
  j["subset_recall"] = k_map_to_json(r.subset_recall);
  j["map"] = k_map_to_json(r.map);
  if (r.has_cirr_average) {
    j["cirr_average"] = r.cirr_avg;
  } else {
    j["cirr_average"] = nullptr;
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  EvalReport r;
  try {
    const auto j = ordered_json::parse(text);
    r.query_count = j.at("query_count").get<std::size_t>();
    r.recall = k_map_from_json(j.at("recall"));
    r.subset_recall = k_map_from_json(j.at("subset_recall"));
    r.map = k_map_from_json(j.at("map"));
    const auto& c = j.at("cirr_average");
    if (!c.is_null()) {
      r.has_cirr_average = true;
      r.cirr_avg = c.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("bad report: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::kParse, std::string("bad report: ") + e.what());
  }
  validate(r);
  return r;
}

}  // namespace cir
