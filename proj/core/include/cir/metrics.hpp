#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace cir {

/// Percent of ranks <= k, at full precision.
double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);

/// recall_at_k over ranks computed inside each query's candidate subset.
double subset_recall_at_k(std::span<const std::size_t> subset_ranks,
                          std::size_t k);

/// Truncated average precision normalized by min(|G|, k).
double ap_at_k(std::span<const std::string> ranked_ids,
               const std::unordered_set<std::string>& gt_ids, std::size_t k);

double map_at_k(std::span<const std::vector<std::string>> ranked_ids,
                std::span<const std::unordered_set<std::string>> gt_ids,
                std::size_t k);

/// (R@5 + R_subset@1) / 2
double cirr_average(double r5, double rs1);

/// Mean over the three fashion categories.
double fiq_average(std::span<const double> per_category);

/// Fixed two-decimal display; ties resolve half-to-even on the binary value.
std::string format_percent(double value);

struct EvalReport {
  std::size_t query_count = 0;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> subset_recall;
  std::map<std::size_t, double> map;
  /// Present when R@5 and R_subset@1 are both reported.
  bool has_cirr_average = false;
  double cirr_avg = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Throws kInvariantViolation if any bound in the report is broken.
void validate(const EvalReport& r);

/// Single JSON document with a stable key order.
std::string to_json(const EvalReport& r);
EvalReport report_from_json(std::string_view text);

}  // namespace cir
