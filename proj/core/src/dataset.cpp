#include "cir/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "cir/error.hpp"
#include "cir/hash.hpp"
#include "json.hpp"

namespace cir {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

bool is_separator(unsigned char c) {
  return c <= 0x20 || (c < 0x80 && std::ispunct(c));
}

bool has_duplicates(const std::vector<std::string>& ids) {
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) return true;
  }
  return false;
}

template <typename T, typename Parse>
std::vector<T> read_jsonl(const fs::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::vector<T> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, where + ": malformed JSON: " + e.what());
    }
    try {
      out.push_back(parse(j));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
  }
  return out;
}

void write_lines(const fs::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& j : rows) out << j.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

json triplet_to_json(const Triplet& t) {
  json j;
  j["pair_id"] = t.pair_id;
  j["reference_id"] = t.reference_id;
  j["modification_text"] = t.modification_text;
  j["target_id"] = t.target_id;
  if (t.subset_ids) j["subset_ids"] = *t.subset_ids;
  if (t.gt_ids) j["gt_ids"] = *t.gt_ids;
  if (t.reference_descriptor) j["reference_descriptor"] = *t.reference_descriptor;
  if (t.target_descriptor) j["target_descriptor"] = *t.target_descriptor;
  return j;
}

Triplet triplet_from_json(const json& j) {
  Triplet t;
  t.pair_id = j.at("pair_id").get<std::string>();
  t.reference_id = j.at("reference_id").get<std::string>();
  t.modification_text = j.at("modification_text").get<std::string>();
  t.target_id = j.at("target_id").get<std::string>();
  if (j.contains("subset_ids") && !j["subset_ids"].is_null()) {
    t.subset_ids = j["subset_ids"].get<std::vector<std::string>>();
  }
  if (j.contains("gt_ids") && !j["gt_ids"].is_null()) {
    t.gt_ids = j["gt_ids"].get<std::vector<std::string>>();
  }
  if (j.contains("reference_descriptor")) {
    t.reference_descriptor = j["reference_descriptor"].get<std::string>();
  }
  if (j.contains("target_descriptor")) {
    t.target_descriptor = j["target_descriptor"].get<std::string>();
  }
  validate(t);
  return t;
}

}  // namespace

void validate(const Triplet& t) {
  if (t.reference_id == t.target_id) {
    throw Error(ErrorCode::kInvariantViolation,
                "triplet '" + t.pair_id + "': reference_id equals target_id");
  }
  auto check_list = [&](const std::optional<std::vector<std::string>>& ids,
                        const char* name) {
    if (!ids) return;
    if (std::find(ids->begin(), ids->end(), t.target_id) == ids->end()) {
      throw Error(ErrorCode::kInvariantViolation,
                  "triplet '" + t.pair_id + "': target not in " + name);
    }
    if (has_duplicates(*ids)) {
      throw Error(ErrorCode::kInvariantViolation,
                  "triplet '" + t.pair_id + "': duplicate ids in " + name);
    }
  };
  check_list(t.subset_ids, "subset_ids");
  check_list(t.gt_ids, "gt_ids");
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_separator(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::uint32_t token_id(std::string_view word, std::uint32_t vocab_size) {
  if (vocab_size < 2) {
    throw Error(ErrorCode::kInvalidArgument, "vocab size must be >= 2");
  }
  return 1 + fnv1a32(word) % (vocab_size - 1);
}

TokenSeq tokenize(std::string_view text, std::uint32_t vocab_size) {
  if (vocab_size < 2) {
    throw Error(ErrorCode::kInvalidArgument, "vocab size must be >= 2");
  }
  TokenSeq out;
  for (const auto& w : split_words(text)) out.push_back(token_id(w, vocab_size));
  return out;
}

std::vector<Triplet> load_triplets(const fs::path& path) {
  return read_jsonl<Triplet>(path, triplet_from_json);
}

void write_triplets(const fs::path& path, std::span<const Triplet> triplets) {
  std::vector<json> rows;
  rows.reserve(triplets.size());
  for (const auto& t : triplets) rows.push_back(triplet_to_json(t));
  write_lines(path, rows);
}

std::vector<CoTAnnotation> load_annotations(const fs::path& path) {
  return read_jsonl<CoTAnnotation>(path, [](const json& j) {
    CoTAnnotation a;
    a.pair_id = j.at("pair_id").get<std::string>();
    a.caption = j.at("caption").get<std::string>();
    a.reasoning_steps = j.at("reasoning_steps").get<std::vector<std::string>>();
    a.conclusion = j.at("conclusion").get<std::string>();
    a.judge_scores = j.value("judge_scores", std::vector<int>{});
    a.accepted = j.value("accepted", false);
    for (int s : a.judge_scores) {
      if (s < 1 || s > 5) {
        throw Error(ErrorCode::kInvariantViolation,
                    "judge score " + std::to_string(s) + " outside 1..5");
      }
    }
    if (a.accepted && (a.caption.empty() || a.conclusion.empty() ||
                       a.reasoning_steps.empty())) {
      throw Error(ErrorCode::kInvariantViolation,
                  "accepted annotation '" + a.pair_id + "' is incomplete");
    }
    return a;
  });
}

void write_annotations(const fs::path& path,
                       std::span<const CoTAnnotation> annotations) {
  std::vector<json> rows;
  rows.reserve(annotations.size());
  for (const auto& a : annotations) {
    json j;
    j["pair_id"] = a.pair_id;
    j["caption"] = a.caption;
    j["reasoning_steps"] = a.reasoning_steps;
    j["conclusion"] = a.conclusion;
    j["judge_scores"] = a.judge_scores;
    j["accepted"] = a.accepted;
    rows.push_back(std::move(j));
  }
  write_lines(path, rows);
}

std::vector<NliPair> load_nli_pairs(const fs::path& path) {
  return read_jsonl<NliPair>(path, [](const json& j) {
    return NliPair{j.at("premise").get<std::string>(),
                   j.at("positive").get<std::string>()};
  });
}

void write_nli_pairs(const fs::path& path, std::span<const NliPair> pairs) {
  std::vector<json> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) {
    rows.push_back(json{{"premise", p.premise}, {"positive", p.positive}});
  }
  write_lines(path, rows);
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed) {
  if (batch_size == 0) {
    throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::pair<std::vector<Triplet>, std::vector<Triplet>> split_holdout(
    std::span<const Triplet> triplets, std::size_t n_test) {
  if (n_test > triplets.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "holdout larger than the triplet list");
  }
  const auto cut = triplets.begin() +
                   static_cast<std::ptrdiff_t>(triplets.size() - n_test);
  return {std::vector<Triplet>(triplets.begin(), cut),
          std::vector<Triplet>(cut, triplets.end())};
}

}  // namespace cir
