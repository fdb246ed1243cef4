#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cir/embedding_store.hpp"
#include "cir/rng.hpp"

namespace cir {

inline constexpr std::uint32_t kDefaultVocabSize = 4096;
inline constexpr std::uint32_t kEosToken = 0;

// One composed-retrieval query: reference item + modification text -> target.
struct Triplet {
  std::string pair_id;
  std::string reference_id;
  std::string modification_text;
  std::string target_id;
  /// CIRR-style candidate subset; contains the target.
  std::optional<std::vector<std::string>> subset_ids;
  /// CIRCO-style multiple ground truths; contains the target.
  std::optional<std::vector<std::string>> gt_ids;
  /// Text stand-ins for the reference and target images.
  std::optional<std::string> reference_descriptor;
  std::optional<std::string> target_descriptor;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Throws kInvariantViolation describing the first violated rule.
void validate(const Triplet& t);

struct CoTAnnotation {
  std::string pair_id;
  std::string caption;
  std::vector<std::string> reasoning_steps;
  std::string conclusion;
  std::vector<int> judge_scores;
  bool accepted = false;

  friend bool operator==(const CoTAnnotation&, const CoTAnnotation&) = default;
};

using TokenSeq = std::vector<std::uint32_t>;

/// Lowercases ASCII, splits on whitespace and ASCII punctuation, and hashes
/// each word with 32-bit FNV-1a into [1, vocab_size). Id 0 is reserved for EOS.
TokenSeq tokenize(std::string_view text, std::uint32_t vocab_size);

/// The lowercase words tokenize() would hash, in order.
std::vector<std::string> split_words(std::string_view text);

std::uint32_t token_id(std::string_view word, std::uint32_t vocab_size);

std::vector<Triplet> load_triplets(const std::filesystem::path& path);
void write_triplets(const std::filesystem::path& path,
                    std::span<const Triplet> triplets);

std::vector<CoTAnnotation> load_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       std::span<const CoTAnnotation> annotations);

struct NliPair {
  std::string premise;
  std::string positive;
  friend bool operator==(const NliPair&, const NliPair&) = default;
};

std::vector<NliPair> load_nli_pairs(const std::filesystem::path& path);
void write_nli_pairs(const std::filesystem::path& path,
                     std::span<const NliPair> pairs);

/// Seeded shuffle of [0, n) cut into contiguous batches; the short tail batch
/// is kept. Throws kInvalidArgument for batch_size == 0.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed);

template <typename T>
std::vector<std::vector<T>> batch_iter(std::span<const T> items,
                                       std::size_t batch_size,
                                       std::uint64_t seed) {
  std::vector<std::vector<T>> out;
  for (const auto& idx : batch_indices(items.size(), batch_size, seed)) {
    auto& batch = out.emplace_back();
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(items[i]);
  }
  return out;
}

// Named binary facet of a synthetic item, e.g. color in {red, blue}.
struct Facet {
  std::string name;
  std::string values[2];
};

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t n_items = 200;
  std::size_t n_attrs = 8;
  std::uint32_t vocab_size = kDefaultVocabSize;
  /// 0 means 5 * n_items / 2.
  std::size_t n_triplets = 0;
  std::size_t image_dim = 64;
  double noise = 0.05;
  std::size_t subset_size = 6;
  /// 0 means 2 * n_items.
  std::size_t n_nli_pairs = 0;
  double word_dropout = 0.25;
};

// Desk-scale stand-in for a CIR benchmark. Every item embedding is the signed
// sum of per-facet directions plus Gaussian noise, and every triplet's text
// names the new facet values that turn the reference into the target.
struct SynthWorld {
  EmbeddingMatrix embeddings;
  std::vector<Triplet> triplets;
  std::vector<NliPair> nli_pairs;
  std::uint32_t vocab_size = kDefaultVocabSize;

  std::vector<Facet> facets;
  /// codes[i][a] is item i's value index for facet a.
  std::vector<std::vector<std::uint8_t>> codes;
  /// facet_directions[a] is the image-space direction of facet a (image_dim).
  std::vector<std::vector<double>> facet_directions;

  /// Applies the true facet changes of t to the reference embedding.
  std::vector<double> oracle_query(const Triplet& t) const;
};

std::vector<Facet> default_facets(std::size_t n_attrs);

/// "color red, pattern plain, ..." for a code vector.
std::string describe(std::span<const Facet> facets,
                     std::span<const std::uint8_t> code);

SynthWorld generate_synthetic_world(const SynthOptions& options);

/// Splits triplets into (train, test) with the last n_test held out.
std::pair<std::vector<Triplet>, std::vector<Triplet>> split_holdout(
    std::span<const Triplet> triplets, std::size_t n_test);

}  // namespace cir
