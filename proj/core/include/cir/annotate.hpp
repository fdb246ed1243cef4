#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cir/dataset.hpp"

namespace cir {

inline constexpr std::string_view kCaptionMarker = "[CAPTION]";
inline constexpr std::string_view kReasoningMarker = "[REASONING]";
inline constexpr std::string_view kConclusionMarker = "[CONCLUSION]";

inline constexpr double kDefaultMeanThreshold = 4.0;
inline constexpr int kDefaultMaxRange = 2;

struct StagePrompt {
  std::string pair_id;
  std::string prompt_text;
};

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string generate(const std::string& prompt) = 0;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  /// Consistency of a conclusion with the target, on the 1..5 scale.
  virtual int score(const std::string& conclusion,
                    const std::string& target_descriptor) = 0;
};

StagePrompt build_annotation_prompt(const Triplet& t,
                                    std::string_view reference_descriptor);

/// Splits generator output on the three section markers. The returned
/// annotation has no pair id, no scores and accepted == false.
CoTAnnotation parse_structured_output(std::string_view raw);

/// Canonical text form; parse_structured_output inverts it.
std::string format_structured_output(const CoTAnnotation& a);

/// Deterministic well-formed three-section output for a prompt. When the
/// prompt carries "facet value" descriptors, the conclusion applies the
/// requested facet changes; a seeded fraction of outputs ignore one change
/// so that filtering has something to catch.
std::string mock_generate(std::string_view prompt, std::uint64_t seed);

class MockGenerator final : public GeneratorClient {
 public:
  explicit MockGenerator(std::uint64_t seed) : seed_(seed) {}
  std::string generate(const std::string& prompt) override {
    return mock_generate(prompt, seed_);
  }

 private:
  std::uint64_t seed_;
};

/// Scores 5 minus twice the number of target words missing from the
/// conclusion, minus a judge-specific 0/1 jitter, clamped to [1, 5].
class MockJudge final : public JudgeClient {
 public:
  explicit MockJudge(std::uint64_t seed) : seed_(seed) {}
  int score(const std::string& conclusion,
            const std::string& target_descriptor) override;

 private:
  std::uint64_t seed_;
};

class ConstantJudge final : public JudgeClient {
 public:
  explicit ConstantJudge(int value) : value_(value) {}
  int score(const std::string&, const std::string&) override { return value_; }

 private:
  int value_;
};

/// One score per judge, aligned with the judge list. Judge failures are
/// rethrown with the judge index in the message.
std::vector<int> judge_annotation(const CoTAnnotation& a,
                                  std::string_view target_descriptor,
                                  std::span<JudgeClient* const> judges);

struct FilterResult {
  std::vector<CoTAnnotation> accepted;
  std::vector<CoTAnnotation> rejected;
};

/// Accept iff mean(scores) >= mean_threshold and max - min <= max_range.
/// Scores are read from each annotation's judge_scores.
FilterResult filter_annotations(std::span<const CoTAnnotation> records,
                                double mean_threshold = kDefaultMeanThreshold,
                                int max_range = kDefaultMaxRange);

bool passes_filter(std::span<const int> scores, double mean_threshold,
                   int max_range);

struct AnnotationRun {
  std::vector<CoTAnnotation> annotations;
  /// pair ids whose generator output failed to parse.
  std::vector<std::string> unparseable;
};

/// generate -> parse -> judge for every triplet, in input order. Descriptors
/// fall back to item ids when a triplet carries none.
AnnotationRun annotate_triplets(std::span<const Triplet> triplets,
                                GeneratorClient& generator,
                                std::span<JudgeClient* const> judges);

struct RemoteOptions {
  std::string url;
  int timeout_ms = 30000;
  int retries = 2;
};

/// POST {"prompt": ...} -> {"text": ...}
class RemoteGenerator final : public GeneratorClient {
 public:
  explicit RemoteGenerator(RemoteOptions options);
  std::string generate(const std::string& prompt) override;

 private:
  RemoteOptions options_;
};

/// POST {"conclusion": ..., "target": ...} -> {"score": 1..5}
class RemoteJudge final : public JudgeClient {
 public:
  explicit RemoteJudge(RemoteOptions options);
  int score(const std::string& conclusion,
            const std::string& target_descriptor) override;

 private:
  RemoteOptions options_;
};

}  // namespace cir
