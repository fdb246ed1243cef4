#include "cir/annotate.hpp"

#include <algorithm>
#include <cctype>
#include <iterator>
#include <numeric>
#include <unordered_set>

#include "cir/error.hpp"
#include "cir/hash.hpp"
#include "cir/rng.hpp"

namespace cir {
namespace {

constexpr std::string_view kReferenceField = "Reference:";
constexpr std::string_view kInstructionField = "Instruction:";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string single_line(std::string_view s) {
  std::string out(s);
  std::replace_if(out.begin(), out.end(),
                  [](char c) { return c == '\n' || c == '\r'; }, ' ');
  return trim(out);
}

bool contains_marker(std::string_view s) {
  return s.find(kCaptionMarker) != std::string_view::npos ||
         s.find(kReasoningMarker) != std::string_view::npos ||
         s.find(kConclusionMarker) != std::string_view::npos;
}

// Removes one leading "1." / "2)" / "-" / "*" bullet.
std::string strip_bullet(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
    ++i;
  }
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
    return trim(line.substr(i + 1));
  }
  if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
    return trim(line.substr(1));
  }
  return std::string(line);
}

std::size_t find_unique(std::string_view raw, std::string_view marker) {
  const auto pos = raw.find(marker);
  if (pos == std::string_view::npos) {
    throw Error(ErrorCode::kMissingSection,
                "missing section " + std::string(marker));
  }
  if (raw.find(marker, pos + marker.size()) != std::string_view::npos) {
    throw Error(ErrorCode::kParse,
                "section " + std::string(marker) + " appears more than once");
  }
  return pos;
}

std::string field_value(std::string_view prompt, std::string_view field) {
  std::size_t start = 0;
  while (start <= prompt.size()) {
    auto end = prompt.find('\n', start);
    if (end == std::string_view::npos) end = prompt.size();
    const auto line = prompt.substr(start, end - start);
    if (line.starts_with(field)) return trim(line.substr(field.size()));
    start = end + 1;
  }
  return {};
}

template <std::size_t N>
const char* pick(Rng& rng, const char* const (&options)[N]) {
  return options[rng.below(N)];
}

constexpr const char* kCaptionLeads[] = {
    "the reference image shows a",
    "the reference shows a",
    "pictured is a",
    "the reference is a",
};

constexpr const char* kConclusionLeads[] = {
    "the target is an item with",       "the target image shows",
    "the result has",                   "the desired item has",
    "the target item shows",            "the retrieved image should show",
    "the target has",                   "we are looking for an item with",
};

constexpr const char* kConclusionTails[] = {
    "",           " and nothing else changes", " overall",
    " as requested", " with all other details kept", " exactly",
    " in the same style", " in the same setting",
};

constexpr const char* kAdjectives[] = {
    "bright", "pale",  "small",  "large",  "round", "tall",  "narrow", "wide",
    "soft",   "rough", "smooth", "shiny",  "faded", "vivid", "simple", "ornate",
};
constexpr const char* kColors[] = {
    "black", "white",  "grey",  "green",  "yellow", "orange", "purple", "pink",
    "brown", "beige",  "navy",  "teal",   "maroon", "olive",  "gold",   "silver",
};
constexpr const char* kNouns[] = {
    "shirt", "dress",  "jacket", "skirt", "coat",  "sweater", "blouse", "top",
    "scarf", "hat",    "bag",    "shoe",  "chair", "lamp",    "table",  "vase",
};

struct FacetValue {
  std::string name;
  std::string value;
};

// "color red, pattern plain" -> {{color, red}, {pattern, plain}}; empty when
// any segment is not a "name value" pair.
std::vector<FacetValue> parse_facets(std::string_view descriptor) {
  std::vector<FacetValue> out;
  std::size_t start = 0;
  while (start <= descriptor.size()) {
    auto end = descriptor.find(',', start);
    if (end == std::string_view::npos) end = descriptor.size();
    const auto words = split_words(descriptor.substr(start, end - start));
    if (words.size() != 2) return {};
    out.push_back({words[0], words[1]});
    start = end + 1;
  }
  return out;
}

std::string join_facets(const std::vector<FacetValue>& facets) {
  std::string out;
  for (std::size_t i = 0; i < facets.size(); ++i) {
    if (i) out += ", ";
    out += facets[i].name + " " + facets[i].value;
  }
  return out;
}

// "red striped short ... item"
std::string values_phrase(const std::vector<FacetValue>& facets) {
  std::string out;
  for (const auto& f : facets) out += f.value + " ";
  return out + "item";
}

std::string fallback_output(Rng& rng) {
  CoTAnnotation a;
  a.caption = std::string("a ") + pick(rng, kAdjectives) + " " +
              pick(rng, kColors) + " " + pick(rng, kNouns);
  a.reasoning_steps = {
      "the instruction describes a change to the reference",
      "no structured attributes were recognized in the reference",
      "apply the requested change to the main object",
  };
  a.conclusion = std::string(pick(rng, kConclusionLeads)) + " a " +
                 pick(rng, kAdjectives) + " " + pick(rng, kColors) + " " +
                 pick(rng, kNouns) + pick(rng, kConclusionTails);
  return format_structured_output(a);
}

}  // namespace

StagePrompt build_annotation_prompt(const Triplet& t,
                                    std::string_view reference_descriptor) {
  const std::string instruction = single_line(t.modification_text);
  if (instruction.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "triplet '" + t.pair_id + "' has an empty modification text");
  }
  const std::string reference = single_line(reference_descriptor);
  if (contains_marker(instruction) || contains_marker(reference)) {
    throw Error(ErrorCode::kInvalidArgument,
                "triplet '" + t.pair_id + "' contains a section marker");
  }

  std::string p;
  p += "Annotate one composed image retrieval example. Answer with the three "
       "tagged sections below, in order, each tag on its own line.\n";
  p += std::string(kReferenceField) + " " + reference + "\n";
  p += std::string(kInstructionField) + " " + instruction + "\n";
  p += std::string(kCaptionMarker) +
       " Describe the reference image: every visible object, its "
       "attributes, and the surrounding context.\n";
  p += std::string(kReasoningMarker) +
       " Think step by step, one numbered line per step:\n"
       "1. State what the instruction asks to add, remove, or change.\n"
       "2. Locate the objects, attributes, and spatial relations in the "
       "reference that the instruction refers to.\n"
       "3. Decide which edits are needed (addition, removal, repositioning, "
       "attribute change) and on which entities.\n"
       "4. Explain how the edits turn the reference into the target and why "
       "each one is required.\n";
  p += std::string(kConclusionMarker) +
       " Describe the target image as it looks once the instruction is "
       "applied.\n";
  return {t.pair_id, std::move(p)};
}

CoTAnnotation parse_structured_output(std::string_view raw) {
  const auto cap = find_unique(raw, kCaptionMarker);
  const auto rea = find_unique(raw, kReasoningMarker);
  const auto con = find_unique(raw, kConclusionMarker);
  if (!(cap < rea && rea < con)) {
    throw Error(ErrorCode::kParse, "sections out of order");
  }

  CoTAnnotation a;
  const auto cap_begin = cap + kCaptionMarker.size();
  a.caption = trim(raw.substr(cap_begin, rea - cap_begin));

  const auto rea_begin = rea + kReasoningMarker.size();
  const auto body = raw.substr(rea_begin, con - rea_begin);
  std::size_t start = 0;
  while (start <= body.size()) {
    auto end = body.find('\n', start);
    if (end == std::string_view::npos) end = body.size();
    std::string step = strip_bullet(trim(body.substr(start, end - start)));
    if (!step.empty()) a.reasoning_steps.push_back(std::move(step));
    start = end + 1;
  }

  a.conclusion = trim(raw.substr(con + kConclusionMarker.size()));
  if (a.conclusion.empty()) {
    throw Error(ErrorCode::kMissingSection, "empty conclusion section");
  }
  if (a.caption.empty()) {
    throw Error(ErrorCode::kMissingSection, "empty caption section");
  }
  if (a.reasoning_steps.empty()) {
    throw Error(ErrorCode::kMissingSection, "empty reasoning section");
  }
  return a;
}

std::string format_structured_output(const CoTAnnotation& a) {
  std::string out;
  out += kCaptionMarker;
  out += "\n" + a.caption + "\n";
  out += kReasoningMarker;
  out += "\n";
  for (std::size_t i = 0; i < a.reasoning_steps.size(); ++i) {
    out += std::to_string(i + 1) + ". " + a.reasoning_steps[i] + "\n";
  }
  out += kConclusionMarker;
  out += "\n" + a.conclusion + "\n";
  return out;
}

std::string mock_generate(std::string_view prompt, std::uint64_t seed) {
  Rng rng(mix64(fnv1a64(prompt) ^ mix64(seed)));

  const auto reference = field_value(prompt, kReferenceField);
  auto facets = parse_facets(reference);
  if (facets.empty()) return fallback_output(rng);

  const auto words = split_words(field_value(prompt, kInstructionField));
  struct Edit {
    std::size_t facet;
    std::string from;
    std::string to;
  };
  std::vector<Edit> edits;
  for (std::size_t f = 0; f < facets.size(); ++f) {
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
      if (words[i] == facets[f].name && words[i + 1] != facets[f].value) {
        edits.push_back({f, facets[f].value, words[i + 1]});
        break;
      }
    }
  }

  CoTAnnotation a;
  a.caption = std::string(pick(rng, kCaptionLeads)) + " " +
              values_phrase(facets);

  // Roughly one output in eight silently ignores one requested change.
  if (!edits.empty() && rng.below(8) == 0) {
    edits.erase(edits.begin() +
                static_cast<std::ptrdiff_t>(rng.below(edits.size())));
  }

  if (edits.empty()) {
    a.reasoning_steps = {"the instruction requests no recognizable change",
                         "keep the reference as it is"};
  } else {
    std::string asks = "wanted";
    std::string has = "currently";
    for (std::size_t i = 0; i < edits.size(); ++i) {
      const auto& name = facets[edits[i].facet].name;
      asks += (i ? " and " : " ") + name + " " + edits[i].to;
      has += (i ? " and " : " ") + edits[i].from;
    }
    a.reasoning_steps.push_back(asks);
    a.reasoning_steps.push_back(has);
    for (const auto& e : edits) {
      a.reasoning_steps.push_back(e.from + " becomes " + e.to);
    }
    a.reasoning_steps.push_back("rest unchanged");
  }

  for (const auto& e : edits) facets[e.facet].value = e.to;
  rng.shuffle(std::span<FacetValue>(facets));
  a.conclusion = std::string(pick(rng, kConclusionLeads)) + " " +
                 join_facets(facets) + pick(rng, kConclusionTails);
  return format_structured_output(a);
}

int MockJudge::score(const std::string& conclusion,
                     const std::string& target_descriptor) {
  const auto words = split_words(conclusion);
  const std::unordered_set<std::string> present(words.begin(), words.end());
  int missing = 0;
  for (const auto& w : split_words(target_descriptor)) {
    missing += present.contains(w) ? 0 : 1;
  }
  const std::uint64_t h =
      mix64(seed_ ^ fnv1a64(conclusion) ^ mix64(fnv1a64(target_descriptor)));
  const int jitter = static_cast<int>(h & 1u);
  return std::clamp(5 - 2 * missing - jitter, 1, 5);
}

std::vector<int> judge_annotation(const CoTAnnotation& a,
                                  std::string_view target_descriptor,
                                  std::span<JudgeClient* const> judges) {
  if (judges.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "at least one judge is required");
  }
  std::vector<int> scores;
  scores.reserve(judges.size());
  const std::string target(target_descriptor);
  for (std::size_t i = 0; i < judges.size(); ++i) {
    int s = 0;
    try {
      s = judges[i]->score(a.conclusion, target);
    } catch (const Error& e) {
      throw Error(e.code(), "judge " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kRemote,
                  "judge " + std::to_string(i) + ": " + e.what());
    }
    if (s < 1 || s > 5) {
      throw Error(ErrorCode::kRemote, "judge " + std::to_string(i) +
                                          " returned out-of-range score " +
                                          std::to_string(s));
    }
    scores.push_back(s);
  }
  return scores;
}

bool passes_filter(std::span<const int> scores, double mean_threshold,
                   int max_range) {
  if (scores.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "record has no judge scores");
  }
  const double mean =
      std::accumulate(scores.begin(), scores.end(), 0.0) /
      static_cast<double>(scores.size());
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  return mean >= mean_threshold && (*hi - *lo) <= max_range;
}

FilterResult filter_annotations(std::span<const CoTAnnotation> records,
                                double mean_threshold, int max_range) {
  if (!(mean_threshold >= 1.0 && mean_threshold <= 5.0) || max_range < 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "filter thresholds out of range (mean in [1,5], range >= 0)");
  }
  for (const auto& r : records) {
    if (r.judge_scores.empty()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "annotation '" + r.pair_id + "' has no judge scores");
    }
  }
  FilterResult out;
  for (const auto& r : records) {
    CoTAnnotation copy = r;
    copy.accepted = passes_filter(r.judge_scores, mean_threshold, max_range);
    (copy.accepted ? out.accepted : out.rejected).push_back(std::move(copy));
  }
  return out;
}

AnnotationRun annotate_triplets(std::span<const Triplet> triplets,
                                GeneratorClient& generator,
                                std::span<JudgeClient* const> judges) {
  if (judges.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "at least one judge is required");
  }
  AnnotationRun run;
  for (const auto& t : triplets) {
    const std::string ref = t.reference_descriptor.value_or(t.reference_id);
    const std::string tgt = t.target_descriptor.value_or(t.target_id);
    const auto prompt = build_annotation_prompt(t, ref);
    const std::string raw = generator.generate(prompt.prompt_text);
    CoTAnnotation a;
    try {
      a = parse_structured_output(raw);
    } catch (const Error&) {
      run.unparseable.push_back(t.pair_id);
      continue;
    }
    a.pair_id = t.pair_id;
    a.judge_scores = judge_annotation(a, tgt, judges);
    run.annotations.push_back(std::move(a));
  }
  return run;
}

}  // namespace cir
