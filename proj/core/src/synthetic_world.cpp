#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "cir/dataset.hpp"
#include "cir/error.hpp"

namespace cir {
namespace {

struct FacetSpec {
  const char* name;
  const char* a;
  const char* b;
};

constexpr FacetSpec kFacetTable[] = {
    {"color", "red", "blue"},          {"pattern", "striped", "plain"},
    {"length", "long", "short"},       {"sleeve", "sleeveless", "sleeved"},
    {"fit", "loose", "tight"},         {"neckline", "vneck", "crew"},
    {"material", "cotton", "denim"},   {"tone", "dark", "light"},
    {"print", "floral", "solid"},      {"collar", "collared", "open"},
    {"finish", "glossy", "matte"},     {"closure", "zipper", "buttons"},
};

constexpr const char* kTemplates[][2] = {
    {"make it ", ""},
    {"change it to ", ""},
    {"i want ", " instead"},
    {"same item but with ", ""},
};

std::string make_id(const char* prefix, std::size_t i, std::size_t n) {
  const int width = std::max(4, static_cast<int>(std::to_string(n).size()));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

std::size_t hamming(const std::vector<std::uint8_t>& a,
                    const std::vector<std::uint8_t>& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

std::vector<std::uint8_t> random_code(Rng& rng, std::size_t n_attrs) {
  std::vector<std::uint8_t> code(n_attrs);
  for (auto& v : code) v = static_cast<std::uint8_t>(rng.below(2));
  return code;
}

std::string drop_words(const std::string& text, double p, Rng& rng) {
  const auto words = split_words(text);
  std::string out;
  for (const auto& w : words) {
    if (rng.uniform() < p) continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  if (out.empty() && !words.empty()) out = words[rng.below(words.size())];
  return out;
}

}  // namespace

std::vector<Facet> default_facets(std::size_t n_attrs) {
  std::vector<Facet> out;
  out.reserve(n_attrs);
  constexpr std::size_t kTable = std::size(kFacetTable);
  for (std::size_t i = 0; i < n_attrs; ++i) {
    if (i < kTable) {
      out.push_back({kFacetTable[i].name, {kFacetTable[i].a, kFacetTable[i].b}});
    } else {
      const std::string n = std::to_string(i);
      out.push_back({"facet" + n, {"alpha" + n, "beta" + n}});
    }
  }
  return out;
}

std::string describe(std::span<const Facet> facets,
                     std::span<const std::uint8_t> code) {
  std::string out;
  for (std::size_t a = 0; a < facets.size(); ++a) {
    if (a) out += ", ";
    out += facets[a].name;
    out += ' ';
    out += facets[a].values[code[a]];
  }
  return out;
}

std::vector<double> SynthWorld::oracle_query(const Triplet& t) const {
  const std::size_t ref = embeddings.index_of(t.reference_id);
  const std::size_t tgt = embeddings.index_of(t.target_id);
  const auto row = embeddings.row(ref);
  std::vector<double> q(row.begin(), row.end());
  for (std::size_t a = 0; a < facets.size(); ++a) {
    if (codes[ref][a] == codes[tgt][a]) continue;
    const double delta = codes[tgt][a] ? 2.0 : -2.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      q[k] += delta * facet_directions[a][k];
    }
  }
  return q;
}

SynthWorld generate_synthetic_world(const SynthOptions& o) {
  if (o.n_items < 4) {
    throw Error(ErrorCode::kInvalidArgument, "n_items must be >= 4");
  }
  if (o.n_attrs < 2) {
    throw Error(ErrorCode::kInvalidArgument, "n_attrs must be >= 2");
  }
  if (o.n_attrs < 63 && o.n_items > (std::size_t{1} << o.n_attrs)) {
    throw Error(ErrorCode::kInvalidArgument,
                "n_items exceeds the number of distinct facet codes");
  }
  if (o.image_dim == 0 || o.vocab_size < 2 || o.subset_size == 0 ||
      o.noise < 0.0 || o.word_dropout < 0.0 || o.word_dropout >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic world options");
  }

  SynthWorld w;
  w.vocab_size = o.vocab_size;
  w.facets = default_facets(o.n_attrs);
  Rng rng(o.seed);

  // Distinct facet codes, one per item.
  std::set<std::vector<std::uint8_t>> seen;
  while (w.codes.size() < o.n_items) {
    auto code = random_code(rng, o.n_attrs);
    if (seen.insert(code).second) w.codes.push_back(std::move(code));
  }

  for (std::size_t a = 0; a < o.n_attrs; ++a) {
    std::vector<double> u(o.image_dim);
    double sq = 0.0;
    for (auto& x : u) {
      x = rng.normal();
      sq += x * x;
    }
    const double norm = std::sqrt(sq);
    for (auto& x : u) x /= norm;
    w.facet_directions.push_back(std::move(u));
  }

  std::vector<std::string> ids;
  std::vector<float> values;
  values.reserve(o.n_items * o.image_dim);
  for (std::size_t i = 0; i < o.n_items; ++i) {
    ids.push_back(make_id("img", i, o.n_items));
    for (std::size_t k = 0; k < o.image_dim; ++k) {
      double v = 0.0;
      for (std::size_t a = 0; a < o.n_attrs; ++a) {
        v += (w.codes[i][a] ? 1.0 : -1.0) * w.facet_directions[a][k];
      }
      v += o.noise * rng.normal();
      values.push_back(static_cast<float>(v));
    }
  }
  w.embeddings = EmbeddingMatrix(o.image_dim, ids, std::move(values));

  const std::size_t n_triplets =
      o.n_triplets ? o.n_triplets : 5 * o.n_items / 2;
  const std::size_t max_changes = std::min<std::size_t>(3, o.n_attrs);
  for (std::size_t t = 0; t < n_triplets; ++t) {
    const std::size_t ref = rng.below(o.n_items);
    std::vector<std::size_t> candidates;
    std::size_t changes = 1 + rng.below(max_changes);
    for (std::size_t tries = 0; candidates.empty(); ++tries) {
      for (std::size_t j = 0; j < o.n_items; ++j) {
        if (j != ref && hamming(w.codes[ref], w.codes[j]) == changes) {
          candidates.push_back(j);
        }
      }
      if (candidates.empty()) changes = 1 + (changes + tries) % o.n_attrs;
    }
    const std::size_t tgt = candidates[rng.below(candidates.size())];

    std::vector<std::size_t> changed;
    for (std::size_t a = 0; a < o.n_attrs; ++a) {
      if (w.codes[ref][a] != w.codes[tgt][a]) changed.push_back(a);
    }
    rng.shuffle(std::span<std::size_t>(changed));
    std::string clause;
    for (std::size_t c = 0; c < changed.size(); ++c) {
      if (c) clause += " and ";
      const Facet& f = w.facets[changed[c]];
      clause += f.name + " " + f.values[w.codes[tgt][changed[c]]];
    }
    const auto& tmpl = kTemplates[rng.below(std::size(kTemplates))];

    Triplet trip;
    trip.pair_id = make_id("pair", t, n_triplets);
    trip.reference_id = ids[ref];
    trip.target_id = ids[tgt];
    trip.modification_text = std::string(tmpl[0]) + clause + tmpl[1];
    trip.reference_descriptor = describe(w.facets, w.codes[ref]);
    trip.target_descriptor = describe(w.facets, w.codes[tgt]);

    // Subset: the target plus its nearest neighbours in facet space.
    struct Cand {
      std::size_t dist;
      std::uint64_t key;
      std::size_t idx;
    };
    std::vector<Cand> near;
    for (std::size_t j = 0; j < o.n_items; ++j) {
      if (j == tgt || j == ref) continue;
      near.push_back({hamming(w.codes[tgt], w.codes[j]), rng.next_u64(), j});
    }
    std::sort(near.begin(), near.end(), [](const Cand& x, const Cand& y) {
      return x.dist != y.dist ? x.dist < y.dist : x.key < y.key;
    });
    std::vector<std::string> subset{ids[tgt]};
    for (std::size_t j = 0; j + 1 < o.subset_size && j < near.size(); ++j) {
      subset.push_back(ids[near[j].idx]);
    }
    std::sort(subset.begin(), subset.end());
    trip.subset_ids = std::move(subset);

    // Extra ground truths: one unrequested facet differs from the target.
    std::vector<std::string> gts{ids[tgt]};
    for (std::size_t j = 0; j < o.n_items; ++j) {
      if (j == tgt || j == ref || hamming(w.codes[tgt], w.codes[j]) != 1) {
        continue;
      }
      bool touches_request = false;
      for (std::size_t a : changed) {
        touches_request |= w.codes[j][a] != w.codes[tgt][a];
      }
      if (!touches_request) gts.push_back(ids[j]);
    }
    trip.gt_ids = std::move(gts);

    validate(trip);
    w.triplets.push_back(std::move(trip));
  }

  const std::size_t n_pairs = o.n_nli_pairs ? o.n_nli_pairs : 2 * o.n_items;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto code = random_code(rng, o.n_attrs);
    std::string premise;
    if (rng.below(2) == 0) {
      premise = describe(w.facets, code);
    } else {
      const std::size_t k = 1 + rng.below(max_changes);
      std::vector<std::size_t> facets(o.n_attrs);
      std::iota(facets.begin(), facets.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(facets));
      const auto& tmpl = kTemplates[rng.below(std::size(kTemplates))];
      premise = tmpl[0];
      for (std::size_t c = 0; c < k; ++c) {
        if (c) premise += " and ";
        const Facet& f = w.facets[facets[c]];
        premise += f.name + " " + f.values[code[facets[c]]];
      }
      premise += tmpl[1];
    }
    std::string positive = drop_words(premise, o.word_dropout, rng);
    w.nli_pairs.push_back({std::move(premise), std::move(positive)});
  }
  return w;
}

}  // namespace cir
