#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <thread>

#include "cir/annotate.hpp"
#include "cir/error.hpp"
#include "httplib.h"
#include "json.hpp"
#include "oracles.hpp"

namespace cir {
namespace {

std::size_t count_of(const std::string& s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos;
       pos = s.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

Triplet triplet(std::string id = "p1") {
  Triplet t;
  t.pair_id = std::move(id);
  t.reference_id = "r";
  t.target_id = "t";
  t.modification_text = "make the color blue";
  t.reference_descriptor = "color red, pattern plain";
  t.target_descriptor = "color blue, pattern plain";
  return t;
}

CoTAnnotation scored(std::string id, std::vector<int> scores) {
  CoTAnnotation a{std::move(id), "cap", {"step"}, "concl", std::move(scores),
                  false};
  return a;
}

TEST(Prompt, HasEachMarkerOnceAndIsDeterministic) {
  const auto p = build_annotation_prompt(triplet(), "color red, pattern plain");
  for (auto m : {kCaptionMarker, kReasoningMarker, kConclusionMarker}) {
    EXPECT_EQ(count_of(p.prompt_text, m), 1u) << m;
  }
  EXPECT_NE(p.prompt_text.find("make the color blue"), std::string::npos);
  EXPECT_NE(p.prompt_text.find("color red, pattern plain"), std::string::npos);
  EXPECT_EQ(p.pair_id, "p1");
  EXPECT_EQ(build_annotation_prompt(triplet(), "color red, pattern plain")
                .prompt_text,
            p.prompt_text);
}

TEST(Prompt, RejectsEmptyInstructionAndInjectedMarkers) {
  Triplet t = triplet();
  t.modification_text = "  \n";
  EXPECT_THROW(build_annotation_prompt(t, "x"), Error);
  t.modification_text = "fine";
  EXPECT_THROW(build_annotation_prompt(t, "sneaky [CONCLUSION] marker"), Error);
}

TEST(Parse, ThreeSections) {
  const auto a = parse_structured_output(
      "[CAPTION]\n a red shirt \n[REASONING]\n1. first\n2) second\n- third\n\n"
      "[CONCLUSION]\n a blue shirt\n");
  EXPECT_EQ(a.caption, "a red shirt");
  EXPECT_EQ(a.reasoning_steps,
            (std::vector<std::string>{"first", "second", "third"}));
  EXPECT_EQ(a.conclusion, "a blue shirt");
  EXPECT_FALSE(a.accepted);
  EXPECT_TRUE(a.judge_scores.empty());
}

TEST(Parse, Errors) {
  auto code = [](std::string_view raw) {
    try {
      parse_structured_output(raw);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  EXPECT_EQ(code("[CAPTION]\na\n[REASONING]\n1. b\n"), ErrorCode::kMissingSection);
  EXPECT_EQ(code("[CAPTION]\na\n[REASONING]\n1. b\n[CONCLUSION]\n  \n"),
            ErrorCode::kMissingSection);
  EXPECT_EQ(code("[REASONING]\n1. b\n[CAPTION]\na\n[CONCLUSION]\nc"),
            ErrorCode::kParse);
  EXPECT_EQ(code("[CAPTION]\na\n[CAPTION]\n[REASONING]\n1. b\n[CONCLUSION]\nc"),
            ErrorCode::kParse);
}

TEST(Parse, FormatRoundtripOnRandomAnnotations) {
  Rng rng(4);
  auto word = [&] {
    std::string w;
    for (std::size_t i = 0; i < 1 + rng.below(7); ++i) {
      w.push_back(static_cast<char>('a' + rng.below(26)));
    }
    return w;
  };
  auto sentence = [&] {
    std::string s = word();
    for (std::size_t i = 0; i < rng.below(6); ++i) s += " " + word();
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    CoTAnnotation a;
    a.caption = sentence();
    for (std::size_t i = 0; i < 1 + rng.below(5); ++i) {
      a.reasoning_steps.push_back(sentence());
    }
    a.conclusion = sentence();
    const std::string text = format_structured_output(a);
    EXPECT_EQ(parse_structured_output(text), a);
    EXPECT_EQ(format_structured_output(parse_structured_output(text)), text);
  }
}

TEST(MockGenerate, AlwaysParseableAndDeterministic) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string prompt;
    for (std::size_t k = 0; k < rng.below(80); ++k) {
      prompt.push_back(static_cast<char>(32 + rng.below(95)));
    }
    const auto out = mock_generate(prompt, i);
    EXPECT_NO_THROW(parse_structured_output(out)) << out;
    EXPECT_EQ(mock_generate(prompt, i), out);
  }
}

TEST(MockGenerate, SeedsGiveDistinctConclusions) {
  const auto prompt = build_annotation_prompt(triplet(), "a red shirt").prompt_text;
  std::set<std::string> conclusions;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    conclusions.insert(parse_structured_output(mock_generate(prompt, s)).conclusion);
  }
  // The fallback text draws from 8 * 16^3 * 8 combinations.
  EXPECT_GE(conclusions.size(), 900u);
}

TEST(MockGenerate, AppliesRequestedFacetChange) {
  const auto prompt =
      build_annotation_prompt(triplet(), *triplet().reference_descriptor)
          .prompt_text;
  std::size_t applied = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto a = parse_structured_output(mock_generate(prompt, s));
    const auto words = split_words(a.conclusion);
    const std::set<std::string> set(words.begin(), words.end());
    EXPECT_TRUE(set.count("plain"));
    applied += set.count("blue");
  }
  // Roughly one in eight drops the change.
  EXPECT_GT(applied, 150u);
  EXPECT_LT(applied, 200u);
}

TEST(Judges, MockRangeDeterminismAndAlignment) {
  MockJudge j1(1), j2(2), j3(3);
  JudgeClient* judges[] = {&j1, &j2, &j3};
  CoTAnnotation a{"p", "c", {"s"}, "color blue, pattern plain", {}, false};
  const auto s = judge_annotation(a, "color blue, pattern plain", judges);
  ASSERT_EQ(s.size(), 3u);
  for (int x : s) {
    EXPECT_GE(x, 4);
    EXPECT_LE(x, 5);
  }
  EXPECT_EQ(judge_annotation(a, "color blue, pattern plain", judges), s);
  a.conclusion = "something unrelated";
  for (int x : judge_annotation(a, "color blue, pattern plain", judges)) {
    EXPECT_GE(x, 1);
    EXPECT_LE(x, 2);
  }
  ConstantJudge c2(2), c5(5);
  JudgeClient* mixed[] = {&c5, &c2};
  EXPECT_EQ(judge_annotation(a, "x", mixed), (std::vector<int>{5, 2}));
  EXPECT_THROW(judge_annotation(a, "x", std::span<JudgeClient* const>{}), Error);
}

class ThrowingJudge final : public JudgeClient {
 public:
  int score(const std::string&, const std::string&) override {
    throw Error(ErrorCode::kRemote, "down");
  }
};

TEST(Judges, FailureNamesJudgeIndex) {
  ConstantJudge ok(5);
  ThrowingJudge bad;
  JudgeClient* judges[] = {&ok, &bad};
  CoTAnnotation a{"p", "c", {"s"}, "x", {}, false};
  try {
    judge_annotation(a, "x", judges);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRemote);
    EXPECT_NE(std::string(e.what()).find("judge 1"), std::string::npos);
  }
}

TEST(Filter, RuleExamples) {
  const std::vector<CoTAnnotation> recs{scored("a", {5, 5, 4}),
                                        scored("b", {5, 5, 1}),
                                        scored("c", {4, 4, 4})};
  const auto r = filter_annotations(recs);
  ASSERT_EQ(r.accepted.size(), 2u);
  EXPECT_EQ(r.accepted[0].pair_id, "a");
  EXPECT_EQ(r.accepted[1].pair_id, "c");
  EXPECT_TRUE(r.accepted[0].accepted);
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].pair_id, "b");
  EXPECT_FALSE(r.rejected[0].accepted);
}

TEST(Filter, Errors) {
  const std::vector<CoTAnnotation> none{scored("a", {})};
  EXPECT_THROW(filter_annotations(none), Error);
  const std::vector<CoTAnnotation> ok{scored("a", {5})};
  EXPECT_THROW(filter_annotations(ok, 0.5, 2), Error);
  EXPECT_THROW(filter_annotations(ok, 4.0, -1), Error);
}

TEST(Filter, PartitionAndMonotonicity) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<CoTAnnotation> recs;
    for (std::size_t i = 0; i < rng.below(30); ++i) {
      std::vector<int> s(1 + rng.below(4));
      for (int& x : s) x = 1 + static_cast<int>(rng.below(5));
      recs.push_back(scored("p" + std::to_string(i), s));
    }
    const double mean = rng.uniform(1, 5);
    const int range = static_cast<int>(rng.below(4));
    const auto r = filter_annotations(recs, mean, range);
    EXPECT_EQ(r.accepted.size() + r.rejected.size(), recs.size());
    std::set<std::string> ids;
    for (const auto& a : r.accepted) ids.insert(a.pair_id);
    for (const auto& a : r.rejected) EXPECT_FALSE(ids.count(a.pair_id));

    // Raising one score without widening the range keeps acceptance.
    for (const auto& a : r.accepted) {
      auto s = a.judge_scores;
      const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
      const int old_range = *hi - *lo;
      const std::size_t i = rng.below(s.size());
      if (s[i] == 5) continue;
      ++s[i];
      const auto [lo2, hi2] = std::minmax_element(s.begin(), s.end());
      if (*hi2 - *lo2 > old_range) continue;
      EXPECT_TRUE(passes_filter(s, mean, range));
    }
  }
}

class BrokenGenerator final : public GeneratorClient {
 public:
  std::string generate(const std::string&) override { return "no sections"; }
};

TEST(AnnotateTriplets, CountsUnparseableWithoutFailing) {
  BrokenGenerator gen;
  ConstantJudge j(5);
  JudgeClient* judges[] = {&j};
  const std::vector<Triplet> ts{triplet("a"), triplet("b")};
  const auto run = annotate_triplets(ts, gen, judges);
  EXPECT_TRUE(run.annotations.empty());
  EXPECT_EQ(run.unparseable, (std::vector<std::string>{"a", "b"}));
}

TEST(AnnotateTriplets, MockChainIsDeterministic) {
  SynthOptions o;
  o.n_items = 40;
  const auto w = generate_synthetic_world(o);
  auto run_once = [&] {
    MockGenerator gen(9);
    MockJudge a(10), b(11), c(12);
    JudgeClient* judges[] = {&a, &b, &c};
    return filter_annotations(annotate_triplets(w.triplets, gen, judges).annotations);
  };
  const auto r1 = run_once(), r2 = run_once();
  EXPECT_EQ(r1.accepted, r2.accepted);
  EXPECT_EQ(r1.rejected, r2.rejected);
  EXPECT_GT(r1.accepted.size(), r1.rejected.size());
  EXPECT_FALSE(r1.rejected.empty());
}

TEST(AnnotateTriplets, AllOnesAcceptsNothing) {
  SynthOptions o;
  o.n_items = 20;
  const auto w = generate_synthetic_world(o);
  MockGenerator gen(1);
  ConstantJudge j(1);
  JudgeClient* judges[] = {&j, &j, &j};
  const auto r =
      filter_annotations(annotate_triplets(w.triplets, gen, judges).annotations);
  EXPECT_TRUE(r.accepted.empty());
  EXPECT_EQ(r.rejected.size(), w.triplets.size());
}

// ---- remote clients against an in-process server -------------------------

class LocalServer {
 public:
  LocalServer() {
    server_.Post("/gen", [this](const httplib::Request& req,
                                httplib::Response& res) {
      ++calls;
      if (fail_first > 0) {
        --fail_first;
        res.status = 503;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      res.set_content(
          nlohmann::json{{"text", mock_generate(body["prompt"].get<std::string>(), 0)}}
              .dump(),
          "application/json");
    });
    server_.Post("/judge", [](const httplib::Request& req,
                              httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      const int s = body["conclusion"] == body["target"] ? 5 : 2;
      res.set_content(nlohmann::json{{"score", s}}.dump(), "application/json");
    });
    server_.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"score": 9})", "application/json");
    });
    server_.Post("/missing", [](const httplib::Request&, httplib::Response& res) {
      res.status = 404;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

  std::atomic<int> calls{0};
  std::atomic<int> fail_first{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(Remote, GeneratorAndJudgeSpeakJson) {
  LocalServer srv;
  RemoteGenerator gen({srv.url("/gen"), 2000, 0});
  const std::string prompt = "hello";
  EXPECT_EQ(gen.generate(prompt), mock_generate(prompt, 0));
  RemoteJudge judge({srv.url("/judge"), 2000, 0});
  EXPECT_EQ(judge.score("same", "same"), 5);
  EXPECT_EQ(judge.score("a", "b"), 2);
}

TEST(Remote, RetriesServerErrors) {
  LocalServer srv;
  srv.fail_first = 2;
  RemoteGenerator gen({srv.url("/gen"), 2000, 2});
  EXPECT_NO_THROW(gen.generate("x"));
  EXPECT_EQ(srv.calls.load(), 3);
  srv.fail_first = 5;
  RemoteGenerator stingy({srv.url("/gen"), 2000, 1});
  EXPECT_THROW(stingy.generate("x"), Error);
}

TEST(Remote, Failures) {
  LocalServer srv;
  RemoteJudge bad({srv.url("/bad"), 2000, 0});
  EXPECT_THROW(bad.score("a", "b"), Error);
  RemoteJudge missing({srv.url("/missing"), 2000, 3});
  EXPECT_THROW(missing.score("a", "b"), Error);
  EXPECT_THROW(RemoteJudge({"ftp://x", 10, 0}), Error);
  // Nothing listens on the discard port.
  RemoteGenerator dead({"http://127.0.0.1:9/gen", 200, 0});
  EXPECT_THROW(dead.generate("x"), Error);
}

TEST(Remote, FullChainThroughHttp) {
  LocalServer srv;
  RemoteGenerator gen({srv.url("/gen"), 2000, 0});
  RemoteJudge judge({srv.url("/judge"), 2000, 0});
  JudgeClient* judges[] = {&judge};
  const std::vector<Triplet> ts{triplet("a")};
  const auto run = annotate_triplets(ts, gen, judges);
  ASSERT_EQ(run.annotations.size(), 1u);
  EXPECT_EQ(run.annotations[0].judge_scores.size(), 1u);
}

}  // namespace
}  // namespace cir
