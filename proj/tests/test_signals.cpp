#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cascadefuse/embedder.hpp"
#include "cascadefuse/signals.hpp"

using namespace cascadefuse;

namespace {

GenerationResult with_logprobs(std::vector<double> lps) {
    GenerationResult g;
    g.model_id = "m";
    g.token_logprobs = std::move(lps);
    return g;
}

JudgeVerdict verdict(int overall, std::map<std::string, int> dims = {}) {
    JudgeVerdict v;
    v.overall = overall;
    v.dimension_scores = std::move(dims);
    if (v.dimension_scores.empty()) {
        v.dimension_scores = {{"factual_correctness", 2}, {"helpfulness", 1}};
    }
    v.confidence = 0.9;
    return v;
}

}  // namespace

TEST_CASE("logit confidence is the geometric mean of token probabilities") {
    CHECK(logit_confidence(with_logprobs({0.0, 0.0, 0.0})) == doctest::Approx(1.0));
    CHECK(logit_confidence(with_logprobs({std::log(0.5), std::log(0.5)})) ==
          doctest::Approx(0.5).epsilon(1e-12));

    // Independent arithmetic route: product then cube root.
    double product = 0.9 * 0.4 * 0.7;
    double expected = std::cbrt(product);
    double got = logit_confidence(with_logprobs({std::log(0.9), std::log(0.4), std::log(0.7)}));
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.6316).epsilon(1e-4));
}

TEST_CASE("logit confidence is permutation invariant and within [min,max] token prob") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> probs;
        for (int i = 0; i < 8; ++i) {
            probs.push_back(0.05 + 0.9 * std::generate_canonical<double, 53>(rng));
        }
        std::vector<double> lps;
        for (double p : probs) lps.push_back(std::log(p));
        double a = logit_confidence(with_logprobs(lps));
        std::shuffle(lps.begin(), lps.end(), rng);
        double b = logit_confidence(with_logprobs(lps));
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
        CHECK(a >= *std::min_element(probs.begin(), probs.end()) - 1e-12);
        CHECK(a <= *std::max_element(probs.begin(), probs.end()) + 1e-12);
    }
}

TEST_CASE("logit confidence errors when logprobs are absent") {
    GenerationResult g;
    g.model_id = "m";
    CHECK_THROWS_AS(logit_confidence(g), SignalUnavailable);
    g.token_logprobs = std::vector<double>{};
    CHECK_THROWS_AS(logit_confidence(g), SignalUnavailable);
}

TEST_CASE("self-confidence markers parse in order") {
    CHECK(extract_self_confidence("Paris. [[conf=0.95]]") == std::vector<double>{0.95});
    CHECK(extract_self_confidence("no markers here").empty());
    auto two = extract_self_confidence("A [[conf=0.8]] B [[conf=0.3]]");
    REQUIRE(two.size() == 2);
    CHECK(two[0] == 0.8);
    CHECK(two[1] == 0.3);
    CHECK(*std::min_element(two.begin(), two.end()) == 0.3);
}

TEST_CASE("self-confidence markers round-trip and clamp out-of-range values") {
    std::vector<double> values{0.1, 0.55, 0.999};
    std::string text = "start";
    for (double v : values) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), " chunk [[conf=%.3f]]", v);
        text += buf;
    }
    CHECK(extract_self_confidence(text) == values);

    auto clamped = extract_self_confidence("x [[conf=1.7]] y [[conf=-0.2]]");
    REQUIRE(clamped.size() == 2);
    CHECK(clamped[0] == 1.0);
    CHECK(clamped[1] == 0.0);

    CHECK(extract_self_confidence("[[conf=not-a-number]]").empty());
}

TEST_CASE("reward model sigmoid endpoints") {
    CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(sigmoid(20.0) == doctest::Approx(1.0).epsilon(1e-8));

    auto emb = std::make_shared<HashingEmbedder>(32);
    CosineRewardModel reward(emb, 4.0);
    double self_score = reward.score("identical text", "identical text");
    CHECK(self_score == doctest::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-12));
    CHECK(self_score == doctest::Approx(0.9820).epsilon(1e-4));
}

TEST_CASE("arithmetic verifier re-evaluates simple expressions") {
    ArithmeticVerifier v;
    CHECK(v.verify("", "the result is 2+2=4") == 1.0);
    CHECK(v.verify("", "the result is 2+2=5") == 0.0);
    CHECK(v.verify("", "3*4=12 and 10-7=2") == 0.5);
    CHECK(v.verify("", "no math at all") == 1.0);
}

TEST_CASE("format verifier accepts well-formed structured documents") {
    FormatVerifier v;
    CHECK(v.verify("", R"({"a": [1, 2], "b": "x"})") == 1.0);
    CHECK(v.verify("", R"({"a": [1, 2)") == 0.0);
}

TEST_CASE("judge dimension normalization") {
    CHECK(normalize_dimension_score("relevance", 1) == 0.0);
    CHECK(normalize_dimension_score("relevance", 2) == 0.5);
    CHECK(normalize_dimension_score("relevance", 3) == 1.0);
    CHECK(normalize_dimension_score("helpfulness", 0) == 0.0);
    CHECK(normalize_dimension_score("helpfulness", 1) == 1.0);
    CHECK(normalize_overall_score(1) == 0.0);
    CHECK(normalize_overall_score(5) == 1.0);
}

TEST_CASE("rubric judge is deterministic and bounded") {
    RubricJudge judge;
    auto a = judge_evaluate("what is the capital of france", "the capital of france is paris.",
                            judge);
    auto b = judge_evaluate("what is the capital of france", "the capital of france is paris.",
                            judge);
    CHECK(a.score == b.score);
    CHECK(a.verdict.overall == b.verdict.overall);
    CHECK(a.score >= 0.0);
    CHECK(a.score <= 1.0);
    a.rubric.validate();
    a.verdict.validate();

    // A relevant echo should outscore unrelated junk.
    auto junk = judge_evaluate("what is the capital of france", "zzz qqq", judge);
    CHECK(a.score > junk.score);
}

TEST_CASE("rubric judge weighted score reproduces the hand-computed sum") {
    // Two dimensions at weights 0.5/0.5 scored (3, 1) on the 1-3 scale
    // normalize to 1.0 and 0.0, so the weighted score is 0.5.
    JudgeRubric rubric;
    rubric.dimensions = {{"factual_correctness", 0.5, ""}, {"reasoning_quality", 0.5, ""}};
    rubric.validate();
    double s = 0.5 * normalize_dimension_score("factual_correctness", 3) +
               0.5 * normalize_dimension_score("reasoning_quality", 1);
    CHECK(s == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rubric judge classifies query types by keyword rules") {
    CHECK(RubricJudge::classify_query("how to bake bread") == QueryType::Procedural);
    CHECK(RubricJudge::classify_query("write a poem about rain") == QueryType::Creative);
    CHECK(RubricJudge::classify_query("why does ice float") == QueryType::Analytical);
    CHECK(RubricJudge::classify_query("clarify the last answer") == QueryType::Clarification);
    CHECK(RubricJudge::classify_query("capital of peru") == QueryType::Factual);
    for (QueryType t : {QueryType::Factual, QueryType::Procedural, QueryType::Creative,
                        QueryType::Analytical, QueryType::Clarification}) {
        RubricJudge::make_rubric(t).validate();
    }
}

TEST_CASE("table judge returns the configured score") {
    TableJudge judge({{"incomplete", 0.4}}, 0.9);
    CHECK(judge_evaluate("q", "the references are incomplete", judge).score == 0.4);
    CHECK(judge_evaluate("q", "all good", judge).score == 0.9);
}

TEST_CASE("aggregate_judges resolves, weights, or flags by the overall delta") {
    SUBCASE("delta <= 1 resolves with plain means") {
        auto out = aggregate_judges({{verdict(4)}, {verdict(5), verdict(4)}});
        CHECK(out.status == AnnotationStatus::Resolved);
        CHECK(out.overall == doctest::Approx((4.0 + 4.5) / 2.0));
        CHECK(out.delta == doctest::Approx(0.5));
    }
    SUBCASE("delta > 2 flags for a human pass") {
        auto out = aggregate_judges({{verdict(2)}, {verdict(5), verdict(4)}});
        CHECK(out.delta == doctest::Approx(2.5));
        CHECK(out.status == AnnotationStatus::FlaggedForHuman);
    }
    SUBCASE("1 < delta <= 2 weights the more consistent judge") {
        // Judge A repeats tightly (std 0), judge B swings.
        std::vector<JudgeVerdict> a{verdict(3, {{"factual_correctness", 3}, {"helpfulness", 1}}),
                                    verdict(3, {{"factual_correctness", 3}, {"helpfulness", 1}})};
        std::vector<JudgeVerdict> b{verdict(5), verdict(4)};
        auto out = aggregate_judges({a, b});
        CHECK(out.status == AnnotationStatus::WeightedResolved);
        // Dimensions come from the consistent judge.
        CHECK(out.dimension_means.at("factual_correctness") == doctest::Approx(3.0));
        // Overall averages A's dimension-implied score with B's final score:
        // dims (1.0, 1.0 normalized) -> 5.0 on the 1-5 scale; B mean = 4.5.
        CHECK(out.overall == doctest::Approx((5.0 + 4.5) / 2.0));
    }
    SUBCASE("fewer than two judges is an error") {
        CHECK_THROWS_AS(aggregate_judges({{verdict(3)}}), std::invalid_argument);
        CHECK_THROWS_AS(aggregate_judges({}), std::invalid_argument);
    }
}

TEST_CASE("aggregate_judges branch selection depends only on delta thresholds") {
    std::mt19937_64 rng(23);
    auto random_verdicts = [&](int n) {
        std::vector<JudgeVerdict> out;
        for (int i = 0; i < n; ++i) {
            JudgeVerdict v;
            v.overall = 1 + static_cast<int>(rng() % 5);
            v.dimension_scores = {{"relevance", 1 + static_cast<int>(rng() % 3)},
                                  {"helpfulness", static_cast<int>(rng() % 2)}};
            v.confidence = 0.5;
            out.push_back(v);
        }
        return out;
    };
    for (int trial = 0; trial < 500; ++trial) {
        auto a = random_verdicts(1 + static_cast<int>(rng() % 3));
        auto b = random_verdicts(1 + static_cast<int>(rng() % 3));
        auto out = aggregate_judges({a, b});

        double mean_a = 0.0, mean_b = 0.0;
        for (const auto& v : a) mean_a += v.overall;
        for (const auto& v : b) mean_b += v.overall;
        mean_a /= a.size();
        mean_b /= b.size();
        double delta = std::abs(mean_a - mean_b);

        AnnotationStatus want = delta > 2.0   ? AnnotationStatus::FlaggedForHuman
                                : delta > 1.0 ? AnnotationStatus::WeightedResolved
                                              : AnnotationStatus::Resolved;
        CHECK(out.status == want);
        CHECK(out.delta == doctest::Approx(delta).epsilon(1e-12));
    }
}
