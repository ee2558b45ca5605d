#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cascadefuse/core.hpp"
#include "cascadefuse/embedder.hpp"

namespace cascadefuse {

/// The five cascade signals. Absent signals are distinct from zero in the
/// representation; the weighted combination treats them as 0.
struct SignalBundle {
    std::optional<double> logit;        // S_L
    std::optional<double> self_report;  // S_S (minimum marker value)
    std::optional<double> reward;       // S_R
    std::optional<double> domain;       // S_D
    std::optional<double> judge;        // S_J, filled only when the judge ran

    void validate() const;
};

struct SignalUnavailable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Sequence-level confidence from token log-probabilities: the geometric
/// mean of token probabilities, exp(mean(logprobs)). `arithmetic_mean`
/// switches to mean(exp(logprob)) instead.
double logit_confidence(const GenerationResult& g, bool arithmetic_mean = false);

/// Parses inline `[[conf=X]]` markers, in order of appearance. Out-of-range
/// values are clamped to [0,1]. No markers -> empty list (signal absent).
std::vector<double> extract_self_confidence(std::string_view text);

class RewardModel {
public:
    virtual ~RewardModel() = default;
    virtual double score(std::string_view query, std::string_view response) const = 0;
};

double sigmoid(double x);

/// Dual-encoder stand-in: sigmoid(gain * cosine(h_query, h_response)).
class CosineRewardModel final : public RewardModel {
public:
    CosineRewardModel(std::shared_ptr<const Embedder> embedder, double gain = 4.0)
        : embedder_(std::move(embedder)), gain_(gain) {}

    double score(std::string_view query, std::string_view response) const override;

private:
    std::shared_ptr<const Embedder> embedder_;
    double gain_;
};

/// Fixture reward model: first matching response substring wins.
class TableRewardModel final : public RewardModel {
public:
    TableRewardModel(std::vector<std::pair<std::string, double>> rules, double fallback = 0.5)
        : rules_(std::move(rules)), fallback_(fallback) {}

    double score(std::string_view query, std::string_view response) const override;

private:
    std::vector<std::pair<std::string, double>> rules_;
    double fallback_;
};

class DomainVerifier {
public:
    virtual ~DomainVerifier() = default;
    virtual double verify(std::string_view query, std::string_view response) const = 0;
};

/// Re-evaluates simple `a op b = c` equations (+, -, *) found in the
/// response. Score = fraction of equations that check out; 1.0 when none
/// are present.
class ArithmeticVerifier final : public DomainVerifier {
public:
    double verify(std::string_view query, std::string_view response) const override;
};

/// 1.0 if the response parses as a JSON document, else 0.0.
class FormatVerifier final : public DomainVerifier {
public:
    double verify(std::string_view query, std::string_view response) const override;
};

class TableVerifier final : public DomainVerifier {
public:
    TableVerifier(std::vector<std::pair<std::string, double>> rules, double fallback = 1.0)
        : rules_(std::move(rules)), fallback_(fallback) {}

    double verify(std::string_view query, std::string_view response) const override;

private:
    std::vector<std::pair<std::string, double>> rules_;
    double fallback_;
};

enum class QueryType { Factual, Procedural, Creative, Analytical, Clarification };

const char* to_string(QueryType t);

/// Evaluation rubric: dimensions with simplex weights.
struct JudgeRubric {
    struct Dimension {
        std::string name;
        double weight = 0.0;
        std::string criteria;
    };
    std::vector<Dimension> dimensions;

    void validate() const;
};

/// One judge's structured verdict. Dimension scores are 1-3 except the
/// binary "helpfulness" (0/1); overall is 1-5.
struct JudgeVerdict {
    std::map<std::string, int> dimension_scores;
    int overall = 1;
    double confidence = 0.0;
    QueryType query_type = QueryType::Factual;

    void validate() const;
};

struct JudgeResult {
    double score = 0.0;  // S_J in [0,1]
    JudgeVerdict verdict;
    JudgeRubric rubric;
};

/// Maps a dimension score onto [0,1]: identity for binary helpfulness,
/// (score - 1) / 2 for the 1-3 scales.
double normalize_dimension_score(const std::string& name, int score);

/// Maps a 1-5 overall score onto [0,1].
double normalize_overall_score(double overall);

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeResult evaluate(std::string_view query, std::string_view response) const = 0;
};

/// Deterministic two-stage judge: stage 1 derives a query-type-specific
/// rubric from keyword rules; stage 2 scores the response against it with
/// overlap heuristics. Exists to exercise the cascade control flow, not to
/// approximate LLM quality.
class RubricJudge final : public Judge {
public:
    JudgeResult evaluate(std::string_view query, std::string_view response) const override;

    static QueryType classify_query(std::string_view query);
    static JudgeRubric make_rubric(QueryType type);
};

/// Fixture judge: first matching response substring wins.
class TableJudge final : public Judge {
public:
    TableJudge(std::vector<std::pair<std::string, double>> rules, double fallback = 0.5)
        : rules_(std::move(rules)), fallback_(fallback) {}

    JudgeResult evaluate(std::string_view query, std::string_view response) const override;

private:
    std::vector<std::pair<std::string, double>> rules_;
    double fallback_;
};

/// Two-stage judge invocation: rubric, verdict, and the weighted score
/// S_J = sum(weight * normalized dimension score).
JudgeResult judge_evaluate(std::string_view query, std::string_view response, const Judge& judge);

enum class AnnotationStatus { Resolved, WeightedResolved, FlaggedForHuman };

const char* to_string(AnnotationStatus s);

struct AggregatedAnnotation {
    std::map<std::string, double> dimension_means;
    double overall = 0.0;
    AnnotationStatus status = AnnotationStatus::Resolved;
    double delta = 0.0;  // |overall_A - overall_B| that drove the branch
};

/// Combines two judges' repeated verdicts: per-judge dimension means, then
/// the disagreement rule on Delta = |overall_A - overall_B|:
///   Delta > 2        -> FlaggedForHuman
///   1 < Delta <= 2   -> WeightedResolved (lower-repeat-std judge's
///                       dimensions, averaged on the overall scale with the
///                       other judge's final score)
///   otherwise        -> Resolved (plain means)
AggregatedAnnotation aggregate_judges(const std::vector<std::vector<JudgeVerdict>>& per_judge);

}  // namespace cascadefuse
