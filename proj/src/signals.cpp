#include "cascadefuse/signals.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cascadefuse {

namespace {

bool in_unit_interval(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

std::vector<std::string> tokenize_lower(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    std::string h(haystack), n(needle);
    std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
    return h.find(n) != std::string::npos;
}

}  // namespace

void SignalBundle::validate() const {
    auto check = [](const std::optional<double>& s, const char* name) {
        if (s && !in_unit_interval(*s)) {
            throw std::invalid_argument(std::string("signal ") + name + " outside [0,1]");
        }
    };
    check(logit, "S_L");
    check(self_report, "S_S");
    check(reward, "S_R");
    check(domain, "S_D");
    check(judge, "S_J");
}

double logit_confidence(const GenerationResult& g, bool arithmetic_mean) {
    if (!g.token_logprobs || g.token_logprobs->empty()) {
        throw SignalUnavailable("logit confidence unavailable for model '" + g.model_id + "'");
    }
    const auto& lps = *g.token_logprobs;
    if (arithmetic_mean) {
        double acc = 0.0;
        for (double lp : lps) acc += std::exp(std::min(lp, 0.0));
        return acc / static_cast<double>(lps.size());
    }
    double mean = 0.0;
    for (double lp : lps) mean += std::min(lp, 0.0);
    mean /= static_cast<double>(lps.size());
    return std::exp(mean);
}

std::vector<double> extract_self_confidence(std::string_view text) {
    static constexpr std::string_view kOpen = "[[conf=";
    static constexpr std::string_view kClose = "]]";
    std::vector<double> out;
    std::size_t pos = 0;
    while ((pos = text.find(kOpen, pos)) != std::string_view::npos) {
        std::size_t val_start = pos + kOpen.size();
        std::size_t end = text.find(kClose, val_start);
        if (end == std::string_view::npos) break;
        std::string token(text.substr(val_start, end - val_start));
        char* parse_end = nullptr;
        double v = std::strtod(token.c_str(), &parse_end);
        if (parse_end != token.c_str() && parse_end == token.c_str() + token.size()) {
            if (v < 0.0 || v > 1.0) {
                std::cerr << "warning: self-confidence marker " << v << " clamped to [0,1]\n";
                v = std::clamp(v, 0.0, 1.0);
            }
            out.push_back(v);
        }
        pos = end + kClose.size();
    }
    return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double CosineRewardModel::score(std::string_view query, std::string_view response) const {
    EmbeddingVector hx = embedder_->embed(query);
    EmbeddingVector hy = embedder_->embed(response);
    return sigmoid(gain_ * cosine_similarity(hx, hy));
}

double TableRewardModel::score(std::string_view, std::string_view response) const {
    for (const auto& [needle, value] : rules_) {
        if (response.find(needle) != std::string_view::npos) return value;
    }
    return fallback_;
}

double ArithmeticVerifier::verify(std::string_view, std::string_view response) const {
    // Scan for "a op b = c" with op in {+,-,*}; score the fraction that hold.
    std::size_t checked = 0, correct = 0;
    const char* s = response.data();
    const char* end = s + response.size();
    auto parse_number = [&](const char*& p, double& out) {
        char* num_end = nullptr;
        double v = std::strtod(p, &num_end);
        if (num_end == p || num_end > end) return false;
        p = num_end;
        out = v;
        return true;
    };
    for (const char* p = s; p < end; ++p) {
        if (!std::isdigit(static_cast<unsigned char>(*p))) continue;
        const char* cursor = p;
        double a, b, c;
        if (!parse_number(cursor, a)) continue;
        while (cursor < end && *cursor == ' ') ++cursor;
        if (cursor >= end || (*cursor != '+' && *cursor != '-' && *cursor != '*')) {
            p = cursor - 1;
            continue;
        }
        char op = *cursor++;
        while (cursor < end && *cursor == ' ') ++cursor;
        if (!parse_number(cursor, b)) {
            p = cursor - 1;
            continue;
        }
        while (cursor < end && *cursor == ' ') ++cursor;
        if (cursor >= end || *cursor != '=') {
            p = cursor - 1;
            continue;
        }
        ++cursor;
        while (cursor < end && *cursor == ' ') ++cursor;
        if (!parse_number(cursor, c)) {
            p = cursor - 1;
            continue;
        }
        double expected = op == '+' ? a + b : op == '-' ? a - b : a * b;
        ++checked;
        if (std::abs(expected - c) <= 1e-9 * std::max({1.0, std::abs(expected), std::abs(c)})) {
            ++correct;
        }
        p = cursor - 1;
    }
    if (checked == 0) return 1.0;  // nothing to verify
    return static_cast<double>(correct) / static_cast<double>(checked);
}

double FormatVerifier::verify(std::string_view, std::string_view response) const {
    return nlohmann::json::accept(response) ? 1.0 : 0.0;
}

double TableVerifier::verify(std::string_view, std::string_view response) const {
    for (const auto& [needle, value] : rules_) {
        if (response.find(needle) != std::string_view::npos) return value;
    }
    return fallback_;
}

const char* to_string(QueryType t) {
    switch (t) {
        case QueryType::Factual: return "factual";
        case QueryType::Procedural: return "procedural";
        case QueryType::Creative: return "creative";
        case QueryType::Analytical: return "analytical";
        case QueryType::Clarification: return "clarification";
    }
    return "unknown";
}

void JudgeRubric::validate() const {
    if (dimensions.empty()) throw std::invalid_argument("rubric: no dimensions");
    double sum = 0.0;
    for (const auto& d : dimensions) {
        if (d.weight < 0.0) throw std::invalid_argument("rubric: negative weight for " + d.name);
        sum += d.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("rubric: weights sum to " + std::to_string(sum));
    }
}

void JudgeVerdict::validate() const {
    for (const auto& [name, score] : dimension_scores) {
        if (name == "helpfulness") {
            if (score != 0 && score != 1) {
                throw std::invalid_argument("verdict: helpfulness must be 0 or 1");
            }
        } else if (score < 1 || score > 3) {
            throw std::invalid_argument("verdict: dimension '" + name + "' outside 1-3");
        }
    }
    if (overall < 1 || overall > 5) throw std::invalid_argument("verdict: overall outside 1-5");
    if (!in_unit_interval(confidence)) {
        throw std::invalid_argument("verdict: confidence outside [0,1]");
    }
}

double normalize_dimension_score(const std::string& name, int score) {
    if (name == "helpfulness") return static_cast<double>(score);
    return (static_cast<double>(score) - 1.0) / 2.0;
}

double normalize_overall_score(double overall) { return (overall - 1.0) / 4.0; }

QueryType RubricJudge::classify_query(std::string_view query) {
    if (contains_ci(query, "clarify") || contains_ci(query, "what do you mean") ||
        contains_ci(query, "elaborate")) {
        return QueryType::Clarification;
    }
    if (contains_ci(query, "how do") || contains_ci(query, "how to") ||
        contains_ci(query, "steps") || contains_ci(query, "procedure")) {
        return QueryType::Procedural;
    }
    if (contains_ci(query, "write") || contains_ci(query, "draft") ||
        contains_ci(query, "compose") || contains_ci(query, "imagine") ||
        contains_ci(query, "story") || contains_ci(query, "poem")) {
        return QueryType::Creative;
    }
    if (contains_ci(query, "why") || contains_ci(query, "analyze") ||
        contains_ci(query, "compare") || contains_ci(query, "evaluate") ||
        contains_ci(query, "assess")) {
        return QueryType::Analytical;
    }
    return QueryType::Factual;
}

JudgeRubric RubricJudge::make_rubric(QueryType type) {
    auto rubric = [](std::initializer_list<std::pair<const char*, double>> ws) {
        JudgeRubric r;
        for (const auto& [name, w] : ws) {
            r.dimensions.push_back({name, w, std::string("scored per ") + name});
        }
        return r;
    };
    switch (type) {
        case QueryType::Factual:
            return rubric({{"factual_correctness", 0.30},
                           {"reasoning_quality", 0.20},
                           {"instruction_following", 0.10},
                           {"completeness", 0.10},
                           {"clarity_organization", 0.10},
                           {"relevance", 0.10},
                           {"helpfulness", 0.10}});
        case QueryType::Procedural:
            return rubric({{"instruction_following", 0.30},
                           {"completeness", 0.25},
                           {"reasoning_quality", 0.10},
                           {"factual_correctness", 0.10},
                           {"clarity_organization", 0.10},
                           {"relevance", 0.05},
                           {"helpfulness", 0.10}});
        case QueryType::Creative:
            return rubric({{"relevance", 0.25},
                           {"helpfulness", 0.25},
                           {"clarity_organization", 0.15},
                           {"instruction_following", 0.15},
                           {"completeness", 0.10},
                           {"reasoning_quality", 0.05},
                           {"factual_correctness", 0.05}});
        case QueryType::Analytical:
            return rubric({{"reasoning_quality", 0.30},
                           {"factual_correctness", 0.20},
                           {"completeness", 0.15},
                           {"instruction_following", 0.10},
                           {"clarity_organization", 0.10},
                           {"relevance", 0.05},
                           {"helpfulness", 0.10}});
        case QueryType::Clarification:
            return rubric({{"clarity_organization", 0.25},
                           {"relevance", 0.20},
                           {"helpfulness", 0.15},
                           {"completeness", 0.15},
                           {"instruction_following", 0.10},
                           {"reasoning_quality", 0.10},
                           {"factual_correctness", 0.05}});
    }
    throw std::logic_error("unreachable query type");
}

JudgeResult RubricJudge::evaluate(std::string_view query, std::string_view response) const {
    QueryType type = classify_query(query);
    JudgeRubric rubric = make_rubric(type);

    std::vector<std::string> q_tokens = tokenize_lower(query);
    std::vector<std::string> r_tokens = tokenize_lower(response);
    std::set<std::string> q_set(q_tokens.begin(), q_tokens.end());
    std::set<std::string> r_set(r_tokens.begin(), r_tokens.end());
    std::size_t shared = 0;
    for (const auto& t : q_set) {
        if (r_set.count(t)) ++shared;
    }
    double overlap = q_set.empty() ? 0.0 : static_cast<double>(shared) / q_set.size();
    std::size_t len_r = r_tokens.size();

    bool hedged = contains_ci(response, "not sure") || contains_ci(response, "cannot") ||
                  contains_ci(response, "i don't know");
    bool reasoned = contains_ci(response, "because") || contains_ci(response, "therefore") ||
                    contains_ci(response, "thus") || contains_ci(response, "step");

    JudgeVerdict verdict;
    verdict.query_type = type;
    auto& dims = verdict.dimension_scores;
    dims["relevance"] = overlap >= 0.5 ? 3 : overlap >= 0.2 ? 2 : 1;
    dims["completeness"] = len_r >= std::max<std::size_t>(8, q_tokens.size()) ? 3
                           : len_r >= 4                                       ? 2
                                                                              : 1;
    dims["clarity_organization"] = len_r == 0                                     ? 1
                                   : (response.find('.') != std::string_view::npos &&
                                      len_r < 120)                                ? 3
                                                                                  : 2;
    dims["factual_correctness"] = len_r == 0 ? 1 : hedged ? 2 : overlap >= 0.34 ? 3 : 2;
    dims["instruction_following"] = len_r == 0 ? 1 : overlap > 0.1 ? 3 : 2;
    dims["reasoning_quality"] = reasoned ? 3 : len_r >= 6 ? 2 : 1;
    dims["helpfulness"] = (len_r >= 2 && overlap > 0.0) ? 1 : 0;

    double weighted = 0.0;
    for (const auto& d : rubric.dimensions) {
        weighted += d.weight * normalize_dimension_score(d.name, dims.at(d.name));
    }

    int overall = 1 + static_cast<int>(std::lround(4.0 * weighted));
    overall = std::clamp(overall, 1, 5);
    // Weighting caps: a failed critical dimension bounds the overall score.
    if (type == QueryType::Factual && dims.at("factual_correctness") == 1) {
        overall = std::min(overall, 2);
    }
    if (type == QueryType::Procedural && dims.at("instruction_following") == 1) {
        overall = std::min(overall, 2);
    }
    verdict.overall = overall;

    double lo = 1.0, hi = 0.0;
    for (const auto& [name, score] : dims) {
        double n = normalize_dimension_score(name, score);
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    verdict.confidence = std::clamp(1.0 - (hi - lo), 0.0, 1.0);
    verdict.validate();

    return JudgeResult{weighted, std::move(verdict), std::move(rubric)};
}

JudgeResult TableJudge::evaluate(std::string_view query, std::string_view response) const {
    double score = fallback_;
    for (const auto& [needle, value] : rules_) {
        if (response.find(needle) != std::string_view::npos) {
            score = value;
            break;
        }
    }
    JudgeResult result;
    result.score = score;
    result.rubric.dimensions.push_back({"helpfulness", 1.0, "table lookup"});
    result.verdict.query_type = RubricJudge::classify_query(query);
    result.verdict.dimension_scores["helpfulness"] = score >= 0.5 ? 1 : 0;
    result.verdict.overall = std::clamp(1 + static_cast<int>(std::lround(4.0 * score)), 1, 5);
    result.verdict.confidence = 1.0;
    return result;
}

JudgeResult judge_evaluate(std::string_view query, std::string_view response,
                           const Judge& judge) {
    JudgeResult result = judge.evaluate(query, response);
    if (!in_unit_interval(result.score)) {
        throw std::runtime_error("judge returned score outside [0,1]");
    }
    result.verdict.validate();
    return result;
}

const char* to_string(AnnotationStatus s) {
    switch (s) {
        case AnnotationStatus::Resolved: return "resolved";
        case AnnotationStatus::WeightedResolved: return "weighted_resolved";
        case AnnotationStatus::FlaggedForHuman: return "flagged_for_human";
    }
    return "unknown";
}

namespace {

struct JudgeSummary {
    std::map<std::string, double> dim_means;
    double overall_mean = 0.0;
    double overall_std = 0.0;
};

JudgeSummary summarize(const std::vector<JudgeVerdict>& repeats) {
    if (repeats.empty()) throw std::invalid_argument("aggregate_judges: judge with no repeats");
    JudgeSummary s;
    std::map<std::string, std::size_t> counts;
    double sum = 0.0, sum2 = 0.0;
    for (const auto& v : repeats) {
        v.validate();
        for (const auto& [name, score] : v.dimension_scores) {
            s.dim_means[name] += score;
            counts[name] += 1;
        }
        sum += v.overall;
        sum2 += static_cast<double>(v.overall) * v.overall;
    }
    for (auto& [name, total] : s.dim_means) total /= static_cast<double>(counts[name]);
    double n = static_cast<double>(repeats.size());
    s.overall_mean = sum / n;
    s.overall_std = std::sqrt(std::max(0.0, sum2 / n - s.overall_mean * s.overall_mean));
    return s;
}

// Maps a judge's dimension means onto the 1-5 overall scale via uniform
// weights over normalized dimensions.
double dims_on_overall_scale(const std::map<std::string, double>& dim_means) {
    if (dim_means.empty()) return 1.0;
    double acc = 0.0;
    for (const auto& [name, mean] : dim_means) {
        int lo = name == "helpfulness" ? 0 : 1;
        double norm = name == "helpfulness" ? mean : (mean - lo) / 2.0;
        acc += std::clamp(norm, 0.0, 1.0);
    }
    return 1.0 + 4.0 * acc / static_cast<double>(dim_means.size());
}

}  // namespace

AggregatedAnnotation aggregate_judges(const std::vector<std::vector<JudgeVerdict>>& per_judge) {
    if (per_judge.size() < 2) {
        throw std::invalid_argument("aggregate_judges: at least two judges required");
    }
    if (per_judge.size() > 2) {
        throw std::invalid_argument("aggregate_judges: disagreement rule is defined pairwise; "
                                    "got " + std::to_string(per_judge.size()) + " judges");
    }
    JudgeSummary a = summarize(per_judge[0]);
    JudgeSummary b = summarize(per_judge[1]);

    AggregatedAnnotation out;
    out.delta = std::abs(a.overall_mean - b.overall_mean);

    auto cross_judge_means = [&]() {
        std::map<std::string, double> means;
        std::map<std::string, std::size_t> counts;
        for (const auto* s : {&a, &b}) {
            for (const auto& [name, mean] : s->dim_means) {
                means[name] += mean;
                counts[name] += 1;
            }
        }
        for (auto& [name, total] : means) total /= static_cast<double>(counts[name]);
        return means;
    };

    if (out.delta > 2.0) {
        out.status = AnnotationStatus::FlaggedForHuman;
        out.dimension_means = cross_judge_means();
        out.overall = (a.overall_mean + b.overall_mean) / 2.0;
    } else if (out.delta > 1.0) {
        out.status = AnnotationStatus::WeightedResolved;
        const JudgeSummary& consistent = a.overall_std <= b.overall_std ? a : b;
        const JudgeSummary& other = a.overall_std <= b.overall_std ? b : a;
        out.dimension_means = consistent.dim_means;
        out.overall = (dims_on_overall_scale(consistent.dim_means) + other.overall_mean) / 2.0;
    } else {
        out.status = AnnotationStatus::Resolved;
        out.dimension_means = cross_judge_means();
        out.overall = (a.overall_mean + b.overall_mean) / 2.0;
    }
    return out;
}

}  // namespace cascadefuse
