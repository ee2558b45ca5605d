#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cascadefuse/core.hpp"
#include "cascadefuse/provider.hpp"
#include "cascadefuse/signals.hpp"
#include "cascadefuse/taxonomy.hpp"

namespace cascadefuse {

struct CascadeConfig {
    double tau_high = 0.95;
    double tau_low = 0.3;
    double tau_domain = 0.7;
    double tau_knowledge = 0.4;
    double borderline_low = 0.4;
    double borderline_high = 0.6;
    double delta = 0.5;  // acceptance threshold, overridable per request
    int max_cascades = 2;
    static constexpr double judge_accept = 0.5;
    std::optional<std::string> fallback_model;

    void validate() const;
};

/// Per-domain weights for (S_L, S_S, S_R, S_D). Each vector is a simplex.
struct DomainWeights {
    std::array<double, 4> fallback{0.25, 0.25, 0.25, 0.25};
    std::map<Label, std::array<double, 4>> by_domain;

    const std::array<double, 4>& for_domain(const Label& domain) const;
    void validate() const;
};

enum class Decision {
    AcceptFast,
    DeferFast,
    DeferDomain,
    DeferKnowledge,
    AcceptCombined,
    DeferCombined,
    AcceptJudge,
    DeferJudge,
};

const char* to_string(Decision d);
bool is_accept(Decision d);

/// Deferred judge invocation; the caller binds query and response. Throwing
/// is treated as a judge failure (conservative defer).
using JudgeFn = std::function<JudgeResult()>;

struct ConfidenceOutcome {
    Decision decision = Decision::DeferCombined;
    double pi = 0.0;        // confidence handed to the cascading loop
    double combined = 0.0;  // weighted signal sum (absent signals contribute 0)
    bool judge_invoked = false;
    std::optional<double> judge_score;
    std::optional<std::string> judge_error;
};

/// The deferral decision procedure, evaluated as a strict priority chain:
///   (a) S_L > tau_high and not sensitive        -> accept immediately
///   (b) S_L < tau_low                           -> defer
///   (c) specialized and S_D < tau_domain        -> defer (verification)
///   (d) S_S < tau_knowledge and not final model -> defer (knowledge boundary)
///   (e) S_combined = w . (S_L, S_S, S_R, S_D)
///   (f) borderline band                         -> judge decides at 0.5
///   (g) otherwise                               -> accept iff S_combined >= 0.5
ConfidenceOutcome cascade_confidence(const SignalBundle& bundle, const Label& domain,
                                     bool sensitive, bool specialized, bool is_final_model,
                                     const DomainWeights& weights, const CascadeConfig& cfg,
                                     const JudgeFn& judge);

struct CascadeAttempt {
    std::string model_id;
    GenerationResult result;
    SignalBundle signals;
    double combined = 0.0;
    Decision decision = Decision::DeferCombined;
    bool judge_invoked = false;
    double pi = 0.0;
    double cost = 0.0;  // generation + judge cost for this attempt
    bool logit_substituted = false;  // S_L backed by self-reported confidence
    std::optional<std::string> error;

    nlohmann::json to_json() const;
};

struct CascadeTrace {
    std::string query_id;
    std::size_t subproblem_index = 0;
    Label domain;
    bool sensitive = false;
    bool specialized = false;
    std::vector<CascadeAttempt> attempts;

    bool accepted = false;
    std::string accepted_model;
    std::string output;
    bool via_fallback_model = false;
    std::string fallback_reason;

    double total_cost = 0.0;
    std::size_t cascades_used = 0;
    bool budget_exceeded = false;

    nlohmann::json to_json() const;
};

/// Signal providers and domain context for a cascade run.
struct SignalContext {
    const LabelSpace& space;
    const Embedder& embedder;
    const RewardModel* reward = nullptr;
    const std::map<Label, std::shared_ptr<const DomainVerifier>>* verifiers = nullptr;
    const Judge* judge = nullptr;
    double judge_cost = 0.0;
    double domain_alpha = 4.0;  // temperature for the domain classification
    bool logit_arithmetic_mean = false;
};

/// Classifies the query's domain with the fast classifier restricted to the
/// "domain" dimension. Returns an empty label when that dimension is empty.
Label classify_domain(const std::string& text, const SignalContext& ctx);

/// Collects the per-attempt signals for one generation: logit confidence
/// (or its self-report substitute when the model exposes no logits), the
/// marker minimum, the reward score, and domain verification when a
/// verifier is registered for the domain.
SignalBundle gather_signals(const Subproblem& x, const ModelProfile& profile,
                            const GenerationResult& result, const Label& domain,
                            const SignalContext& ctx, bool* logit_substituted = nullptr);

/// Executes the cascading loop over the candidate set: ascending
/// (tier, cost, id) order, at most max_cascades + 1 attempts, accept on
/// pi >= delta. Provider errors skip to the next model. When every
/// candidate defers, either the configured fallback model answers or the
/// trace ends in a "no confident solution" fallback.
CascadeTrace run_cascade(const Subproblem& x, const RoutingDecision& candidates,
                         const ModelRegistry& registry, const ProviderSet& providers,
                         const SignalContext& signals, const DomainWeights& weights,
                         const CascadeConfig& cfg);

}  // namespace cascadefuse
