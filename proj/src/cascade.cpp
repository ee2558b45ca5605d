#include "cascadefuse/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cascadefuse {

void CascadeConfig::validate() const {
    auto unit = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument(std::string("cascade: ") + name + " outside [0,1]");
        }
    };
    unit(tau_high, "tau_high");
    unit(tau_low, "tau_low");
    unit(tau_domain, "tau_domain");
    unit(tau_knowledge, "tau_knowledge");
    unit(borderline_low, "borderline_low");
    unit(borderline_high, "borderline_high");
    unit(delta, "delta");
    if (!(tau_low < tau_high)) throw std::invalid_argument("cascade: tau_low must be < tau_high");
    if (borderline_low > borderline_high) {
        throw std::invalid_argument("cascade: borderline_low must be <= borderline_high");
    }
    if (max_cascades < 0) throw std::invalid_argument("cascade: max_cascades must be >= 0");
}

const std::array<double, 4>& DomainWeights::for_domain(const Label& domain) const {
    auto it = by_domain.find(domain);
    return it == by_domain.end() ? fallback : it->second;
}

void DomainWeights::validate() const {
    auto check = [](const std::array<double, 4>& w, const std::string& which) {
        double sum = 0.0;
        for (double v : w) {
            if (v < 0.0) throw std::invalid_argument("weights " + which + ": negative entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw std::invalid_argument("weights " + which + ": sum to " + std::to_string(sum));
        }
    };
    check(fallback, "default");
    for (const auto& [domain, w] : by_domain) check(w, "for '" + domain + "'");
}

const char* to_string(Decision d) {
    switch (d) {
        case Decision::AcceptFast: return "accept_fast";
        case Decision::DeferFast: return "defer_fast";
        case Decision::DeferDomain: return "defer_domain";
        case Decision::DeferKnowledge: return "defer_knowledge";
        case Decision::AcceptCombined: return "accept_combined";
        case Decision::DeferCombined: return "defer_combined";
        case Decision::AcceptJudge: return "accept_judge";
        case Decision::DeferJudge: return "defer_judge";
    }
    return "unknown";
}

bool is_accept(Decision d) {
    return d == Decision::AcceptFast || d == Decision::AcceptCombined ||
           d == Decision::AcceptJudge;
}

ConfidenceOutcome cascade_confidence(const SignalBundle& bundle, const Label& domain,
                                     bool sensitive, bool specialized, bool is_final_model,
                                     const DomainWeights& weights, const CascadeConfig& cfg,
                                     const JudgeFn& judge) {
    bundle.validate();
    ConfidenceOutcome out;

    const std::array<double, 4>& w = weights.for_domain(domain);
    auto value_or_zero = [](const std::optional<double>& s) { return s.value_or(0.0); };
    out.combined = w[0] * value_or_zero(bundle.logit) + w[1] * value_or_zero(bundle.self_report) +
                   w[2] * value_or_zero(bundle.reward) + w[3] * value_or_zero(bundle.domain);

    // (a) confident logits outside sensitive domains: accept without
    // consulting anything else.
    if (bundle.logit && *bundle.logit > cfg.tau_high && !sensitive) {
        out.decision = Decision::AcceptFast;
        out.pi = 1.0;
        return out;
    }
    // (b) hopeless logits: defer regardless of the other signals.
    if (bundle.logit && *bundle.logit < cfg.tau_low) {
        out.decision = Decision::DeferFast;
        out.pi = out.combined;
        return out;
    }
    // (c) specialized-domain verification failure.
    if (specialized && bundle.domain && *bundle.domain < cfg.tau_domain) {
        out.decision = Decision::DeferDomain;
        out.pi = out.combined;
        return out;
    }
    // (d) knowledge boundary, unless there is nothing left to escalate to.
    if (bundle.self_report && *bundle.self_report < cfg.tau_knowledge && !is_final_model) {
        out.decision = Decision::DeferKnowledge;
        out.pi = out.combined;
        return out;
    }
    // (f) borderline band: the judge decides at 0.5.
    if (out.combined >= cfg.borderline_low && out.combined <= cfg.borderline_high) {
        out.judge_invoked = true;
        if (!judge) {
            out.judge_error = "no judge configured";
            out.decision = Decision::DeferJudge;
            out.pi = out.combined;
            return out;
        }
        try {
            JudgeResult result = judge();
            out.judge_score = result.score;
            out.pi = result.score;
            out.decision = result.score >= CascadeConfig::judge_accept ? Decision::AcceptJudge
                                                                       : Decision::DeferJudge;
        } catch (const std::exception& e) {
            out.judge_error = e.what();
            out.decision = Decision::DeferJudge;
            out.pi = out.combined;
        }
        return out;
    }
    // (g) clear of the band: the weighted sum decides at 0.5.
    out.decision = out.combined >= 0.5 ? Decision::AcceptCombined : Decision::DeferCombined;
    out.pi = out.combined;
    return out;
}

Label classify_domain(const std::string& text, const SignalContext& ctx) {
    std::vector<Label> domains = ctx.space.dimension_labels("domain");
    if (domains.empty()) return {};
    EmbeddingVector v = ctx.embedder.embed(text);
    Label best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const Label& c : domains) {
        double score = -l2_distance(v, ctx.space.ref_embeddings().at(c));
        if (score > best_score || (score == best_score && c < best)) {
            best = c;
            best_score = score;
        }
    }
    return best;
}

nlohmann::json CascadeAttempt::to_json() const {
    nlohmann::json signals_json = nlohmann::json::object();
    auto put = [&](const char* name, const std::optional<double>& s) {
        if (s) signals_json[name] = *s;
    };
    put("logit", signals.logit);
    put("self_report", signals.self_report);
    put("reward", signals.reward);
    put("domain", signals.domain);
    put("judge", signals.judge);

    nlohmann::json j{{"model", model_id},
                     {"signals", signals_json},
                     {"combined", combined},
                     {"decision", to_string(decision)},
                     {"judge_invoked", judge_invoked},
                     {"pi", pi},
                     {"cost", cost}};
    if (!error) {
        j["output"] = result.text;
        j["input_tokens"] = result.input_tokens;
        j["output_tokens"] = result.output_tokens;
    }
    if (logit_substituted) j["logit_substituted"] = true;
    if (error) j["error"] = *error;
    return j;
}

nlohmann::json CascadeTrace::to_json() const {
    nlohmann::json attempts_json = nlohmann::json::array();
    for (const auto& a : attempts) attempts_json.push_back(a.to_json());

    nlohmann::json final_json;
    if (accepted) {
        final_json = {{"type", "accepted"},
                      {"model", accepted_model},
                      {"output", output},
                      {"via_fallback_model", via_fallback_model}};
    } else {
        final_json = {{"type", "fallback"}, {"reason", fallback_reason}};
    }
    nlohmann::json j{{"query_id", query_id},
                     {"subproblem", subproblem_index},
                     {"domain", domain},
                     {"sensitive", sensitive},
                     {"specialized", specialized},
                     {"attempts", attempts_json},
                     {"final", final_json},
                     {"total_cost", total_cost},
                     {"cascades_used", cascades_used}};
    if (budget_exceeded) j["budget_exceeded"] = true;
    return j;
}

SignalBundle gather_signals(const Subproblem& x, const ModelProfile& profile,
                            const GenerationResult& result, const Label& domain,
                            const SignalContext& ctx, bool* logit_substituted) {
    SignalBundle bundle;

    if (!result.self_conf_markers.empty()) {
        bundle.self_report =
            *std::min_element(result.self_conf_markers.begin(), result.self_conf_markers.end());
    }

    if (profile.supports_logits && result.token_logprobs && !result.token_logprobs->empty()) {
        bundle.logit = logit_confidence(result, ctx.logit_arithmetic_mean);
    } else if (!result.self_conf_markers.empty()) {
        // No logits: substitute the self-reported confidence of the output.
        double sum = 0.0;
        for (double m : result.self_conf_markers) sum += m;
        bundle.logit = sum / static_cast<double>(result.self_conf_markers.size());
        if (logit_substituted) *logit_substituted = true;
    }

    if (ctx.reward) bundle.reward = ctx.reward->score(x.text, result.text);

    if (ctx.verifiers && !domain.empty()) {
        auto it = ctx.verifiers->find(domain);
        if (it != ctx.verifiers->end()) {
            try {
                bundle.domain = it->second->verify(x.text, result.text);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "warning: domain verifier for '%s' failed: %s\n",
                             domain.c_str(), e.what());
            }
        }
    }
    return bundle;
}

CascadeTrace run_cascade(const Subproblem& x, const RoutingDecision& candidates,
                         const ModelRegistry& registry, const ProviderSet& providers,
                         const SignalContext& signals, const DomainWeights& weights,
                         const CascadeConfig& cfg) {
    cfg.validate();
    weights.validate();

    CascadeTrace trace;
    trace.query_id = x.parent_id;
    trace.subproblem_index = x.index;
    trace.domain = classify_domain(x.text, signals);
    trace.sensitive = signals.space.is_sensitive(trace.domain);
    trace.specialized = signals.space.is_specialized(trace.domain);

    if (candidates.models.empty()) {
        trace.fallback_reason = "empty candidate set";
        return trace;
    }

    std::vector<const ModelProfile*> order;
    order.reserve(candidates.models.size());
    for (const auto& id : candidates.models) order.push_back(&registry.at(id));
    std::stable_sort(order.begin(), order.end(), [](const ModelProfile* a, const ModelProfile* b) {
        return cascade_order_less(*a, *b);
    });

    std::size_t max_attempts =
        std::min<std::size_t>(order.size(), static_cast<std::size_t>(cfg.max_cascades) + 1);
    double delta = x.constraints.acceptance_threshold_delta.value_or(cfg.delta);

    for (std::size_t i = 0; i < max_attempts; ++i) {
        const ModelProfile& profile = *order[i];
        CascadeAttempt attempt;
        attempt.model_id = profile.id;

        try {
            attempt.result = run_model(profile, providers.provider_for(profile.id), x.text);
        } catch (const std::exception& e) {
            attempt.error = e.what();
            trace.attempts.push_back(std::move(attempt));
            continue;  // provider outage: skip to the next model
        }
        attempt.cost = attempt.result.cost;

        attempt.signals = gather_signals(x, profile, attempt.result, trace.domain, signals,
                                         &attempt.logit_substituted);

        bool is_final = i + 1 == max_attempts;
        double judge_cost = 0.0;
        JudgeFn judge_fn;
        if (signals.judge) {
            const Judge* judge = signals.judge;
            const std::string& query = x.text;
            const std::string& response = attempt.result.text;
            judge_fn = [judge, &query, &response, &judge_cost, &signals]() {
                judge_cost = signals.judge_cost;
                return judge_evaluate(query, response, *judge);
            };
        }
        ConfidenceOutcome outcome =
            cascade_confidence(attempt.signals, trace.domain, trace.sensitive, trace.specialized,
                               is_final, weights, cfg, judge_fn);
        attempt.combined = outcome.combined;
        attempt.decision = outcome.decision;
        attempt.judge_invoked = outcome.judge_invoked;
        attempt.signals.judge = outcome.judge_score;
        attempt.pi = outcome.pi;
        attempt.cost += judge_cost;

        bool accept = is_accept(outcome.decision) && outcome.pi >= delta;
        trace.attempts.push_back(std::move(attempt));
        if (accept) {
            trace.accepted = true;
            trace.accepted_model = profile.id;
            trace.output = trace.attempts.back().result.text;
            break;
        }
    }

    if (!trace.accepted) {
        const ModelProfile* fallback =
            cfg.fallback_model ? registry.find(*cfg.fallback_model) : nullptr;
        if (fallback && providers.has(fallback->id)) {
            CascadeAttempt attempt;
            attempt.model_id = fallback->id;
            try {
                attempt.result =
                    run_model(*fallback, providers.provider_for(fallback->id), x.text);
                attempt.cost = attempt.result.cost;
                attempt.decision = Decision::AcceptCombined;
                attempt.pi = 1.0;  // designated fallback answers unconditionally
                trace.accepted = true;
                trace.accepted_model = fallback->id;
                trace.output = attempt.result.text;
                trace.via_fallback_model = true;
            } catch (const std::exception& e) {
                attempt.error = e.what();
                trace.fallback_reason = "no confident solution";
            }
            trace.attempts.push_back(std::move(attempt));
        } else {
            trace.fallback_reason = "no confident solution";
        }
    }

    for (const auto& a : trace.attempts) trace.total_cost += a.cost;
    trace.cascades_used = trace.attempts.empty() ? 0 : trace.attempts.size() - 1;
    if (x.constraints.max_cost && trace.total_cost > *x.constraints.max_cost) {
        trace.budget_exceeded = true;
    }
    return trace;
}

}  // namespace cascadefuse
