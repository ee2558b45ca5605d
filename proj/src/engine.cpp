#include "cascadefuse/engine.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cascadefuse {

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
    std::ostringstream out;
    out << issues.size() << " config issue(s):";
    for (const auto& issue : issues) out << "\n  - " << issue;
    return out.str();
}

std::string resolve_path(const std::string& base_dir, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute() || base_dir.empty()) return path;
    return (std::filesystem::path(base_dir) / p).string();
}

std::shared_ptr<const RewardModel> make_reward(const nlohmann::json& j,
                                               std::shared_ptr<const Embedder> embedder) {
    std::string kind = j.value("kind", "cosine");
    if (kind == "cosine") {
        return std::make_shared<CosineRewardModel>(std::move(embedder), j.value("gain", 4.0));
    }
    if (kind == "table") {
        std::vector<std::pair<std::string, double>> rules;
        for (const auto& r : j.value("rules", nlohmann::json::array())) {
            rules.emplace_back(r.at(0).get<std::string>(), r.at(1).get<double>());
        }
        return std::make_shared<TableRewardModel>(std::move(rules), j.value("fallback", 0.5));
    }
    throw std::invalid_argument("unknown reward model kind '" + kind + "'");
}

std::shared_ptr<const DomainVerifier> make_verifier(const nlohmann::json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "arithmetic") return std::make_shared<ArithmeticVerifier>();
    if (kind == "format") return std::make_shared<FormatVerifier>();
    if (kind == "table") {
        std::vector<std::pair<std::string, double>> rules;
        for (const auto& r : j.value("rules", nlohmann::json::array())) {
            rules.emplace_back(r.at(0).get<std::string>(), r.at(1).get<double>());
        }
        return std::make_shared<TableVerifier>(std::move(rules), j.value("fallback", 1.0));
    }
    throw std::invalid_argument("unknown verifier kind '" + kind + "'");
}

std::shared_ptr<const Judge> make_judge(const nlohmann::json& j) {
    std::string kind = j.value("kind", "rubric");
    if (kind == "none") return nullptr;
    if (kind == "rubric") return std::make_shared<RubricJudge>();
    if (kind == "table") {
        std::vector<std::pair<std::string, double>> rules;
        for (const auto& r : j.value("rules", nlohmann::json::array())) {
            rules.emplace_back(r.at(0).get<std::string>(), r.at(1).get<double>());
        }
        return std::make_shared<TableJudge>(std::move(rules), j.value("fallback", 0.5));
    }
    throw std::invalid_argument("unknown judge kind '" + kind + "'");
}

std::shared_ptr<const TextProvider> make_provider(const nlohmann::json& j) {
    std::string kind = j.value("kind", "mock");
    if (kind == "mock") return MockTextProvider::from_json(j);
    if (kind == "http") {
        return std::make_shared<HttpTextProvider>(
            j.at("host").get<std::string>(), j.at("port").get<int>(),
            j.value("path", std::string("/generate")), j.value("timeout_sec", 10));
    }
    throw std::invalid_argument("unknown provider kind '" + kind + "'");
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues_in)
    : std::runtime_error(join_issues(issues_in)), issues(std::move(issues_in)) {}

std::shared_ptr<Engine> Engine::load(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError({"cannot open config '" + config_path + "'"});
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ConfigError({"config '" + config_path + "': " + e.what()});
    }
    return from_json(doc, std::filesystem::path(config_path).parent_path().string());
}

std::shared_ptr<Engine> Engine::from_json(const nlohmann::json& doc, const std::string& base_dir) {
    std::vector<std::string> issues;
    auto engine = std::shared_ptr<Engine>(new Engine());

    engine->embedder_ = [&]() -> std::shared_ptr<const Embedder> {
        std::size_t dim = 64, ngram = 3;
        if (doc.contains("embedder")) {
            dim = doc["embedder"].value("dim", 64);
            ngram = doc["embedder"].value("ngram", 3);
        }
        try {
            return std::make_shared<HashingEmbedder>(dim, ngram);
        } catch (const std::exception& e) {
            issues.push_back(e.what());
            return std::make_shared<HashingEmbedder>();
        }
    }();

    if (!doc.contains("registry")) {
        issues.push_back("missing 'registry' path");
    } else {
        std::string path = resolve_path(base_dir, doc.at("registry").get<std::string>());
        try {
            engine->registry_ =
                std::make_shared<const ModelRegistry>(ModelRegistry::load(path));
        } catch (const std::exception& e) {
            issues.push_back(std::string("registry: ") + e.what());
        }
    }

    if (!doc.contains("label_space")) {
        issues.push_back("missing 'label_space' path");
    } else {
        std::string path = resolve_path(base_dir, doc.at("label_space").get<std::string>());
        try {
            engine->space_ = LabelSpace::load(path, *engine->embedder_);
        } catch (const std::exception& e) {
            issues.push_back(std::string("label_space: ") + e.what());
        }
    }

    if (doc.contains("taxonomy")) {
        const auto& t = doc["taxonomy"];
        engine->taxonomy_.alpha = t.value("alpha", 4.0);
        engine->taxonomy_.lambda = t.value("lambda", 0.5);
        engine->taxonomy_.tau_label = t.value("tau_label", 0.35);
        if (t.contains("top_k_labels") && !t["top_k_labels"].is_null()) {
            engine->taxonomy_.top_k_labels = t["top_k_labels"].get<int>();
        }
        engine->taxonomy_.tau_c = t.value("tau_c", 0.5);
        engine->taxonomy_.tau_skip = t.value("tau_skip", 0.9);
        engine->taxonomy_.suitability_any = t.value("suitability_any", false);
    }
    try {
        engine->taxonomy_.validate();
    } catch (const std::exception& e) {
        issues.push_back(e.what());
    }

    if (doc.contains("slow_classifier")) {
        const auto& s = doc["slow_classifier"];
        std::string kind = s.value("kind", "none");
        if (kind == "keyword") {
            std::map<Label, std::vector<std::string>> keywords;
            if (s.contains("keywords")) s.at("keywords").get_to(keywords);
            engine->slow_ = std::make_shared<KeywordSlowClassifier>(std::move(keywords));
        } else if (kind != "none") {
            issues.push_back("unknown slow_classifier kind '" + kind + "'");
        }
    }

    if (doc.contains("hybrid")) {
        const auto& h = doc["hybrid"];
        engine->hybrid_.k_tax = h.value("k_tax", 3);
        engine->hybrid_.k_lr = h.value("k_lr", 3);
        engine->hybrid_.n = h.value("n", 3);
    }
    try {
        engine->hybrid_.validate();
    } catch (const std::exception& e) {
        issues.push_back(e.what());
    }

    if (doc.contains("cascade")) {
        const auto& c = doc["cascade"];
        engine->cascade_.tau_high = c.value("tau_high", 0.95);
        engine->cascade_.tau_low = c.value("tau_low", 0.3);
        engine->cascade_.tau_domain = c.value("tau_domain", 0.7);
        engine->cascade_.tau_knowledge = c.value("tau_knowledge", 0.4);
        engine->cascade_.borderline_low = c.value("borderline_low", 0.4);
        engine->cascade_.borderline_high = c.value("borderline_high", 0.6);
        engine->cascade_.delta = c.value("delta", 0.5);
        engine->cascade_.max_cascades = c.value("max_cascades", 2);
        if (c.contains("fallback_model") && !c["fallback_model"].is_null()) {
            engine->cascade_.fallback_model = c["fallback_model"].get<std::string>();
        }
    }
    try {
        engine->cascade_.validate();
    } catch (const std::exception& e) {
        issues.push_back(e.what());
    }

    if (doc.contains("weights")) {
        const auto& w = doc["weights"];
        if (w.contains("default")) {
            auto v = w.at("default").get<std::vector<double>>();
            if (v.size() != 4) {
                issues.push_back("weights: default vector must have 4 entries");
            } else {
                std::copy(v.begin(), v.end(), engine->weights_.fallback.begin());
            }
        }
        if (w.contains("by_domain")) {
            for (const auto& [domain, entry] : w.at("by_domain").items()) {
                auto v = entry.get<std::vector<double>>();
                if (v.size() != 4) {
                    issues.push_back("weights: vector for '" + domain + "' must have 4 entries");
                    continue;
                }
                std::array<double, 4> arr{};
                std::copy(v.begin(), v.end(), arr.begin());
                engine->weights_.by_domain[domain] = arr;
            }
        }
    }
    try {
        engine->weights_.validate();
    } catch (const std::exception& e) {
        issues.push_back(e.what());
    }

    if (doc.contains("signals")) {
        const auto& s = doc["signals"];
        try {
            if (s.contains("reward")) {
                engine->reward_ = make_reward(s["reward"], engine->embedder_);
            }
        } catch (const std::exception& e) {
            issues.push_back(e.what());
        }
        try {
            if (s.contains("judge")) engine->judge_ = make_judge(s["judge"]);
        } catch (const std::exception& e) {
            issues.push_back(e.what());
        }
        engine->judge_cost_ = s.value("judge_cost", 0.0);
        engine->logit_arithmetic_mean_ = s.value("logit_arithmetic_mean", false);
        if (s.contains("verifiers")) {
            for (const auto& [domain, entry] : s.at("verifiers").items()) {
                try {
                    engine->verifiers_[domain] = make_verifier(entry);
                } catch (const std::exception& e) {
                    issues.push_back(std::string("verifier for '") + domain + "': " + e.what());
                }
            }
        }
    }
    if (!engine->reward_) {
        engine->reward_ = std::make_shared<CosineRewardModel>(engine->embedder_, 4.0);
    }
    if (!doc.contains("signals") || !doc["signals"].contains("judge")) {
        engine->judge_ = std::make_shared<RubricJudge>();
    }

    if (doc.contains("providers") && engine->registry_) {
        for (const auto& [model_id, entry] : doc.at("providers").items()) {
            if (!engine->registry_->find(model_id)) {
                issues.push_back("provider bound to unknown model '" + model_id + "'");
                continue;
            }
            try {
                engine->providers_.bind(model_id, make_provider(entry));
            } catch (const std::exception& e) {
                issues.push_back(std::string("provider for '") + model_id + "': " + e.what());
            }
        }
        for (const auto& m : engine->registry_->models()) {
            if (!engine->providers_.has(m.id)) {
                issues.push_back("model '" + m.id + "' has no provider binding");
            }
        }
    }

    if (doc.contains("learned") && doc["learned"].contains("heads") &&
        !doc["learned"]["heads"].is_null()) {
        std::string path =
            resolve_path(base_dir, doc["learned"]["heads"].get<std::string>());
        try {
            engine->router_ = TrainedRouter::load(path);
        } catch (const std::exception& e) {
            issues.push_back(std::string("learned heads: ") + e.what());
        }
    }

    if (doc.contains("fusion")) {
        const auto& f = doc["fusion"];
        try {
            engine->fusion_.kind = fusion_kind_from_string(
                f.value("strategy", std::string("confidence_weighted_select")));
        } catch (const std::exception& e) {
            issues.push_back(e.what());
        }
        engine->fusion_.delta = f.value("delta", 0.5);
        engine->parallel_mode_ = f.value("parallel_mode", false);
    }

    if (doc.contains("decomposer")) {
        const auto& d = doc["decomposer"];
        std::string kind = d.value("kind", "identity");
        if (kind == "identity") {
            engine->decomposer_ = std::make_shared<IdentityDecomposer>();
        } else if (kind == "delimiter") {
            engine->decomposer_ =
                std::make_shared<DelimiterDecomposer>(d.value("delimiter", std::string(";")));
        } else {
            issues.push_back("unknown decomposer kind '" + kind + "'");
        }
    }
    if (!engine->decomposer_) engine->decomposer_ = std::make_shared<IdentityDecomposer>();

    engine->log_path_ = doc.contains("log_path")
                            ? resolve_path(base_dir, doc.at("log_path").get<std::string>())
                            : "";

    // Cross-section checks once the pieces exist.
    if (engine->registry_ && engine->cascade_.fallback_model &&
        !engine->registry_->find(*engine->cascade_.fallback_model)) {
        issues.push_back("cascade fallback model '" + *engine->cascade_.fallback_model +
                         "' is not in the registry");
    }
    if (engine->registry_ && engine->router_) {
        for (const auto& head : engine->router_->heads) {
            if (!engine->registry_->find(head.model_id)) {
                issues.push_back("learned head for unknown model '" + head.model_id + "'");
            }
        }
    }
    if (engine->registry_) {
        for (const auto& m : engine->registry_->models()) {
            for (const auto& [label, v] : m.suitability) {
                if (!engine->space_.contains(label)) {
                    issues.push_back("model '" + m.id + "': suitability label '" + label +
                                     "' not in the label space");
                }
            }
        }
    }

    if (!issues.empty()) throw ConfigError(std::move(issues));

    // Trained stats take precedence over whatever the registry file carried.
    if (engine->router_) {
        auto mutable_registry = std::make_shared<ModelRegistry>(*engine->registry_);
        for (const auto& [id, stats] : engine->router_->norm) {
            if (mutable_registry->find(id)) {
                mutable_registry->set_norm_stats(id, stats.mu, stats.sigma);
            }
        }
        engine->registry_ = mutable_registry;
    }
    return engine;
}

SignalContext Engine::signal_context() const {
    SignalContext ctx{space_, *embedder_};
    ctx.reward = reward_.get();
    ctx.verifiers = &verifiers_;
    ctx.judge = judge_.get();
    ctx.judge_cost = judge_cost_;
    ctx.domain_alpha = taxonomy_.alpha;
    ctx.logit_arithmetic_mean = logit_arithmetic_mean_;
    return ctx;
}

void Engine::set_log_path(const std::string& path) {
    std::lock_guard<std::mutex> lock(log_mutex_);
    log_path_ = path;
}

std::optional<nlohmann::json> Engine::stored_trace(const std::string& trace_id) const {
    std::lock_guard<std::mutex> lock(log_mutex_);
    auto it = trace_store_.find(trace_id);
    if (it == trace_store_.end()) return std::nullopt;
    return std::optional<nlohmann::json>(it->second);
}

void Engine::persist(const RouteOutcome& outcome) {
    std::lock_guard<std::mutex> lock(log_mutex_);
    nlohmann::json lines = nlohmann::json::array();
    for (std::size_t i = 0; i < outcome.traces.size(); ++i) {
        nlohmann::json line = outcome.traces[i].to_json();
        if (i < outcome.decisions.size()) line["decision"] = outcome.decisions[i].to_json();
        lines.push_back(std::move(line));
    }
    trace_store_[outcome.trace_id] = lines;
    if (!log_path_.empty()) {
        std::ofstream log(log_path_, std::ios::app);
        if (!log) throw std::runtime_error("cannot append to trace log '" + log_path_ + "'");
        for (const auto& line : lines) log << line.dump() << '\n';
    }
}

RouteOutcome Engine::route_request(const Query& query, const RouteOptions& options) {
    RouteOutcome outcome;
    outcome.query_id = query.id;
    outcome.trace_id = query.id;

    CascadeConfig cascade_cfg = cascade_;
    if (options.max_cascades) cascade_cfg.max_cascades = *options.max_cascades;

    std::vector<Subproblem> subs = decompose(query, *decomposer_);
    SignalContext sig_ctx = signal_context();
    RouterContext router_ctx{*registry_, space_, taxonomy_, *embedder_, slow_.get(),
                             router_ ? &router_->heads : nullptr};

    std::vector<FusionCandidate> fusion_inputs;
    for (const auto& sub : subs) {
        RoutingDecision decision;
        Provenance policy = options.force_policy.value_or(Provenance::Hybrid);
        if (options.force_policy) {
            switch (policy) {
                case Provenance::Taxonomy:
                    decision = route_taxonomy(sub, *registry_, space_, taxonomy_, *embedder_,
                                              slow_.get());
                    break;
                case Provenance::Learned:
                    if (!router_) throw std::runtime_error("learned policy requires trained heads");
                    decision = route_learned(sub, hybrid_.k_lr, sub.constraints, router_->heads,
                                             *registry_, space_, taxonomy_, *embedder_,
                                             slow_.get());
                    break;
                case Provenance::Hybrid:
                    decision = route_hybrid(sub, hybrid_, router_ctx, sub.constraints);
                    break;
            }
        } else {
            // Taxonomy first; hybrid only when the assignment is ambiguous.
            RoutingDecision tax =
                route_taxonomy(sub, *registry_, space_, taxonomy_, *embedder_, slow_.get());
            bool skip_learned =
                tax.top_label_prob >= taxonomy_.tau_skip && !tax.models.empty();
            if (skip_learned || !router_) {
                // Constraint filter still applies to the taxonomy candidates.
                std::vector<std::string> feasible;
                for (const auto& m : filter_by_constraints(registry_->models(), sub.constraints)) {
                    if (std::find(tax.models.begin(), tax.models.end(), m.id) !=
                        tax.models.end()) {
                        feasible.push_back(m.id);
                    }
                }
                tax.models = std::move(feasible);
                tax.no_feasible = tax.models.empty();
                decision = std::move(tax);
            } else {
                decision = route_hybrid(sub, hybrid_, router_ctx, sub.constraints);
            }
        }
        outcome.decisions.push_back(decision);

        if (parallel_mode_ && decision.models.size() > 1) {
            // Every candidate answers; the cascade check scores each output.
            CascadeTrace trace;
            trace.query_id = sub.parent_id;
            trace.subproblem_index = sub.index;
            trace.domain = classify_domain(sub.text, sig_ctx);
            trace.sensitive = space_.is_sensitive(trace.domain);
            trace.specialized = space_.is_specialized(trace.domain);
            std::vector<FusionCandidate> parallel_outputs;
            for (const auto& id : decision.models) {
                const ModelProfile& profile = registry_->at(id);
                CascadeAttempt attempt;
                attempt.model_id = id;
                try {
                    attempt.result = run_model(profile, providers_.provider_for(id), sub.text);
                } catch (const std::exception& e) {
                    attempt.error = e.what();
                    trace.attempts.push_back(std::move(attempt));
                    continue;
                }
                attempt.cost = attempt.result.cost;
                attempt.signals = gather_signals(sub, profile, attempt.result, trace.domain,
                                                 sig_ctx, &attempt.logit_substituted);
                double judge_cost = 0.0;
                JudgeFn judge_fn;
                if (sig_ctx.judge) {
                    const Judge* judge = sig_ctx.judge;
                    const std::string& qtext = sub.text;
                    const std::string& rtext = attempt.result.text;
                    double cost = judge_cost_;
                    judge_fn = [judge, &qtext, &rtext, &judge_cost, cost]() {
                        judge_cost = cost;
                        return judge_evaluate(qtext, rtext, *judge);
                    };
                }
                ConfidenceOutcome scored = cascade_confidence(
                    attempt.signals, trace.domain, trace.sensitive, trace.specialized,
                    /*is_final_model=*/true, weights_, cascade_cfg, judge_fn);
                attempt.combined = scored.combined;
                attempt.decision = scored.decision;
                attempt.judge_invoked = scored.judge_invoked;
                attempt.signals.judge = scored.judge_score;
                attempt.pi = scored.pi;
                attempt.cost += judge_cost;
                parallel_outputs.push_back(
                    FusionCandidate{id, attempt.result.text, attempt.pi});
                trace.attempts.push_back(std::move(attempt));
            }
            if (!parallel_outputs.empty()) {
                FusionOutcome fused =
                    fuse_outputs(sub.text, parallel_outputs, fusion_, judge_.get());
                trace.accepted = true;
                trace.accepted_model = fused.model_id;
                trace.output = fused.text;
                fusion_inputs.push_back(FusionCandidate{fused.model_id, fused.text, fused.pi});
            } else {
                trace.fallback_reason = "no confident solution";
            }
            for (const auto& a : trace.attempts) trace.total_cost += a.cost;
            trace.cascades_used = trace.attempts.empty() ? 0 : trace.attempts.size() - 1;
            outcome.traces.push_back(std::move(trace));
        } else {
            CascadeTrace trace = run_cascade(sub, decision, *registry_, providers_, sig_ctx,
                                             weights_, cascade_cfg);
            if (trace.accepted) {
                double pi = trace.attempts.empty() ? 1.0 : trace.attempts.back().pi;
                fusion_inputs.push_back(FusionCandidate{trace.accepted_model, trace.output, pi});
            }
            outcome.traces.push_back(std::move(trace));
        }
    }

    for (const auto& t : outcome.traces) outcome.total_cost += t.total_cost;

    if (fusion_inputs.empty()) {
        outcome.ok = false;
        outcome.fallback_reason = "no confident solution";
    } else if (fusion_inputs.size() == 1) {
        outcome.ok = true;
        outcome.answer = fusion_inputs.front().text;
        outcome.answer_model = fusion_inputs.front().model_id;
    } else {
        FusionOutcome fused = fuse_outputs(query.text, fusion_inputs, fusion_, judge_.get());
        outcome.ok = true;
        outcome.fused = true;
        outcome.answer = fused.text;
        outcome.answer_model = fused.model_id;

        // The fused result gets one final confidence assessment; we surface
        // the verdict and stop.
        SignalBundle bundle;
        auto markers = extract_self_confidence(outcome.answer);
        if (!markers.empty()) {
            bundle.self_report = *std::min_element(markers.begin(), markers.end());
        }
        if (reward_) bundle.reward = reward_->score(query.text, outcome.answer);
        Label domain = classify_domain(query.text, sig_ctx);
        auto vit = verifiers_.find(domain);
        if (vit != verifiers_.end()) {
            bundle.domain = vit->second->verify(query.text, outcome.answer);
        }
        const Judge* judge = judge_.get();
        const std::string& qtext = query.text;
        const std::string& answer = outcome.answer;
        JudgeFn judge_fn;
        if (judge) {
            judge_fn = [judge, &qtext, &answer]() {
                return judge_evaluate(qtext, answer, *judge);
            };
        }
        ConfidenceOutcome reassessed = cascade_confidence(
            bundle, domain, space_.is_sensitive(domain), space_.is_specialized(domain),
            /*is_final_model=*/true, weights_, cascade_cfg, judge_fn);
        outcome.reassessment_decision = reassessed.decision;
        outcome.reassessment_pi = reassessed.pi;
    }

    persist(outcome);
    return outcome;
}

nlohmann::json RouteOutcome::to_json() const {
    nlohmann::json decisions_json = nlohmann::json::array();
    for (const auto& d : decisions) decisions_json.push_back(d.to_json());
    nlohmann::json traces_json = nlohmann::json::array();
    for (const auto& t : traces) traces_json.push_back(t.to_json());

    nlohmann::json j{{"query_id", query_id},
                     {"ok", ok},
                     {"trace_id", trace_id},
                     {"decisions", decisions_json},
                     {"traces", traces_json},
                     {"total_cost", total_cost}};
    if (ok) {
        j["answer"] = answer;
        j["model"] = answer_model;
    } else {
        j["fallback_reason"] = fallback_reason;
    }
    if (fused) {
        j["fused"] = true;
        if (reassessment_decision) {
            j["reassessment"] = {{"decision", to_string(*reassessment_decision)},
                                 {"pi", reassessment_pi.value_or(0.0)}};
        }
    }
    return j;
}

}  // namespace cascadefuse
