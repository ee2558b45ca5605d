#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascadefuse/cascade.hpp"
#include "cascadefuse/core.hpp"
#include "cascadefuse/embedder.hpp"
#include "cascadefuse/fusion.hpp"
#include "cascadefuse/hybrid.hpp"
#include "cascadefuse/learned.hpp"
#include "cascadefuse/provider.hpp"
#include "cascadefuse/signals.hpp"
#include "cascadefuse/taxonomy.hpp"

namespace cascadefuse {

/// Aggregated configuration failure: every issue found, not just the first.
struct ConfigError : std::runtime_error {
    explicit ConfigError(std::vector<std::string> issues);
    std::vector<std::string> issues;
};

struct RouteOptions {
    std::optional<Provenance> force_policy;
    std::optional<int> max_cascades;
};

struct RouteOutcome {
    std::string query_id;
    bool ok = false;
    std::string answer;
    std::string answer_model;
    std::string fallback_reason;
    std::string trace_id;
    std::vector<RoutingDecision> decisions;  // one per subproblem
    std::vector<CascadeTrace> traces;        // one per subproblem (plus parallel runs)
    bool fused = false;
    std::optional<Decision> reassessment_decision;
    std::optional<double> reassessment_pi;
    double total_cost = 0.0;

    nlohmann::json to_json() const;
};

/// Fully wired routing engine. Immutable after construction; safe for
/// concurrent route_request calls. The trace log is an append-only channel
/// guarded by a single writer lock.
class Engine {
public:
    /// Builds a validated engine from a JSON config file. Throws ConfigError
    /// listing every violated invariant; never partially initializes.
    static std::shared_ptr<Engine> load(const std::string& config_path);
    static std::shared_ptr<Engine> from_json(const nlohmann::json& doc,
                                             const std::string& base_dir);

    RouteOutcome route_request(const Query& query, const RouteOptions& options = {});

    /// Returns the stored traces for a query id, or nullopt.
    std::optional<nlohmann::json> stored_trace(const std::string& trace_id) const;

    const ModelRegistry& registry() const { return *registry_; }
    const LabelSpace& label_space() const { return space_; }
    const TaxonomyConfig& taxonomy_config() const { return taxonomy_; }
    const HybridConfig& hybrid_config() const { return hybrid_; }
    const CascadeConfig& cascade_config() const { return cascade_; }
    const Embedder& embedder() const { return *embedder_; }
    const std::vector<ScoreHead>* heads() const {
        return router_ ? &router_->heads : nullptr;
    }
    bool has_learned_router() const { return router_.has_value(); }
    const std::string& log_path() const { return log_path_; }
    void set_log_path(const std::string& path);

private:
    Engine() = default;

    SignalContext signal_context() const;
    void persist(const RouteOutcome& outcome);

    std::shared_ptr<const Embedder> embedder_;
    std::shared_ptr<const ModelRegistry> registry_;
    LabelSpace space_;
    TaxonomyConfig taxonomy_;
    HybridConfig hybrid_;
    CascadeConfig cascade_;
    DomainWeights weights_;
    std::shared_ptr<const SlowClassifier> slow_;
    ProviderSet providers_;
    std::shared_ptr<const RewardModel> reward_;
    std::map<Label, std::shared_ptr<const DomainVerifier>> verifiers_;
    std::shared_ptr<const Judge> judge_;
    double judge_cost_ = 0.0;
    bool logit_arithmetic_mean_ = false;
    std::optional<TrainedRouter> router_;
    FusionStrategy fusion_;
    bool parallel_mode_ = false;
    std::shared_ptr<const Decomposer> decomposer_;
    std::string log_path_;

    mutable std::mutex log_mutex_;
    std::map<std::string, nlohmann::json> trace_store_;
};

}  // namespace cascadefuse
