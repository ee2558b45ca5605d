#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cascadefuse {

using Label = std::string;

/// Per-request (or per-subproblem) feasibility constraints.
struct Constraints {
    std::optional<double> max_cost;
    std::optional<double> max_latency_ms;
    std::set<std::string> required_capabilities;
    std::set<std::string> allow_models;
    std::set<std::string> deny_models;
    std::optional<double> acceptance_threshold_delta;

    /// Throws std::invalid_argument on violated invariants
    /// (allow/deny overlap, delta outside [0,1]).
    void validate() const;

    bool empty() const;
};

struct Query {
    std::string id;
    std::string text;
    Constraints constraints;

    void validate() const;
};

struct Subproblem {
    std::string parent_id;
    std::size_t index = 0;
    std::string text;
    Constraints constraints;
};

/// One entry of the model pool: identity, cost rates, capability and
/// suitability claims, and the score-normalization stats used by the
/// learned router.
struct ModelProfile {
    std::string id;
    int tier = 0;
    double cost_per_call = 0.0;
    double cost_per_1k_input_tokens = 0.0;
    double cost_per_1k_output_tokens = 0.0;
    std::set<std::string> capabilities;
    std::map<Label, int> suitability;  // label -> {0,1}
    bool supports_logits = true;
    double norm_mu = 0.0;
    double norm_sigma = 1.0;

    void validate() const;

    double call_cost(std::uint64_t input_tokens, std::uint64_t output_tokens) const;
};

struct GenerationResult {
    std::string model_id;
    std::string text;
    std::optional<std::vector<double>> token_logprobs;
    std::vector<double> self_conf_markers;
    std::uint64_t input_tokens = 0;
    std::uint64_t output_tokens = 0;
    double cost = 0.0;
};

/// Immutable, ordered model pool. Engines share it through
/// std::shared_ptr<const ModelRegistry> and swap the pointer on reload, so
/// readers never need a lock.
class ModelRegistry {
public:
    ModelRegistry() = default;
    explicit ModelRegistry(std::vector<ModelProfile> models);

    static ModelRegistry from_json(const nlohmann::json& doc);
    static ModelRegistry load(const std::string& path);

    const std::vector<ModelProfile>& models() const { return models_; }
    const ModelProfile* find(const std::string& id) const;
    const ModelProfile& at(const std::string& id) const;
    bool empty() const { return models_.empty(); }
    std::size_t size() const { return models_.size(); }

    /// Replaces the per-model normalization stats (typically with the values
    /// produced by router training).
    void set_norm_stats(const std::string& id, double mu, double sigma);

private:
    std::vector<ModelProfile> models_;
    std::map<std::string, std::size_t> index_;
};

/// Ascending cascade order: tier, then output-token rate, then id.
bool cascade_order_less(const ModelProfile& a, const ModelProfile& b);

/// Keeps the models that satisfy `c` (deny, allow, capabilities), preserving
/// input order. An empty result is legal.
std::vector<ModelProfile> filter_by_constraints(const std::vector<ModelProfile>& models,
                                                const Constraints& c);

/// Strategy hook for splitting a query into subproblems.
class Decomposer {
public:
    virtual ~Decomposer() = default;
    virtual std::vector<Subproblem> split(const Query& query) const = 0;
    virtual std::string name() const = 0;
};

/// Default: one subproblem, identical to the query.
class IdentityDecomposer final : public Decomposer {
public:
    std::vector<Subproblem> split(const Query& query) const override;
    std::string name() const override { return "identity"; }
};

/// Splits the query text on a delimiter; each piece inherits the parent
/// constraints.
class DelimiterDecomposer final : public Decomposer {
public:
    explicit DelimiterDecomposer(std::string delimiter) : delimiter_(std::move(delimiter)) {}
    std::vector<Subproblem> split(const Query& query) const override;
    std::string name() const override { return "delimiter"; }

private:
    std::string delimiter_;
};

struct DecomposeError : std::runtime_error {
    DecomposeError(const std::string& query_id, const std::string& what)
        : std::runtime_error("decompose failed for query '" + query_id + "': " + what),
          query_id(query_id) {}
    std::string query_id;
};

/// Runs the decomposer and enforces the contract: at least one subproblem,
/// sequential indices, parent id stamped on every piece.
std::vector<Subproblem> decompose(const Query& query, const Decomposer& decomposer);

enum class Provenance { Taxonomy, Learned, Hybrid };

const char* to_string(Provenance p);

/// Candidate model set with per-model scores and enough context to explain
/// how it was produced.
struct RoutingDecision {
    std::vector<std::string> models;           // ranked candidates
    std::map<std::string, double> scores;      // per-model score (raw or phi)
    Provenance provenance = Provenance::Taxonomy;

    // Taxonomy context.
    std::set<Label> labels;                    // selected label set T(x)
    std::map<Label, double> label_probs;       // fused distribution, for logging
    double top_label_prob = 0.0;

    // Hybrid context.
    std::vector<std::string> taxonomy_set;
    std::vector<std::string> learned_set;
    bool union_truncated = false;

    bool no_feasible = false;
    std::set<std::string> clamped_scores;      // models whose raw score was clamped

    nlohmann::json to_json() const;
};

void to_json(nlohmann::json& j, const Constraints& c);
void from_json(const nlohmann::json& j, Constraints& c);
void to_json(nlohmann::json& j, const ModelProfile& p);
void from_json(const nlohmann::json& j, ModelProfile& p);

}  // namespace cascadefuse
