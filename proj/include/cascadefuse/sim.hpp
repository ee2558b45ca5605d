#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cascadefuse/cascade.hpp"
#include "cascadefuse/core.hpp"
#include "cascadefuse/embedder.hpp"
#include "cascadefuse/hybrid.hpp"
#include "cascadefuse/learned.hpp"
#include "cascadefuse/provider.hpp"
#include "cascadefuse/signals.hpp"
#include "cascadefuse/taxonomy.hpp"

namespace cascadefuse::sim {

/// Blueprint for one synthetic model: cost rates, per-category accuracy,
/// taxonomy claims, and how noisy its confidence signals are.
struct SyntheticModelSpec {
    std::string id;
    int tier = 0;
    double cost_per_call = 0.0;
    double cost_per_1k_input_tokens = 0.0;
    double cost_per_1k_output_tokens = 0.0;
    std::map<Label, double> accuracy;  // category -> P(correct)
    std::set<Label> claims;            // taxonomy suitability claims
    double signal_noise = 0.06;        // std of the confidence noise
    bool supports_logits = true;

    void validate() const;
};

struct SyntheticQuery {
    std::string id;
    std::string text;
    Label category;
    std::set<std::string> gold;  // models whose outcome draw was correct
};

/// A generated world: registry, deterministic providers, label space, and
/// the routing configuration under test. Query outcomes are pure functions
/// of (seed, model id, query text), so evaluation order never matters.
class SyntheticPool {
public:
    SyntheticPool(std::vector<SyntheticModelSpec> specs,
                  std::map<Label, std::vector<std::string>> category_keywords,
                  std::uint64_t seed);

    const ModelRegistry& registry() const { return registry_; }
    const ProviderSet& providers() const { return providers_; }
    const LabelSpace& space() const { return space_; }
    const Embedder& embedder() const { return *embedder_; }
    const std::vector<SyntheticModelSpec>& specs() const { return specs_; }
    const std::vector<Label>& categories() const { return categories_; }
    std::uint64_t seed() const { return seed_; }

    /// True iff the model's outcome draw for this query text is correct.
    bool answers_correctly(const std::string& model_id, const std::string& query_text,
                           const Label& category) const;

    /// Deterministic synthetic queries with ground-truth category and gold
    /// set. The id prefix separates training from evaluation streams.
    std::vector<SyntheticQuery> make_queries(std::size_t count,
                                             const std::string& id_prefix) const;

    /// Generates a training stream and fits the learned router on it.
    TrainedRouter train_router(std::size_t count, const TrainConfig& cfg);

    const std::optional<TrainedRouter>& router() const { return router_; }

    TaxonomyConfig taxonomy;
    HybridConfig hybrid{2, 2, 3};
    CascadeConfig cascade;
    DomainWeights weights;
    std::shared_ptr<const RewardModel> reward;
    std::shared_ptr<const Judge> judge;
    double judge_cost = 0.0005;

    static SyntheticPool from_json(const nlohmann::json& doc, std::uint64_t seed_override);
    static SyntheticPool load(const std::string& path, std::uint64_t seed_override);

private:
    const SyntheticModelSpec& spec_of(const std::string& model_id) const;

    std::vector<SyntheticModelSpec> specs_;
    std::map<Label, std::vector<std::string>> keywords_;
    std::vector<Label> categories_;
    std::uint64_t seed_ = 0;
    std::shared_ptr<const Embedder> embedder_;
    ModelRegistry registry_;
    ProviderSet providers_;
    LabelSpace space_;
    std::optional<TrainedRouter> router_;
};

/// The 8-model / 6-category benchmark pool: six cheap specialists with one
/// over-claimed adjacent category each, a mid-tier generalist, and an
/// expensive strong generalist.
SyntheticPool default_pool(std::uint64_t seed);

enum class PolicyKind { TaxonomyOnly, LearnedOnly, Hybrid, Oracle, AllModels };

struct Policy {
    PolicyKind kind = PolicyKind::Hybrid;
    int max_cascades = 2;
    int top_k = 0;  // learned selection width; 0 -> max_cascades + 1
    std::string name;

    static Policy parse(const std::string& text);
    std::string display_name() const;
};

struct PolicyReport {
    std::string policy;
    std::size_t n_queries = 0;
    double top1 = 0.0, top3 = 0.0, top5 = 0.0;
    double sample_accuracy = 0.0;  // selection intersects gold
    double answer_accuracy = 0.0;  // accepted output was correct
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool precision_undefined = false;  // no positives selected anywhere
    double total_cost = 0.0;
    double mean_cost_per_1k = 0.0;
    double oracle_cost = 0.0;  // run-everything baseline on the same queries
    double savings_vs_oracle = 0.0;
    double mean_cascades = 0.0;
    std::size_t judge_invocations = 0;
    std::map<int, std::size_t> cascade_histogram;      // cascades_used -> count
    std::map<int, std::size_t> min_cascade_histogram;  // first gold hit; -1 = unreachable

    nlohmann::json to_json() const;
};

/// Per-query evaluation record, kept so cost ledgers can be re-audited
/// attempt by attempt.
struct QueryOutcome {
    std::vector<std::string> ranked;    // router ranking (top-k metrics)
    std::vector<std::string> selected;  // models actually executed
    bool accepted = false;
    std::string accepted_model;
    std::vector<double> attempt_costs;
    double total_cost = 0.0;
    std::size_t cascades_used = 0;
    std::size_t judge_invocations = 0;
    int min_cascade = -1;
};

QueryOutcome evaluate_query(const Policy& policy, const SyntheticQuery& query,
                            const SyntheticPool& pool);

/// Cost of running every model on every query (the oracle evaluation
/// baseline).
double oracle_evaluation_cost(const std::vector<SyntheticQuery>& dataset,
                              const SyntheticPool& pool);

/// Straight serial loop; the reference the parallel evaluator must match.
PolicyReport evaluate_policy_serial(const Policy& policy,
                                    const std::vector<SyntheticQuery>& dataset,
                                    const SyntheticPool& pool,
                                    std::vector<QueryOutcome>* outcomes = nullptr);

/// OpenMP-parallel evaluator: queries fan out across threads into
/// preallocated slots, reduction stays serial, so the report is identical
/// to the serial path bit for bit.
PolicyReport evaluate_policy(const Policy& policy, const std::vector<SyntheticQuery>& dataset,
                             const SyntheticPool& pool,
                             std::vector<QueryOutcome>* outcomes = nullptr);

std::string render_table(const std::vector<PolicyReport>& reports);
std::string histogram_csv(const PolicyReport& report);

std::vector<SyntheticQuery> load_dataset(const std::string& path);
void save_dataset(const std::vector<SyntheticQuery>& dataset, const std::string& path);

}  // namespace cascadefuse::sim
