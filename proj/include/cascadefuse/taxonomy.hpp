#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cascadefuse/core.hpp"
#include "cascadefuse/embedder.hpp"

namespace cascadefuse {

/// Probability vector over taxonomy labels. Sums to 1 within 1e-9.
struct LabelDistribution {
    std::map<Label, double> probs;

    void validate() const;
    double at(const Label& c) const;
    /// Highest-probability label (lexicographically first on ties) and its
    /// probability. Undefined behavior on an empty distribution.
    std::pair<Label, double> top() const;
};

/// The configured label universe: labels grouped by dimension, one reference
/// embedding per label, plus the domain flags the cascade consults.
class LabelSpace {
public:
    struct LabelDef {
        std::string dimension;
        Label name;
    };

    LabelSpace() = default;
    LabelSpace(std::vector<LabelDef> labels, std::map<Label, EmbeddingVector> ref_embeddings,
               std::set<Label> sensitive_domains, std::set<Label> specialized_domains);

    /// Loads from a JSON document. Reference embeddings may be given as
    /// vectors ("embedding") or as text to embed at load time ("text").
    static LabelSpace from_json(const nlohmann::json& doc, const Embedder& embedder);
    static LabelSpace load(const std::string& path, const Embedder& embedder);

    const std::vector<LabelDef>& labels() const { return labels_; }
    const std::map<Label, EmbeddingVector>& ref_embeddings() const { return ref_embeddings_; }
    bool contains(const Label& c) const { return ref_embeddings_.count(c) != 0; }
    std::size_t size() const { return labels_.size(); }

    /// Labels belonging to one dimension, in declaration order.
    std::vector<Label> dimension_labels(const std::string& dimension) const;
    /// Position of a label in declaration order (used for feature layout).
    std::size_t label_index(const Label& c) const;

    bool is_sensitive(const Label& domain) const { return sensitive_domains_.count(domain) != 0; }
    bool is_specialized(const Label& domain) const {
        return specialized_domains_.count(domain) != 0;
    }
    const std::set<Label>& sensitive_domains() const { return sensitive_domains_; }
    const std::set<Label>& specialized_domains() const { return specialized_domains_; }

private:
    std::vector<LabelDef> labels_;
    std::map<Label, EmbeddingVector> ref_embeddings_;
    std::map<Label, std::size_t> order_;
    std::set<Label> sensitive_domains_;
    std::set<Label> specialized_domains_;
};

struct TaxonomyConfig {
    double alpha = 4.0;       // softmax temperature scale, > 0
    double lambda = 0.5;      // slow/fast fusion weight, in [0,1]
    double tau_label = 0.35;  // label selection threshold
    std::optional<int> top_k_labels;
    double tau_c = 0.5;       // suitability threshold
    double tau_skip = 0.9;    // skip-learned-router confidence
    bool suitability_any = false;  // false: ALL selected labels must be suitable

    void validate() const;
};

/// Distance-softmax classifier over the reference embeddings:
/// p(c) = exp(-alpha * ||v - u_c||) / sum_c' exp(-alpha * ||v - u_c'||),
/// evaluated with max-subtraction.
LabelDistribution fast_classify(const EmbeddingVector& v, const LabelSpace& space, double alpha);

/// Convex combination lambda * p_slow + (1 - lambda) * p_fast. Both inputs
/// must cover the same label set.
LabelDistribution fuse_distributions(const LabelDistribution& p_slow,
                                     const LabelDistribution& p_fast, double lambda);

/// Thresholding (p >= tau_label) or, when top_k_labels is set, the k most
/// probable labels with lexicographic tie-break.
std::set<Label> select_labels(const LabelDistribution& p, const TaxonomyConfig& cfg);

class SlowClassifier {
public:
    virtual ~SlowClassifier() = default;
    virtual LabelDistribution classify(const Subproblem& x, const LabelSpace& space) const = 0;
};

/// Desk-scale slow classifier: counts keyword hits per label and normalizes.
/// No hits anywhere -> uniform.
class KeywordSlowClassifier final : public SlowClassifier {
public:
    explicit KeywordSlowClassifier(std::map<Label, std::vector<std::string>> keywords)
        : keywords_(std::move(keywords)) {}

    LabelDistribution classify(const Subproblem& x, const LabelSpace& space) const override;

private:
    std::map<Label, std::vector<std::string>> keywords_;
};

/// Binary suitability: 1 if the profile claims every label in `labels`
/// (or any label, when `any_label` is set); 1 on the empty set.
double suitability(const ModelProfile& profile, const std::set<Label>& labels, bool any_label);

/// Fast (and optionally slow) classification, fusion, label selection, and
/// the suitability filter. `slow == nullptr` behaves as lambda = 0.
RoutingDecision route_taxonomy(const Subproblem& x, const ModelRegistry& registry,
                               const LabelSpace& space, const TaxonomyConfig& cfg,
                               const Embedder& embedder, const SlowClassifier* slow);

}  // namespace cascadefuse
