#include "cascadefuse/hybrid.hpp"

#include <algorithm>
#include <stdexcept>

namespace cascadefuse {

void HybridConfig::validate() const {
    if (k_tax < 0 || k_lr < 0) throw std::invalid_argument("hybrid: k_tax/k_lr must be >= 0");
    if (n < 1) throw std::invalid_argument("hybrid: n must be >= 1");
    if (n > k_tax + k_lr) {
        throw std::invalid_argument("hybrid: n must not exceed k_tax + k_lr");
    }
}

RoutingDecision route_hybrid(const Subproblem& x, const HybridConfig& cfg,
                             const RouterContext& ctx, const Constraints& c) {
    cfg.validate();
    if (ctx.registry.empty()) throw std::invalid_argument("route_hybrid: empty registry");

    RoutingDecision decision;
    decision.provenance = Provenance::Hybrid;

    // Taxonomy side: all phi = 1 candidates qualify; beyond k_tax prefer
    // lower tier, then id.
    if (cfg.k_tax > 0) {
        RoutingDecision tax = route_taxonomy(x, ctx.registry, ctx.space, ctx.taxonomy,
                                             ctx.embedder, ctx.slow);
        decision.labels = tax.labels;
        decision.label_probs = tax.label_probs;
        decision.top_label_prob = tax.top_label_prob;

        std::vector<const ModelProfile*> qualified;
        for (const auto& m : filter_by_constraints(ctx.registry.models(), c)) {
            if (std::find(tax.models.begin(), tax.models.end(), m.id) != tax.models.end()) {
                qualified.push_back(ctx.registry.find(m.id));
            }
        }
        std::stable_sort(qualified.begin(), qualified.end(),
                         [](const ModelProfile* a, const ModelProfile* b) {
                             if (a->tier != b->tier) return a->tier < b->tier;
                             return a->id < b->id;
                         });
        std::size_t take =
            std::min<std::size_t>(static_cast<std::size_t>(cfg.k_tax), qualified.size());
        for (std::size_t i = 0; i < take; ++i) decision.taxonomy_set.push_back(qualified[i]->id);
    }

    // Learned side: top-k_lr by predicted raw score, constraint-filtered.
    std::map<std::string, double> raw_scores;
    if (cfg.k_lr > 0 && ctx.heads && !ctx.heads->empty()) {
        RoutingDecision learned = route_learned(x, cfg.k_lr, c, *ctx.heads, ctx.registry,
                                                ctx.space, ctx.taxonomy, ctx.embedder, ctx.slow);
        decision.learned_set = learned.models;
        raw_scores = learned.scores;
        decision.clamped_scores = learned.clamped_scores;
        if (decision.labels.empty()) {
            decision.labels = learned.labels;
            decision.label_probs = learned.label_probs;
            decision.top_label_prob = learned.top_label_prob;
        }
    }
    decision.scores = raw_scores;

    std::vector<std::string> union_set;
    auto add_unique = [&](const std::string& id) {
        if (std::find(union_set.begin(), union_set.end(), id) == union_set.end()) {
            union_set.push_back(id);
        }
    };
    for (const auto& id : decision.taxonomy_set) add_unique(id);
    for (const auto& id : decision.learned_set) add_unique(id);

    if (union_set.size() <= static_cast<std::size_t>(cfg.n)) {
        decision.models = union_set;
    } else {
        // Learned scores rank the union; taxonomy-only members without a
        // prediction sort last.
        decision.union_truncated = true;
        std::stable_sort(union_set.begin(), union_set.end(),
                         [&](const std::string& a, const std::string& b) {
                             auto ia = raw_scores.find(a);
                             auto ib = raw_scores.find(b);
                             double sa = ia == raw_scores.end() ? -1.0 : ia->second;
                             double sb = ib == raw_scores.end() ? -1.0 : ib->second;
                             if (sa != sb) return sa > sb;
                             const ModelProfile& pa = ctx.registry.at(a);
                             const ModelProfile& pb = ctx.registry.at(b);
                             if (pa.tier != pb.tier) return pa.tier < pb.tier;
                             return a < b;
                         });
        union_set.resize(static_cast<std::size_t>(cfg.n));
        decision.models = union_set;
    }
    decision.no_feasible = decision.models.empty();
    return decision;
}

}  // namespace cascadefuse
