#pragma once

#include "cascadefuse/core.hpp"
#include "cascadefuse/learned.hpp"
#include "cascadefuse/taxonomy.hpp"

namespace cascadefuse {

struct HybridConfig {
    int k_tax = 3;
    int k_lr = 3;
    int n = 3;  // final selection size, n <= k_tax + k_lr

    void validate() const;
};

/// Sub-router inputs shared by the taxonomy, learned, and hybrid entry
/// points.
struct RouterContext {
    const ModelRegistry& registry;
    const LabelSpace& space;
    const TaxonomyConfig& taxonomy;
    const Embedder& embedder;
    const SlowClassifier* slow = nullptr;        // optional
    const std::vector<ScoreHead>* heads = nullptr;  // optional (learned router)
};

/// Union of the taxonomy top-k_tax and learned top-k_lr candidate sets,
/// truncated to the n best learned scores when the union exceeds n.
/// k_tax = 0 disables the taxonomy side; k_lr = 0 the learned side.
RoutingDecision route_hybrid(const Subproblem& x, const HybridConfig& cfg,
                             const RouterContext& ctx, const Constraints& c);

}  // namespace cascadefuse
