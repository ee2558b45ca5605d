#include <doctest.h>

#include "cascadefuse/hybrid.hpp"

using namespace cascadefuse;

namespace {

struct HybridFixture {
    HashingEmbedder emb{16};
    LabelSpace space;
    ModelRegistry registry;
    std::vector<ScoreHead> heads;

    HybridFixture() {
        std::vector<LabelSpace::LabelDef> defs{{"domain", "code"}, {"domain", "legal"}};
        std::map<Label, EmbeddingVector> refs{{"code", emb.embed("loop syntax compile")},
                                              {"legal", emb.embed("statute clause filing")}};
        space = LabelSpace(defs, refs, {}, {});

        auto model = [&](const std::string& id, int tier, double mu,
                         std::map<Label, int> suit) {
            ModelProfile p;
            p.id = id;
            p.tier = tier;
            p.norm_mu = mu;
            p.norm_sigma = 1.0;
            p.suitability = std::move(suit);
            return p;
        };
        registry = ModelRegistry({
            model("m1", 0, 0.30, {{"code", 1}, {"legal", 0}}),
            model("m2", 1, 0.45, {{"code", 1}, {"legal", 0}}),
            model("m3", 2, 0.90, {{"code", 0}, {"legal", 1}}),
            model("m4", 3, 0.80, {{"code", 0}, {"legal", 1}}),
        });
        std::size_t dim = 16 + 2;
        for (const auto& id : {"m1", "m2", "m3", "m4"}) {
            heads.push_back(ScoreHead{id, std::vector<double>(dim, 0.0), 0.0});
        }
    }

    RouterContext ctx() const {
        return RouterContext{registry, space, tax, emb, nullptr, &heads};
    }

    TaxonomyConfig tax;
};

Subproblem code_query() {
    Subproblem x;
    x.parent_id = "q";
    x.text = "loop syntax compile";
    return x;
}

}  // namespace

TEST_CASE("hybrid config invariants") {
    CHECK_THROWS_AS((HybridConfig{2, 2, 5}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((HybridConfig{-1, 2, 1}.validate()), std::invalid_argument);
    CHECK_NOTHROW((HybridConfig{0, 2, 2}.validate()));
}

TEST_CASE("hybrid returns the union when it fits within n") {
    HybridFixture fx;
    // Taxonomy side picks code-suitable models (m1, m2); learned side ranks
    // by mu: m3 (0.9), m4 (0.8).
    HybridConfig cfg{2, 2, 4};
    auto decision = route_hybrid(code_query(), cfg, fx.ctx(), {});
    CHECK(decision.provenance == Provenance::Hybrid);
    CHECK(decision.taxonomy_set == std::vector<std::string>{"m1", "m2"});
    CHECK(decision.learned_set == std::vector<std::string>{"m3", "m4"});
    CHECK(decision.models.size() == 4);
    CHECK_FALSE(decision.union_truncated);
}

TEST_CASE("hybrid truncates to the n best learned scores") {
    HybridFixture fx;
    HybridConfig cfg{2, 2, 2};
    auto decision = route_hybrid(code_query(), cfg, fx.ctx(), {});
    CHECK(decision.union_truncated);
    // Scores: m3 0.9, m4 0.8, m2 0.45, m1 0.3 -> top-2 of the union.
    CHECK(decision.models == std::vector<std::string>{"m3", "m4"});
}

TEST_CASE("hybrid with k_tax = 0 equals the learned route") {
    HybridFixture fx;
    HybridConfig cfg{0, 3, 3};
    auto hybrid = route_hybrid(code_query(), cfg, fx.ctx(), {});
    auto learned = route_learned(code_query(), 3, {}, fx.heads, fx.registry, fx.space, fx.tax,
                                 fx.emb);
    CHECK(hybrid.models == learned.models);
    CHECK(hybrid.taxonomy_set.empty());
}

TEST_CASE("hybrid with k_lr = 0 equals the taxonomy top-k") {
    HybridFixture fx;
    HybridConfig cfg{2, 0, 2};
    auto hybrid = route_hybrid(code_query(), cfg, fx.ctx(), {});
    CHECK(hybrid.models == std::vector<std::string>{"m1", "m2"});
    CHECK(hybrid.learned_set.empty());
}

TEST_CASE("hybrid result never exceeds n and respects constraints") {
    HybridFixture fx;
    HybridConfig cfg{2, 2, 3};
    Constraints c;
    c.deny_models = {"m3"};
    auto decision = route_hybrid(code_query(), cfg, fx.ctx(), c);
    CHECK(decision.models.size() <= 3);
    for (const auto& id : decision.models) CHECK(id != "m3");
}

TEST_CASE("hybrid flags the empty result when every model is denied") {
    HybridFixture fx;
    HybridConfig cfg{2, 2, 3};
    Constraints c;
    c.deny_models = {"m1", "m2", "m3", "m4"};
    auto decision = route_hybrid(code_query(), cfg, fx.ctx(), c);
    CHECK(decision.models.empty());
    CHECK(decision.no_feasible);
}

TEST_CASE("hybrid is deterministic") {
    HybridFixture fx;
    HybridConfig cfg{2, 2, 3};
    auto a = route_hybrid(code_query(), cfg, fx.ctx(), {});
    auto b = route_hybrid(code_query(), cfg, fx.ctx(), {});
    CHECK(a.models == b.models);
    CHECK(a.scores == b.scores);
}
