#include "cascadefuse/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cascadefuse::sim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_str(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Order-free deterministic draw stream: every (seed, purpose, key...) tuple
/// maps to an independent value regardless of when or on which thread it is
/// evaluated.
std::uint64_t mix(std::uint64_t seed, std::string_view purpose, std::string_view a,
                  std::string_view b = {}) {
    std::uint64_t h = splitmix64(seed ^ hash_str(purpose));
    h = splitmix64(h ^ hash_str(a));
    if (!b.empty()) h = splitmix64(h ^ hash_str(b));
    return h;
}

double uniform01(std::uint64_t h) {
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
}

double gaussian(std::uint64_t h) {
    double u1 = std::max(uniform01(splitmix64(h ^ 0x1234abcdULL)), 1e-12);
    double u2 = uniform01(splitmix64(h ^ 0x9876fedcULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string base36(std::uint64_t h, std::size_t digits) {
    static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string out;
    for (std::size_t i = 0; i < digits; ++i) {
        out.push_back(alphabet[h % 36]);
        h /= 36;
    }
    return out;
}

std::string format_conf(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string first_token(std::string_view text) {
    std::size_t start = text.find_first_not_of(' ');
    if (start == std::string_view::npos) return {};
    std::size_t end = text.find(' ', start);
    return std::string(text.substr(start, end == std::string_view::npos ? std::string_view::npos
                                                                        : end - start));
}

/// Deterministic mock model: correctness is drawn from the per-category
/// accuracy, confidence signals are calibrated around the outcome with
/// per-model noise.
class SyntheticProvider final : public TextProvider {
public:
    SyntheticProvider(SyntheticModelSpec spec, std::uint64_t seed,
                      std::shared_ptr<const std::map<std::string, Label>> keyword_to_category)
        : spec_(std::move(spec)), seed_(seed), keyword_to_category_(std::move(keyword_to_category)) {}

    ProviderResponse generate(const GenerationRequest& request) const override {
        Label category;
        auto it = keyword_to_category_->find(first_token(request.prompt));
        if (it != keyword_to_category_->end()) {
            category = it->second;
        } else if (!spec_.accuracy.empty()) {
            category = spec_.accuracy.begin()->first;
        }
        double acc = 0.0;
        if (auto ait = spec_.accuracy.find(category); ait != spec_.accuracy.end()) {
            acc = ait->second;
        }
        bool correct = uniform01(mix(seed_, "outcome", spec_.id, request.prompt)) < acc;

        ProviderResponse resp;
        std::istringstream prompt_tokens(request.prompt);
        std::string t0, t1, t2;
        prompt_tokens >> t0 >> t1 >> t2;
        if (correct) {
            resp.text = "regarding " + t0 + " " + t1 + " " + t2 + " the answer checks out";
        } else {
            std::string junk = base36(mix(seed_, "junk", spec_.id, request.prompt), 6);
            resp.text = "draft reply " + junk + " needs review, not sure about this";
        }

        double g_marker = gaussian(mix(seed_, "marker", spec_.id, request.prompt));
        double marker = correct
                            ? std::clamp(0.85 + spec_.signal_noise * g_marker, 0.50, 0.99)
                            : std::clamp(0.30 + spec_.signal_noise * g_marker, 0.02, 0.55);
        resp.text += " [[conf=" + format_conf(marker) + "]]";

        resp.input_tokens = count_tokens(request.prompt);
        resp.output_tokens = count_tokens(resp.text);

        if (request.want_logprobs && spec_.supports_logits) {
            double g_logit = gaussian(mix(seed_, "logit", spec_.id, request.prompt));
            double p = correct
                           ? std::clamp(0.90 + spec_.signal_noise * g_logit, 0.32, 0.995)
                           : std::clamp(0.22 + spec_.signal_noise * g_logit, 0.02, 0.60);
            resp.logprobs =
                std::vector<double>(std::max<std::uint64_t>(resp.output_tokens, 1), std::log(p));
        }
        return resp;
    }

private:
    SyntheticModelSpec spec_;
    std::uint64_t seed_;
    std::shared_ptr<const std::map<std::string, Label>> keyword_to_category_;
};

}  // namespace

void SyntheticModelSpec::validate() const {
    if (id.empty()) throw std::invalid_argument("synthetic spec: empty id");
    if (tier < 0) throw std::invalid_argument("synthetic spec '" + id + "': negative tier");
    if (!(signal_noise >= 0)) {
        throw std::invalid_argument("synthetic spec '" + id + "': negative signal noise");
    }
    for (const auto& [cat, a] : accuracy) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw std::invalid_argument("synthetic spec '" + id + "': accuracy for '" + cat +
                                        "' outside [0,1]");
        }
    }
}

SyntheticPool::SyntheticPool(std::vector<SyntheticModelSpec> specs,
                             std::map<Label, std::vector<std::string>> category_keywords,
                             std::uint64_t seed)
    : specs_(std::move(specs)), keywords_(std::move(category_keywords)), seed_(seed) {
    if (specs_.size() < 2) throw std::invalid_argument("synthetic pool: at least 2 specs");
    if (keywords_.empty()) throw std::invalid_argument("synthetic pool: no categories");

    for (const auto& [cat, kws] : keywords_) {
        if (kws.empty()) {
            throw std::invalid_argument("synthetic pool: category '" + cat + "' has no keywords");
        }
        categories_.push_back(cat);
    }

    auto keyword_map = std::make_shared<std::map<std::string, Label>>();
    for (const auto& [cat, kws] : keywords_) {
        for (const auto& kw : kws) {
            if (!keyword_map->emplace(kw, cat).second) {
                throw std::invalid_argument("synthetic pool: keyword '" + kw +
                                            "' used by more than one category");
            }
        }
    }

    embedder_ = std::make_shared<HashingEmbedder>();

    std::vector<ModelProfile> profiles;
    for (const auto& spec : specs_) {
        spec.validate();
        for (const auto& [cat, a] : spec.accuracy) {
            if (!keywords_.count(cat)) {
                throw std::invalid_argument("synthetic spec '" + spec.id +
                                            "': unknown category '" + cat + "'");
            }
        }
        ModelProfile p;
        p.id = spec.id;
        p.tier = spec.tier;
        p.cost_per_call = spec.cost_per_call;
        p.cost_per_1k_input_tokens = spec.cost_per_1k_input_tokens;
        p.cost_per_1k_output_tokens = spec.cost_per_1k_output_tokens;
        p.supports_logits = spec.supports_logits;
        for (const auto& cat : spec.claims) p.suitability[cat] = 1;
        for (const auto& cat : categories_) {
            if (!p.suitability.count(cat)) p.suitability[cat] = 0;
        }
        profiles.push_back(std::move(p));
    }
    registry_ = ModelRegistry(std::move(profiles));  // throws on duplicate ids

    std::vector<LabelSpace::LabelDef> defs;
    std::map<Label, EmbeddingVector> refs;
    for (const auto& cat : categories_) {
        defs.push_back({"domain", cat});
        std::string joined;
        for (const auto& kw : keywords_.at(cat)) {
            if (!joined.empty()) joined += ' ';
            joined += kw;
        }
        refs[cat] = embedder_->embed(joined);
    }
    space_ = LabelSpace(std::move(defs), std::move(refs), {}, {});

    for (const auto& spec : specs_) {
        providers_.bind(spec.id,
                        std::make_shared<SyntheticProvider>(spec, seed_, keyword_map));
    }

    reward = std::make_shared<CosineRewardModel>(embedder_, 4.0);
    judge = std::make_shared<RubricJudge>();
}

const SyntheticModelSpec& SyntheticPool::spec_of(const std::string& model_id) const {
    for (const auto& s : specs_) {
        if (s.id == model_id) return s;
    }
    throw std::out_of_range("synthetic pool: unknown model '" + model_id + "'");
}

bool SyntheticPool::answers_correctly(const std::string& model_id, const std::string& query_text,
                                      const Label& category) const {
    const SyntheticModelSpec& spec = spec_of(model_id);
    auto it = spec.accuracy.find(category);
    double acc = it == spec.accuracy.end() ? 0.0 : it->second;
    return uniform01(mix(seed_, "outcome", model_id, query_text)) < acc;
}

std::vector<SyntheticQuery> SyntheticPool::make_queries(std::size_t count,
                                                        const std::string& id_prefix) const {
    std::vector<SyntheticQuery> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        SyntheticQuery q;
        q.id = id_prefix + std::to_string(i);
        std::uint64_t h = mix(seed_, "query", q.id);
        q.category = categories_[h % categories_.size()];
        const auto& kws = keywords_.at(q.category);
        std::uint64_t h1 = splitmix64(h ^ 1), h2 = splitmix64(h ^ 2), h3 = splitmix64(h ^ 3);
        std::string k0 = kws[h1 % kws.size()];
        std::string k1 = kws[h2 % kws.size()];
        std::string k2 = kws[h3 % kws.size()];
        q.text = k0 + " " + k1 + " " + k2 + " " + base36(splitmix64(h ^ 4), 4);
        for (const auto& spec : specs_) {
            if (answers_correctly(spec.id, q.text, q.category)) q.gold.insert(spec.id);
        }
        out.push_back(std::move(q));
    }
    return out;
}

TrainedRouter SyntheticPool::train_router(std::size_t count, const TrainConfig& cfg) {
    std::vector<SyntheticQuery> stream = make_queries(count, "train-");
    std::vector<TrainingExample> data;
    data.reserve(stream.size());
    for (const auto& q : stream) {
        TrainingExample ex;
        ex.text = q.text;
        ex.labels = {q.category};
        for (const auto& spec : specs_) {
            ex.scores[spec.id] = q.gold.count(spec.id) ? 1.0 : 0.0;
        }
        data.push_back(std::move(ex));
    }
    std::vector<std::string> ids;
    for (const auto& m : registry_.models()) ids.push_back(m.id);
    router_ = cascadefuse::train_router(data, cfg, space_, *embedder_, ids);
    for (const auto& [id, stats] : router_->norm) {
        registry_.set_norm_stats(id, stats.mu, stats.sigma);
    }
    return *router_;
}

SyntheticPool SyntheticPool::from_json(const nlohmann::json& doc, std::uint64_t seed_override) {
    std::vector<SyntheticModelSpec> specs;
    for (const auto& entry : doc.at("models")) {
        SyntheticModelSpec s;
        entry.at("id").get_to(s.id);
        s.tier = entry.value("tier", 0);
        s.cost_per_call = entry.value("cost_per_call", 0.0);
        s.cost_per_1k_input_tokens = entry.value("cost_per_1k_input_tokens", 0.0);
        s.cost_per_1k_output_tokens = entry.value("cost_per_1k_output_tokens", 0.0);
        entry.at("accuracy").get_to(s.accuracy);
        if (entry.contains("claims")) entry.at("claims").get_to(s.claims);
        s.signal_noise = entry.value("signal_noise", 0.06);
        s.supports_logits = entry.value("supports_logits", true);
        specs.push_back(std::move(s));
    }
    std::map<Label, std::vector<std::string>> keywords;
    doc.at("categories").get_to(keywords);
    std::uint64_t seed = seed_override ? seed_override : doc.value("seed", 1ULL);
    return SyntheticPool(std::move(specs), std::move(keywords), seed);
}

SyntheticPool SyntheticPool::load(const std::string& path, std::uint64_t seed_override) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("pool spec: cannot open '" + path + "'");
    nlohmann::json doc;
    in >> doc;
    return from_json(doc, seed_override);
}

SyntheticPool default_pool(std::uint64_t seed) {
    const std::vector<std::pair<Label, std::vector<std::string>>> cats = {
        {"arithmetic", {"sum", "multiply", "digits", "integer", "fraction", "remainder"}},
        {"codegen", {"function", "compile", "syntax", "loop", "variable", "refactor"}},
        {"summarization", {"summarize", "condense", "abridge", "article", "highlights", "brief"}},
        {"legal", {"statute", "contract", "liability", "clause", "regulation", "compliance"}},
        {"medical", {"dosage", "symptom", "diagnosis", "patient", "treatment", "clinical"}},
        {"extraction", {"parse", "fields", "records", "table", "extract", "schema"}},
    };
    std::map<Label, std::vector<std::string>> keywords(cats.begin(), cats.end());

    // Category order for the over-claim cycle.
    std::vector<Label> order;
    for (const auto& [cat, kws] : cats) order.push_back(cat);

    std::vector<SyntheticModelSpec> specs;
    for (std::size_t i = 0; i < order.size(); ++i) {
        SyntheticModelSpec s;
        s.id = "nano-" + order[i];
        s.tier = 0;
        s.cost_per_call = 0.0002;
        s.cost_per_1k_input_tokens = 0.05;
        s.cost_per_1k_output_tokens = 0.15;
        const Label& own = order[i];
        const Label& next = order[(i + 1) % order.size()];
        for (const auto& cat : order) s.accuracy[cat] = 0.18;
        s.accuracy[own] = 0.93;
        s.accuracy[next] = 0.45;
        s.claims = {own, next};  // over-claims the adjacent category
        s.signal_noise = 0.06;
        // Two specialists expose no logits, exercising the self-report
        // substitute path.
        s.supports_logits = !(own == "summarization" || own == "legal");
        specs.push_back(std::move(s));
    }
    {
        SyntheticModelSpec s;
        s.id = "medio";
        s.tier = 1;
        s.cost_per_call = 0.001;
        s.cost_per_1k_input_tokens = 0.25;
        s.cost_per_1k_output_tokens = 0.75;
        for (const auto& cat : order) {
            s.accuracy[cat] = 0.62;
            s.claims.insert(cat);
        }
        s.signal_noise = 0.07;
        specs.push_back(std::move(s));
    }
    {
        SyntheticModelSpec s;
        s.id = "grande";
        s.tier = 2;
        s.cost_per_call = 0.004;
        s.cost_per_1k_input_tokens = 1.2;
        s.cost_per_1k_output_tokens = 3.6;
        for (const auto& cat : order) {
            s.accuracy[cat] = 0.80;
            s.claims.insert(cat);
        }
        s.signal_noise = 0.05;
        specs.push_back(std::move(s));
    }
    return SyntheticPool(std::move(specs), std::move(keywords), seed);
}

Policy Policy::parse(const std::string& text) {
    Policy p;
    p.name = text;
    std::string kind = text;
    std::size_t plus = text.find('+');
    if (plus != std::string::npos) {
        kind = text.substr(0, plus);
        p.max_cascades = std::stoi(text.substr(plus + 1));
    }
    if (kind == "taxonomy") {
        p.kind = PolicyKind::TaxonomyOnly;
        if (plus == std::string::npos) p.max_cascades = 0;
    } else if (kind == "learned") {
        p.kind = PolicyKind::LearnedOnly;
        if (plus == std::string::npos) p.max_cascades = 0;
    } else if (kind == "hybrid") {
        p.kind = PolicyKind::Hybrid;
        if (plus == std::string::npos) p.max_cascades = 2;
    } else if (kind == "oracle") {
        p.kind = PolicyKind::Oracle;
        p.max_cascades = 0;
    } else if (kind == "all") {
        p.kind = PolicyKind::AllModels;
        p.max_cascades = 0;
    } else {
        throw std::invalid_argument("unknown policy '" + text +
                                    "' (expected taxonomy|learned|hybrid|oracle|all, "
                                    "optionally +N cascades)");
    }
    return p;
}

std::string Policy::display_name() const {
    if (!name.empty()) return name;
    std::string base;
    switch (kind) {
        case PolicyKind::TaxonomyOnly: base = "taxonomy"; break;
        case PolicyKind::LearnedOnly: base = "learned"; break;
        case PolicyKind::Hybrid: base = "hybrid"; break;
        case PolicyKind::Oracle: return "oracle";
        case PolicyKind::AllModels: return "all";
    }
    return base + "+" + std::to_string(max_cascades);
}

QueryOutcome evaluate_query(const Policy& policy, const SyntheticQuery& query,
                            const SyntheticPool& pool) {
    QueryOutcome out;
    Subproblem x;
    x.parent_id = query.id;
    x.index = 0;
    x.text = query.text;

    RoutingDecision decision;
    switch (policy.kind) {
        case PolicyKind::TaxonomyOnly:
            decision = route_taxonomy(x, pool.registry(), pool.space(), pool.taxonomy,
                                      pool.embedder(), nullptr);
            break;
        case PolicyKind::LearnedOnly: {
            if (!pool.router()) {
                throw std::runtime_error("learned policy requires a trained router");
            }
            int k = policy.top_k > 0 ? policy.top_k : policy.max_cascades + 1;
            decision = route_learned(x, k, {}, pool.router()->heads, pool.registry(),
                                     pool.space(), pool.taxonomy, pool.embedder());
            break;
        }
        case PolicyKind::Hybrid: {
            if (!pool.router()) {
                throw std::runtime_error("hybrid policy requires a trained router");
            }
            RouterContext ctx{pool.registry(), pool.space(), pool.taxonomy, pool.embedder(),
                              nullptr, &pool.router()->heads};
            decision = route_hybrid(x, pool.hybrid, ctx, {});
            break;
        }
        case PolicyKind::Oracle:
            decision.models.assign(query.gold.begin(), query.gold.end());
            break;
        case PolicyKind::AllModels:
            for (const auto& m : pool.registry().models()) decision.models.push_back(m.id);
            break;
    }

    // Router ranking for the top-k metrics: predicted score for the learned
    // and hybrid policies, cascade order otherwise.
    out.ranked = decision.models;
    if (policy.kind == PolicyKind::LearnedOnly || policy.kind == PolicyKind::Hybrid) {
        std::stable_sort(out.ranked.begin(), out.ranked.end(),
                         [&](const std::string& a, const std::string& b) {
                             auto ia = decision.scores.find(a);
                             auto ib = decision.scores.find(b);
                             double sa = ia == decision.scores.end() ? -1.0 : ia->second;
                             double sb = ib == decision.scores.end() ? -1.0 : ib->second;
                             if (sa != sb) return sa > sb;
                             return a < b;
                         });
    } else {
        std::stable_sort(out.ranked.begin(), out.ranked.end(),
                         [&](const std::string& a, const std::string& b) {
                             return cascade_order_less(pool.registry().at(a),
                                                       pool.registry().at(b));
                         });
    }

    // The minimum cascade depth at which the candidate order reaches gold.
    {
        std::vector<std::string> cascade_order = decision.models;
        std::stable_sort(cascade_order.begin(), cascade_order.end(),
                         [&](const std::string& a, const std::string& b) {
                             return cascade_order_less(pool.registry().at(a),
                                                       pool.registry().at(b));
                         });
        for (std::size_t i = 0; i < cascade_order.size(); ++i) {
            if (query.gold.count(cascade_order[i])) {
                out.min_cascade = static_cast<int>(i);
                break;
            }
        }
    }

    if (policy.kind == PolicyKind::Oracle || policy.kind == PolicyKind::AllModels) {
        // Baseline policies execute their whole selection, no deferral loop.
        for (const auto& id : decision.models) {
            const ModelProfile& profile = pool.registry().at(id);
            GenerationResult g =
                run_model(profile, pool.providers().provider_for(id), x.text);
            out.attempt_costs.push_back(g.cost);
            out.total_cost += g.cost;
            out.selected.push_back(id);
        }
        out.cascades_used = out.selected.empty() ? 0 : out.selected.size() - 1;
        if (!out.selected.empty()) {
            out.accepted = true;
            out.accepted_model = out.selected.front();
        }
        return out;
    }

    SignalContext sig{pool.space(), pool.embedder()};
    sig.reward = pool.reward.get();
    sig.judge = pool.judge.get();
    sig.judge_cost = pool.judge_cost;
    sig.domain_alpha = pool.taxonomy.alpha;

    CascadeConfig cfg = pool.cascade;
    cfg.max_cascades = policy.max_cascades;

    CascadeTrace trace = run_cascade(x, decision, pool.registry(), pool.providers(), sig,
                                     pool.weights, cfg);
    for (const auto& a : trace.attempts) {
        out.selected.push_back(a.model_id);
        out.attempt_costs.push_back(a.cost);
        if (a.judge_invoked) ++out.judge_invocations;
    }
    out.accepted = trace.accepted;
    out.accepted_model = trace.accepted_model;
    out.total_cost = trace.total_cost;
    out.cascades_used = trace.cascades_used;
    return out;
}

double oracle_evaluation_cost(const std::vector<SyntheticQuery>& dataset,
                              const SyntheticPool& pool) {
    double total = 0.0;
    for (const auto& q : dataset) {
        for (const auto& m : pool.registry().models()) {
            GenerationResult g =
                run_model(m, pool.providers().provider_for(m.id), q.text);
            total += g.cost;
        }
    }
    return total;
}

namespace {

struct MicroCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct ReportAccumulator {
    std::size_t n = 0;
    std::size_t top1 = 0, top3 = 0, top5 = 0;
    std::size_t sample_hits = 0;
    std::size_t answer_hits = 0;
    MicroCounts micro;
    double total_cost = 0.0;
    std::size_t total_cascades = 0;
    std::size_t judge_invocations = 0;
    std::map<int, std::size_t> cascade_histogram;
    std::map<int, std::size_t> min_cascade_histogram;

    void add(const QueryOutcome& o, const SyntheticQuery& q,
             const std::vector<std::string>& all_models) {
        ++n;
        auto hit_within = [&](std::size_t k) {
            for (std::size_t i = 0; i < std::min(k, o.ranked.size()); ++i) {
                if (q.gold.count(o.ranked[i])) return true;
            }
            return false;
        };
        if (hit_within(1)) ++top1;
        if (hit_within(3)) ++top3;
        if (hit_within(5)) ++top5;

        bool sample_hit = false;
        std::set<std::string> selected(o.selected.begin(), o.selected.end());
        for (const auto& id : selected) {
            if (q.gold.count(id)) sample_hit = true;
        }
        if (sample_hit) ++sample_hits;
        if (o.accepted && q.gold.count(o.accepted_model)) ++answer_hits;

        for (const auto& id : all_models) {
            bool chosen = selected.count(id) != 0;
            bool gold = q.gold.count(id) != 0;
            if (chosen && gold) ++micro.tp;
            else if (chosen && !gold) ++micro.fp;
            else if (!chosen && gold) ++micro.fn;
            else ++micro.tn;
        }

        total_cost += o.total_cost;
        total_cascades += o.cascades_used;
        judge_invocations += o.judge_invocations;
        cascade_histogram[static_cast<int>(o.cascades_used)] += 1;
        min_cascade_histogram[o.min_cascade] += 1;
    }

    PolicyReport finalize(const Policy& policy, double oracle_cost) const {
        PolicyReport r;
        r.policy = policy.display_name();
        r.n_queries = n;
        double dn = n > 0 ? static_cast<double>(n) : 1.0;
        r.top1 = top1 / dn;
        r.top3 = top3 / dn;
        r.top5 = top5 / dn;
        r.sample_accuracy = sample_hits / dn;
        r.answer_accuracy = answer_hits / dn;
        if (micro.tp + micro.fp == 0) {
            r.precision = 0.0;
            r.precision_undefined = true;
        } else {
            r.precision = static_cast<double>(micro.tp) / (micro.tp + micro.fp);
        }
        r.recall = micro.tp + micro.fn == 0
                       ? 0.0
                       : static_cast<double>(micro.tp) / (micro.tp + micro.fn);
        r.f1 = micro.tp == 0 ? 0.0
                             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
        r.total_cost = total_cost;
        r.mean_cost_per_1k = total_cost / dn * 1000.0;
        r.oracle_cost = oracle_cost;
        r.savings_vs_oracle = oracle_cost > 0.0 ? 1.0 - total_cost / oracle_cost : 0.0;
        r.mean_cascades = total_cascades / dn;
        r.judge_invocations = judge_invocations;
        r.cascade_histogram = cascade_histogram;
        r.min_cascade_histogram = min_cascade_histogram;
        return r;
    }
};

std::vector<std::string> model_ids(const SyntheticPool& pool) {
    std::vector<std::string> ids;
    for (const auto& m : pool.registry().models()) ids.push_back(m.id);
    return ids;
}

}  // namespace

PolicyReport evaluate_policy_serial(const Policy& policy,
                                    const std::vector<SyntheticQuery>& dataset,
                                    const SyntheticPool& pool,
                                    std::vector<QueryOutcome>* outcomes) {
    if (dataset.empty()) throw std::invalid_argument("evaluate_policy: empty dataset");
    std::vector<std::string> ids = model_ids(pool);
    ReportAccumulator acc;
    if (outcomes) outcomes->clear();
    for (const auto& q : dataset) {
        QueryOutcome o = evaluate_query(policy, q, pool);
        acc.add(o, q, ids);
        if (outcomes) outcomes->push_back(std::move(o));
    }
    return acc.finalize(policy, oracle_evaluation_cost(dataset, pool));
}

PolicyReport evaluate_policy(const Policy& policy, const std::vector<SyntheticQuery>& dataset,
                             const SyntheticPool& pool, std::vector<QueryOutcome>* outcomes) {
    if (dataset.empty()) throw std::invalid_argument("evaluate_policy: empty dataset");
    std::vector<QueryOutcome> slots(dataset.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16)
#endif
    for (std::size_t i = 0; i < dataset.size(); ++i) {  // NOLINT(modernize-loop-convert)
        slots[i] = evaluate_query(policy, dataset[i], pool);
    }

    // Reduction stays serial and index-ordered: identical to the serial path.
    std::vector<std::string> ids = model_ids(pool);
    ReportAccumulator acc;
    for (std::size_t i = 0; i < dataset.size(); ++i) acc.add(slots[i], dataset[i], ids);
    PolicyReport report = acc.finalize(policy, oracle_evaluation_cost(dataset, pool));
    if (outcomes) *outcomes = std::move(slots);
    return report;
}

nlohmann::json PolicyReport::to_json() const {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [k, c] : cascade_histogram) hist[std::to_string(k)] = c;
    nlohmann::json min_hist = nlohmann::json::object();
    for (const auto& [k, c] : min_cascade_histogram) min_hist[std::to_string(k)] = c;
    return nlohmann::json{{"policy", policy},
                          {"n_queries", n_queries},
                          {"top1", top1},
                          {"top3", top3},
                          {"top5", top5},
                          {"sample_accuracy", sample_accuracy},
                          {"answer_accuracy", answer_accuracy},
                          {"precision", precision},
                          {"recall", recall},
                          {"f1", f1},
                          {"precision_undefined", precision_undefined},
                          {"total_cost", total_cost},
                          {"mean_cost_per_1k", mean_cost_per_1k},
                          {"oracle_cost", oracle_cost},
                          {"savings_vs_oracle", savings_vs_oracle},
                          {"mean_cascades", mean_cascades},
                          {"judge_invocations", judge_invocations},
                          {"cascade_histogram", hist},
                          {"min_cascade_histogram", min_hist}};
}

std::string render_table(const std::vector<PolicyReport>& reports) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-14s %6s %6s %6s %8s %8s %6s %6s %6s %10s %8s %6s\n",
                  "policy", "top1", "top3", "top5", "sample", "answer", "prec", "recall", "f1",
                  "cost/1k", "savings", "casc");
    out << line;
    out << std::string(104, '-') << '\n';
    for (const auto& r : reports) {
        std::snprintf(line, sizeof(line),
                      "%-14s %6.3f %6.3f %6.3f %8.3f %8.3f %6.3f %6.3f %6.3f %10.4f %7.1f%% %6.2f\n",
                      r.policy.c_str(), r.top1, r.top3, r.top5, r.sample_accuracy,
                      r.answer_accuracy, r.precision, r.recall, r.f1, r.mean_cost_per_1k,
                      r.savings_vs_oracle * 100.0, r.mean_cascades);
        out << line;
    }
    return out.str();
}

std::string histogram_csv(const PolicyReport& report) {
    std::ostringstream out;
    out << "kind,cascades,count\n";
    for (const auto& [k, c] : report.cascade_histogram) {
        out << "used," << k << ',' << c << '\n';
    }
    for (const auto& [k, c] : report.min_cascade_histogram) {
        out << "min_required," << k << ',' << c << '\n';
    }
    return out.str();
}

std::vector<SyntheticQuery> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("dataset: cannot open '" + path + "'");
    nlohmann::json doc;
    in >> doc;
    std::vector<SyntheticQuery> out;
    for (const auto& entry : doc.at("queries")) {
        SyntheticQuery q;
        entry.at("id").get_to(q.id);
        entry.at("text").get_to(q.text);
        entry.at("category").get_to(q.category);
        if (entry.contains("gold")) entry.at("gold").get_to(q.gold);
        out.push_back(std::move(q));
    }
    return out;
}

void save_dataset(const std::vector<SyntheticQuery>& dataset, const std::string& path) {
    nlohmann::json queries = nlohmann::json::array();
    for (const auto& q : dataset) {
        queries.push_back({{"id", q.id},
                           {"text", q.text},
                           {"category", q.category},
                           {"gold", q.gold}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dataset: cannot write '" + path + "'");
    out << nlohmann::json{{"queries", queries}}.dump(2) << '\n';
}

}  // namespace cascadefuse::sim
