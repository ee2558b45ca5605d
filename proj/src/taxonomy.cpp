#include "cascadefuse/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cascadefuse {

void LabelDistribution::validate() const {
    double sum = 0.0;
    for (const auto& [c, p] : probs) {
        if (!(p >= 0.0 && p <= 1.0) || !std::isfinite(p)) {
            throw std::invalid_argument("distribution: p('" + c + "') outside [0,1]");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("distribution: probabilities sum to " + std::to_string(sum));
    }
}

double LabelDistribution::at(const Label& c) const {
    auto it = probs.find(c);
    return it == probs.end() ? 0.0 : it->second;
}

std::pair<Label, double> LabelDistribution::top() const {
    std::pair<Label, double> best{"", -1.0};
    for (const auto& [c, p] : probs) {
        if (p > best.second) best = {c, p};  // map order gives the lexicographic tie-break
    }
    return best;
}

LabelSpace::LabelSpace(std::vector<LabelDef> labels, std::map<Label, EmbeddingVector> refs,
                       std::set<Label> sensitive, std::set<Label> specialized)
    : labels_(std::move(labels)),
      ref_embeddings_(std::move(refs)),
      sensitive_domains_(std::move(sensitive)),
      specialized_domains_(std::move(specialized)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        const auto& def = labels_[i];
        if (!order_.emplace(def.name, i).second) {
            throw std::invalid_argument("label space: duplicate label '" + def.name + "'");
        }
        if (!ref_embeddings_.count(def.name)) {
            throw std::invalid_argument("label space: no reference embedding for '" + def.name +
                                        "'");
        }
    }
    if (ref_embeddings_.size() != labels_.size()) {
        throw std::invalid_argument("label space: reference embedding for undeclared label");
    }
    std::size_t dim = ref_embeddings_.empty() ? 0 : ref_embeddings_.begin()->second.size();
    for (const auto& [c, u] : ref_embeddings_) {
        if (u.size() != dim) {
            throw std::invalid_argument("label space: inconsistent embedding dims at '" + c + "'");
        }
        for (double x : u) {
            if (!std::isfinite(x)) {
                throw std::invalid_argument("label space: non-finite embedding for '" + c + "'");
            }
        }
    }
    for (const auto& c : sensitive_domains_) {
        if (!order_.count(c)) {
            throw std::invalid_argument("label space: sensitive domain '" + c +
                                        "' is not a declared label");
        }
    }
    for (const auto& c : specialized_domains_) {
        if (!order_.count(c)) {
            throw std::invalid_argument("label space: specialized domain '" + c +
                                        "' is not a declared label");
        }
    }
}

LabelSpace LabelSpace::from_json(const nlohmann::json& doc, const Embedder& embedder) {
    std::vector<LabelDef> labels;
    std::map<Label, EmbeddingVector> refs;
    for (const auto& entry : doc.at("labels")) {
        LabelDef def;
        def.dimension = entry.value("dimension", "domain");
        def.name = entry.at("name").get<std::string>();
        if (entry.contains("embedding")) {
            refs[def.name] = entry.at("embedding").get<EmbeddingVector>();
        } else if (entry.contains("text")) {
            refs[def.name] = embedder.embed(entry.at("text").get<std::string>());
        } else {
            refs[def.name] = embedder.embed(def.name);
        }
        labels.push_back(std::move(def));
    }
    std::set<Label> sensitive;
    if (doc.contains("sensitive_domains")) doc.at("sensitive_domains").get_to(sensitive);
    std::set<Label> specialized;
    if (doc.contains("specialized_domains")) doc.at("specialized_domains").get_to(specialized);
    return LabelSpace(std::move(labels), std::move(refs), std::move(sensitive),
                      std::move(specialized));
}

LabelSpace LabelSpace::load(const std::string& path, const Embedder& embedder) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("label space: cannot open '" + path + "'");
    nlohmann::json doc;
    in >> doc;
    return from_json(doc, embedder);
}

std::vector<Label> LabelSpace::dimension_labels(const std::string& dimension) const {
    std::vector<Label> out;
    for (const auto& def : labels_) {
        if (def.dimension == dimension) out.push_back(def.name);
    }
    return out;
}

std::size_t LabelSpace::label_index(const Label& c) const {
    auto it = order_.find(c);
    if (it == order_.end()) throw std::out_of_range("label space: unknown label '" + c + "'");
    return it->second;
}

void TaxonomyConfig::validate() const {
    if (!(alpha > 0)) throw std::invalid_argument("taxonomy: alpha must be > 0");
    if (lambda < 0 || lambda > 1) throw std::invalid_argument("taxonomy: lambda outside [0,1]");
    if (tau_label < 0 || tau_label > 1) {
        throw std::invalid_argument("taxonomy: tau_label outside [0,1]");
    }
    if (tau_c < 0 || tau_c > 1) throw std::invalid_argument("taxonomy: tau_c outside [0,1]");
    if (tau_skip < 0 || tau_skip > 1) {
        throw std::invalid_argument("taxonomy: tau_skip outside [0,1]");
    }
    if (top_k_labels && *top_k_labels <= 0) {
        throw std::invalid_argument("taxonomy: top_k_labels must be positive");
    }
}

LabelDistribution fast_classify(const EmbeddingVector& v, const LabelSpace& space, double alpha) {
    if (!(alpha > 0)) throw std::invalid_argument("fast_classify: alpha must be > 0");
    if (space.size() == 0) throw std::invalid_argument("fast_classify: empty label space");

    // Scores are -alpha * distance; softmax with max-subtraction.
    std::map<Label, double> scores;
    double max_score = -std::numeric_limits<double>::infinity();
    for (const auto& [c, u] : space.ref_embeddings()) {
        double d = l2_distance(v, u);
        if (!std::isfinite(d)) throw std::runtime_error("fast_classify: non-finite distance");
        double s = -alpha * d;
        scores[c] = s;
        max_score = std::max(max_score, s);
    }
    double denom = 0.0;
    for (auto& [c, s] : scores) {
        s = std::exp(s - max_score);
        denom += s;
    }
    LabelDistribution out;
    for (const auto& [c, s] : scores) out.probs[c] = s / denom;
    return out;
}

LabelDistribution fuse_distributions(const LabelDistribution& p_slow,
                                     const LabelDistribution& p_fast, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("fuse_distributions: lambda outside [0,1]");
    }
    if (p_slow.probs.size() != p_fast.probs.size()) {
        throw std::invalid_argument("fuse_distributions: label sets differ");
    }
    LabelDistribution out;
    for (const auto& [c, ps] : p_slow.probs) {
        auto it = p_fast.probs.find(c);
        if (it == p_fast.probs.end()) {
            throw std::invalid_argument("fuse_distributions: label '" + c +
                                        "' missing from fast distribution");
        }
        out.probs[c] = lambda * ps + (1.0 - lambda) * it->second;
    }
    return out;
}

std::set<Label> select_labels(const LabelDistribution& p, const TaxonomyConfig& cfg) {
    std::set<Label> out;
    if (!cfg.top_k_labels) {
        for (const auto& [c, prob] : p.probs) {
            if (prob >= cfg.tau_label) out.insert(c);
        }
        return out;
    }
    std::vector<std::pair<Label, double>> ranked(p.probs.begin(), p.probs.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(*cfg.top_k_labels),
                                          ranked.size());
    for (std::size_t i = 0; i < k; ++i) out.insert(ranked[i].first);
    return out;
}

LabelDistribution KeywordSlowClassifier::classify(const Subproblem& x,
                                                  const LabelSpace& space) const {
    std::string lower;
    lower.reserve(x.text.size());
    for (unsigned char c : x.text) lower.push_back(static_cast<char>(std::tolower(c)));

    std::map<Label, double> hits;
    double total = 0.0;
    for (const auto& def : space.labels()) {
        double n = 0.0;
        auto it = keywords_.find(def.name);
        if (it != keywords_.end()) {
            for (const auto& kw : it->second) {
                if (lower.find(kw) != std::string::npos) n += 1.0;
            }
        }
        hits[def.name] = n;
        total += n;
    }
    LabelDistribution out;
    if (total == 0.0) {
        double u = 1.0 / static_cast<double>(space.size());
        for (const auto& def : space.labels()) out.probs[def.name] = u;
    } else {
        for (const auto& [c, n] : hits) out.probs[c] = n / total;
    }
    return out;
}

double suitability(const ModelProfile& profile, const std::set<Label>& labels, bool any_label) {
    if (labels.empty()) return 1.0;  // vacuous conjunction
    bool any = false, all = true;
    for (const auto& c : labels) {
        auto it = profile.suitability.find(c);
        bool ok = it != profile.suitability.end() && it->second == 1;
        any = any || ok;
        all = all && ok;
    }
    return (any_label ? any : all) ? 1.0 : 0.0;
}

RoutingDecision route_taxonomy(const Subproblem& x, const ModelRegistry& registry,
                               const LabelSpace& space, const TaxonomyConfig& cfg,
                               const Embedder& embedder, const SlowClassifier* slow) {
    if (registry.empty()) throw std::invalid_argument("route_taxonomy: empty registry");
    cfg.validate();

    LabelDistribution p_fast = fast_classify(embedder.embed(x.text), space, cfg.alpha);
    LabelDistribution fused;
    if (slow) {
        fused = fuse_distributions(slow->classify(x, space), p_fast, cfg.lambda);
    } else {
        fused = p_fast;  // no slow classifier: lambda treated as 0
    }

    RoutingDecision decision;
    decision.provenance = Provenance::Taxonomy;
    decision.labels = select_labels(fused, cfg);
    decision.label_probs = fused.probs;
    decision.top_label_prob = fused.top().second;

    for (const auto& m : registry.models()) {
        double phi = suitability(m, decision.labels, cfg.suitability_any);
        decision.scores[m.id] = phi;
        if (phi >= cfg.tau_c) decision.models.push_back(m.id);
    }
    decision.no_feasible = decision.models.empty();
    return decision;
}

}  // namespace cascadefuse
