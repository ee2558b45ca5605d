#include "cascadefuse/core.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cascadefuse {

void Constraints::validate() const {
    for (const auto& id : allow_models) {
        if (deny_models.count(id)) {
            throw std::invalid_argument("constraints: model '" + id +
                                        "' appears in both allow and deny sets");
        }
    }
    if (acceptance_threshold_delta &&
        (*acceptance_threshold_delta < 0.0 || *acceptance_threshold_delta > 1.0)) {
        throw std::invalid_argument("constraints: acceptance_threshold_delta outside [0,1]");
    }
}

bool Constraints::empty() const {
    return !max_cost && !max_latency_ms && required_capabilities.empty() &&
           allow_models.empty() && deny_models.empty() && !acceptance_threshold_delta;
}

void Query::validate() const {
    if (text.empty()) throw std::invalid_argument("query '" + id + "': text is empty");
    constraints.validate();
}

void ModelProfile::validate() const {
    if (id.empty()) throw std::invalid_argument("model profile with empty id");
    if (tier < 0) throw std::invalid_argument("model '" + id + "': tier must be >= 0");
    if (cost_per_call < 0 || cost_per_1k_input_tokens < 0 || cost_per_1k_output_tokens < 0) {
        throw std::invalid_argument("model '" + id + "': negative cost rate");
    }
    if (!(norm_sigma > 0)) {
        throw std::invalid_argument("model '" + id + "': norm_sigma must be > 0");
    }
    for (const auto& [label, v] : suitability) {
        if (v != 0 && v != 1) {
            throw std::invalid_argument("model '" + id + "': suitability['" + label +
                                        "'] must be 0 or 1");
        }
    }
}

double ModelProfile::call_cost(std::uint64_t input_tokens, std::uint64_t output_tokens) const {
    return cost_per_call +
           static_cast<double>(input_tokens) / 1000.0 * cost_per_1k_input_tokens +
           static_cast<double>(output_tokens) / 1000.0 * cost_per_1k_output_tokens;
}

ModelRegistry::ModelRegistry(std::vector<ModelProfile> models) : models_(std::move(models)) {
    for (std::size_t i = 0; i < models_.size(); ++i) {
        models_[i].validate();
        auto [it, inserted] = index_.emplace(models_[i].id, i);
        if (!inserted) {
            throw std::invalid_argument("registry: duplicate model id '" + models_[i].id + "'");
        }
    }
}

ModelRegistry ModelRegistry::from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw std::invalid_argument("registry: top-level JSON must be an array");
    std::vector<ModelProfile> models;
    models.reserve(doc.size());
    for (const auto& entry : doc) models.push_back(entry.get<ModelProfile>());
    return ModelRegistry(std::move(models));
}

ModelRegistry ModelRegistry::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("registry: cannot open '" + path + "'");
    nlohmann::json doc;
    in >> doc;
    return from_json(doc);
}

const ModelProfile* ModelRegistry::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &models_[it->second];
}

const ModelProfile& ModelRegistry::at(const std::string& id) const {
    const ModelProfile* p = find(id);
    if (!p) throw std::out_of_range("registry: unknown model id '" + id + "'");
    return *p;
}

void ModelRegistry::set_norm_stats(const std::string& id, double mu, double sigma) {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("registry: unknown model id '" + id + "'");
    if (!(sigma > 0)) throw std::invalid_argument("model '" + id + "': norm_sigma must be > 0");
    models_[it->second].norm_mu = mu;
    models_[it->second].norm_sigma = sigma;
}

bool cascade_order_less(const ModelProfile& a, const ModelProfile& b) {
    if (a.tier != b.tier) return a.tier < b.tier;
    if (a.cost_per_1k_output_tokens != b.cost_per_1k_output_tokens) {
        return a.cost_per_1k_output_tokens < b.cost_per_1k_output_tokens;
    }
    return a.id < b.id;
}

std::vector<ModelProfile> filter_by_constraints(const std::vector<ModelProfile>& models,
                                                const Constraints& c) {
    std::vector<ModelProfile> out;
    out.reserve(models.size());
    for (const auto& m : models) {
        if (c.deny_models.count(m.id)) continue;
        if (!c.allow_models.empty() && !c.allow_models.count(m.id)) continue;
        bool capable = std::all_of(
            c.required_capabilities.begin(), c.required_capabilities.end(),
            [&](const std::string& cap) { return m.capabilities.count(cap) != 0; });
        if (!capable) continue;
        out.push_back(m);
    }
    return out;
}

std::vector<Subproblem> IdentityDecomposer::split(const Query& query) const {
    Subproblem s;
    s.parent_id = query.id;
    s.index = 0;
    s.text = query.text;
    s.constraints = query.constraints;
    return {std::move(s)};
}

std::vector<Subproblem> DelimiterDecomposer::split(const Query& query) const {
    std::vector<Subproblem> out;
    std::size_t start = 0;
    while (start <= query.text.size()) {
        std::size_t pos = query.text.find(delimiter_, start);
        std::string piece = query.text.substr(
            start, pos == std::string::npos ? std::string::npos : pos - start);
        if (!piece.empty()) {
            Subproblem s;
            s.parent_id = query.id;
            s.index = out.size();
            s.text = std::move(piece);
            s.constraints = query.constraints;
            out.push_back(std::move(s));
        }
        if (pos == std::string::npos) break;
        start = pos + delimiter_.size();
    }
    return out;
}

std::vector<Subproblem> decompose(const Query& query, const Decomposer& decomposer) {
    query.validate();
    std::vector<Subproblem> subs;
    try {
        subs = decomposer.split(query);
    } catch (const std::exception& e) {
        throw DecomposeError(query.id, e.what());
    }
    if (subs.empty()) {
        throw DecomposeError(query.id, "decomposer '" + decomposer.name() +
                                           "' produced no subproblems");
    }
    for (std::size_t i = 0; i < subs.size(); ++i) {
        subs[i].parent_id = query.id;
        subs[i].index = i;
        if (subs[i].text.empty()) {
            throw DecomposeError(query.id, "subproblem " + std::to_string(i) + " is empty");
        }
    }
    return subs;
}

const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::Taxonomy: return "taxonomy";
        case Provenance::Learned: return "learned";
        case Provenance::Hybrid: return "hybrid";
    }
    return "unknown";
}

nlohmann::json RoutingDecision::to_json() const {
    nlohmann::json j;
    j["models"] = models;
    j["scores"] = scores;
    j["provenance"] = to_string(provenance);
    j["labels"] = labels;
    j["label_probs"] = label_probs;
    j["top_label_prob"] = top_label_prob;
    if (provenance == Provenance::Hybrid) {
        j["taxonomy_set"] = taxonomy_set;
        j["learned_set"] = learned_set;
        j["union_truncated"] = union_truncated;
    }
    j["no_feasible"] = no_feasible;
    if (!clamped_scores.empty()) j["clamped_scores"] = clamped_scores;
    return j;
}

namespace {

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const Constraints& c) {
    j = nlohmann::json::object();
    if (c.max_cost) j["max_cost"] = *c.max_cost;
    if (c.max_latency_ms) j["max_latency_ms"] = *c.max_latency_ms;
    if (!c.required_capabilities.empty()) j["required_capabilities"] = c.required_capabilities;
    if (!c.allow_models.empty()) j["allow_models"] = c.allow_models;
    if (!c.deny_models.empty()) j["deny_models"] = c.deny_models;
    if (c.acceptance_threshold_delta) {
        j["acceptance_threshold_delta"] = *c.acceptance_threshold_delta;
    }
}

void from_json(const nlohmann::json& j, Constraints& c) {
    c = Constraints{};
    read_optional(j, "max_cost", c.max_cost);
    read_optional(j, "max_latency_ms", c.max_latency_ms);
    if (j.contains("required_capabilities")) {
        j.at("required_capabilities").get_to(c.required_capabilities);
    }
    if (j.contains("allow_models")) j.at("allow_models").get_to(c.allow_models);
    if (j.contains("deny_models")) j.at("deny_models").get_to(c.deny_models);
    read_optional(j, "acceptance_threshold_delta", c.acceptance_threshold_delta);
    c.validate();
}

void to_json(nlohmann::json& j, const ModelProfile& p) {
    j = nlohmann::json{{"id", p.id},
                       {"tier", p.tier},
                       {"cost_per_call", p.cost_per_call},
                       {"cost_per_1k_input_tokens", p.cost_per_1k_input_tokens},
                       {"cost_per_1k_output_tokens", p.cost_per_1k_output_tokens},
                       {"capabilities", p.capabilities},
                       {"suitability", p.suitability},
                       {"supports_logits", p.supports_logits},
                       {"norm_mu", p.norm_mu},
                       {"norm_sigma", p.norm_sigma}};
}

void from_json(const nlohmann::json& j, ModelProfile& p) {
    p = ModelProfile{};
    j.at("id").get_to(p.id);
    j.at("tier").get_to(p.tier);
    if (j.contains("cost_per_call")) j.at("cost_per_call").get_to(p.cost_per_call);
    if (j.contains("cost_per_1k_input_tokens")) {
        j.at("cost_per_1k_input_tokens").get_to(p.cost_per_1k_input_tokens);
    }
    if (j.contains("cost_per_1k_output_tokens")) {
        j.at("cost_per_1k_output_tokens").get_to(p.cost_per_1k_output_tokens);
    }
    if (j.contains("capabilities")) j.at("capabilities").get_to(p.capabilities);
    if (j.contains("suitability")) j.at("suitability").get_to(p.suitability);
    if (j.contains("supports_logits")) j.at("supports_logits").get_to(p.supports_logits);
    if (j.contains("norm_mu")) j.at("norm_mu").get_to(p.norm_mu);
    if (j.contains("norm_sigma")) j.at("norm_sigma").get_to(p.norm_sigma);
    p.validate();
}

}  // namespace cascadefuse
