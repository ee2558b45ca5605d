#include "cascadefuse/provider.hpp"

#include <cmath>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cascadefuse/signals.hpp"

namespace cascadefuse {

std::uint64_t count_tokens(std::string_view text) {
    std::uint64_t n = 0;
    bool in_token = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

ProviderResponse MockTextProvider::render(const Rule& rule,
                                          const GenerationRequest& request) const {
    if (rule.fail) {
        throw ProviderError("mock provider failure for prompt rule '" + rule.prompt_contains +
                            "'");
    }
    ProviderResponse resp;
    resp.text = rule.response;
    if (rule.self_conf) {
        std::ostringstream marker;
        marker << " [[conf=" << *rule.self_conf << "]]";
        resp.text += marker.str();
    }
    resp.input_tokens = count_tokens(request.prompt);
    resp.output_tokens = count_tokens(resp.text);
    if (request.want_logprobs) {
        double lp = std::log(std::clamp(rule.token_prob, 1e-9, 1.0));
        resp.logprobs = std::vector<double>(std::max<std::uint64_t>(resp.output_tokens, 1), lp);
    }
    return resp;
}

ProviderResponse MockTextProvider::generate(const GenerationRequest& request) const {
    for (const auto& rule : rules_) {
        if (request.prompt.find(rule.prompt_contains) != std::string::npos) {
            return render(rule, request);
        }
    }
    return render(fallback_, request);
}

std::shared_ptr<MockTextProvider> MockTextProvider::from_json(const nlohmann::json& params) {
    auto parse_rule = [](const nlohmann::json& j) {
        Rule rule;
        rule.prompt_contains = j.value("prompt_contains", "");
        rule.response = j.value("response", "");
        rule.token_prob = j.value("token_prob", 0.9);
        if (j.contains("self_conf")) rule.self_conf = j.at("self_conf").get<double>();
        rule.fail = j.value("fail", false);
        return rule;
    };
    std::vector<Rule> rules;
    if (params.contains("rules")) {
        for (const auto& j : params.at("rules")) rules.push_back(parse_rule(j));
    }
    Rule fallback;
    fallback.response = "no canned answer";
    fallback.token_prob = 0.5;
    if (params.contains("default")) fallback = parse_rule(params.at("default"));
    return std::make_shared<MockTextProvider>(std::move(rules), std::move(fallback));
}

HttpTextProvider::HttpTextProvider(std::string host, int port, std::string path, int timeout_sec)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_sec_(timeout_sec) {}

ProviderResponse HttpTextProvider::generate(const GenerationRequest& request) const {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(timeout_sec_);
    client.set_read_timeout(timeout_sec_);

    nlohmann::json body{{"prompt", request.prompt},
                        {"max_tokens", request.max_tokens},
                        {"want_logprobs", request.want_logprobs}};
    auto res = client.Post(path_.c_str(), body.dump(), "application/json");
    if (!res) {
        throw ProviderError("http provider " + host_ + ":" + std::to_string(port_) +
                            ": no response");
    }
    if (res->status != 200) {
        throw ProviderError("http provider " + host_ + ":" + std::to_string(port_) +
                            ": status " + std::to_string(res->status));
    }
    nlohmann::json doc = nlohmann::json::parse(res->body);
    ProviderResponse out;
    doc.at("text").get_to(out.text);
    if (doc.contains("logprobs") && !doc.at("logprobs").is_null()) {
        out.logprobs = doc.at("logprobs").get<std::vector<double>>();
    }
    const auto& usage = doc.at("usage");
    usage.at("input_tokens").get_to(out.input_tokens);
    usage.at("output_tokens").get_to(out.output_tokens);
    return out;
}

void ProviderSet::bind(const std::string& model_id,
                       std::shared_ptr<const TextProvider> provider) {
    providers_[model_id] = std::move(provider);
}

const TextProvider& ProviderSet::provider_for(const std::string& model_id) const {
    auto it = providers_.find(model_id);
    if (it == providers_.end()) {
        throw ProviderError("no provider bound for model '" + model_id + "'");
    }
    return *it->second;
}

bool ProviderSet::has(const std::string& model_id) const {
    return providers_.count(model_id) != 0;
}

GenerationResult run_model(const ModelProfile& profile, const TextProvider& provider,
                           const std::string& prompt, int max_tokens) {
    GenerationRequest request;
    request.prompt = prompt;
    request.max_tokens = max_tokens;
    request.want_logprobs = profile.supports_logits;

    ProviderResponse resp = provider.generate(request);

    GenerationResult result;
    result.model_id = profile.id;
    result.text = std::move(resp.text);
    if (profile.supports_logits && resp.logprobs) result.token_logprobs = std::move(resp.logprobs);
    result.self_conf_markers = extract_self_confidence(result.text);
    result.input_tokens = resp.input_tokens;
    result.output_tokens = resp.output_tokens;
    result.cost = profile.call_cost(result.input_tokens, result.output_tokens);
    return result;
}

}  // namespace cascadefuse
