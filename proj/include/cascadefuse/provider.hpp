#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cascadefuse/core.hpp"

namespace cascadefuse {

struct GenerationRequest {
    std::string prompt;
    int max_tokens = 256;
    bool want_logprobs = false;
};

struct ProviderResponse {
    std::string text;
    std::optional<std::vector<double>> logprobs;
    std::uint64_t input_tokens = 0;
    std::uint64_t output_tokens = 0;
};

struct ProviderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class TextProvider {
public:
    virtual ~TextProvider() = default;
    virtual ProviderResponse generate(const GenerationRequest& request) const = 0;
};

std::uint64_t count_tokens(std::string_view text);

/// Deterministic canned provider. The first rule whose `prompt_contains`
/// substring matches wins; otherwise the default response applies. Token
/// counts are whitespace-separated words. Logprobs, when requested and
/// enabled, are emitted as one value per output token with the configured
/// per-token probability.
class MockTextProvider final : public TextProvider {
public:
    struct Rule {
        std::string prompt_contains;
        std::string response;
        double token_prob = 0.9;               // per-token probability for logprobs
        std::optional<double> self_conf;       // appends one [[conf=X]] marker
        bool fail = false;                     // simulate a provider outage
    };

    MockTextProvider(std::vector<Rule> rules, Rule fallback)
        : rules_(std::move(rules)), fallback_(std::move(fallback)) {}

    ProviderResponse generate(const GenerationRequest& request) const override;

    static std::shared_ptr<MockTextProvider> from_json(const nlohmann::json& params);

private:
    ProviderResponse render(const Rule& rule, const GenerationRequest& request) const;

    std::vector<Rule> rules_;
    Rule fallback_;
};

/// Generic HTTP text-generation backend.
/// Request:  POST <path> {"prompt", "max_tokens", "want_logprobs"}
/// Response: {"text", "logprobs"?, "usage": {"input_tokens", "output_tokens"}}
class HttpTextProvider final : public TextProvider {
public:
    HttpTextProvider(std::string host, int port, std::string path = "/generate",
                     int timeout_sec = 10);

    ProviderResponse generate(const GenerationRequest& request) const override;

private:
    std::string host_;
    int port_;
    std::string path_;
    int timeout_sec_;
};

/// Per-model provider bindings.
class ProviderSet {
public:
    void bind(const std::string& model_id, std::shared_ptr<const TextProvider> provider);
    const TextProvider& provider_for(const std::string& model_id) const;
    bool has(const std::string& model_id) const;

private:
    std::map<std::string, std::shared_ptr<const TextProvider>> providers_;
};

/// Runs one generation through the model's provider and prices it with the
/// profile's rates. Logprobs are requested (and kept) only when the profile
/// supports them.
GenerationResult run_model(const ModelProfile& profile, const TextProvider& provider,
                           const std::string& prompt, int max_tokens = 256);

}  // namespace cascadefuse
