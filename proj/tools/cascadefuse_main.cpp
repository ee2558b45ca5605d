#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cascadefuse/engine.hpp"
#include "cascadefuse/service.hpp"
#include "cascadefuse/sim.hpp"

namespace {

using namespace cascadefuse;

std::string require_config(const std::string& config_flag) {
    if (!config_flag.empty()) return config_flag;
    const char* env = std::getenv("CASCADEFUSE_CONFIG");
    if (env && *env) return env;
    throw CLI::ValidationError("--config", "missing (set --config or CASCADEFUSE_CONFIG)");
}

std::optional<Provenance> parse_policy_flag(const std::string& policy) {
    if (policy.empty()) return std::nullopt;
    if (policy == "taxonomy") return Provenance::Taxonomy;
    if (policy == "learned") return Provenance::Learned;
    if (policy == "hybrid") return Provenance::Hybrid;
    throw CLI::ValidationError("--policy", "expected taxonomy|learned|hybrid");
}

int cmd_route(const std::string& config, const std::string& text, const std::string& id,
              const std::string& policy, int max_cascades, const std::string& output) {
    auto engine = Engine::load(require_config(config));
    Query query;
    query.id = id.empty() ? "cli-1" : id;
    query.text = text;
    RouteOptions options;
    options.force_policy = parse_policy_flag(policy);
    if (max_cascades >= 0) options.max_cascades = max_cascades;

    RouteOutcome outcome = engine->route_request(query, options);
    nlohmann::json doc = outcome.to_json();
    if (!output.empty()) {
        std::ofstream out(output);
        out << doc.dump(2) << '\n';
    }
    if (outcome.ok) {
        std::cout << outcome.answer << '\n';
    } else {
        std::cout << "fallback: " << outcome.fallback_reason << '\n';
    }
    std::cerr << "trace_id=" << outcome.trace_id << " cost=" << outcome.total_cost << '\n';
    return outcome.ok ? 0 : 2;
}

int cmd_batch(const std::string& config, const std::string& input, const std::string& output,
              const std::string& policy, int max_cascades) {
    auto engine = Engine::load(require_config(config));
    std::istream* in = &std::cin;
    std::ifstream file;
    if (!input.empty() && input != "-") {
        file.open(input);
        if (!file) throw std::runtime_error("cannot open input '" + input + "'");
        in = &file;
    }
    std::ostream* out = &std::cout;
    std::ofstream out_file;
    if (!output.empty() && output != "-") {
        out_file.open(output);
        if (!out_file) throw std::runtime_error("cannot open output '" + output + "'");
        out = &out_file;
    }

    RouteOptions options;
    options.force_policy = parse_policy_flag(policy);
    if (max_cascades >= 0) options.max_cascades = max_cascades;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(*in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Query query;
        query.id = j.contains("id") ? j["id"].get<std::string>()
                                    : "batch-" + std::to_string(lineno);
        j.at("text").get_to(query.text);
        if (j.contains("constraints")) j.at("constraints").get_to(query.constraints);

        RouteOutcome outcome = engine->route_request(query, options);
        nlohmann::json result{{"id", query.id}, {"ok", outcome.ok}};
        if (outcome.ok) {
            result["answer"] = outcome.answer;
            result["model"] = outcome.answer_model;
        } else {
            result["fallback_reason"] = outcome.fallback_reason;
        }
        result["cost"] = outcome.total_cost;
        (*out) << result.dump() << '\n';
    }
    return 0;
}

int cmd_simulate(const std::string& pool_path, const std::string& dataset_path,
                 std::size_t queries, std::size_t train, std::uint64_t seed,
                 std::vector<std::string> policies, const std::string& output,
                 const std::string& csv, bool serial) {
    sim::SyntheticPool pool = pool_path.empty() ? sim::default_pool(seed)
                                                : sim::SyntheticPool::load(pool_path, seed);
    if (train > 0) pool.train_router(train, TrainConfig{0.004, 800, 0.0});

    std::vector<sim::SyntheticQuery> dataset = dataset_path.empty()
                                                   ? pool.make_queries(queries, "q-")
                                                   : sim::load_dataset(dataset_path);

    if (policies.empty()) {
        policies = {"taxonomy", "learned", "learned+1", "learned+2", "hybrid+2"};
    }
    std::vector<sim::PolicyReport> reports;
    for (const auto& name : policies) {
        sim::Policy policy = sim::Policy::parse(name);
        if ((policy.kind == sim::PolicyKind::LearnedOnly ||
             policy.kind == sim::PolicyKind::Hybrid) &&
            !pool.router()) {
            throw std::runtime_error("policy '" + name + "' needs --train N to fit the router");
        }
        reports.push_back(serial ? sim::evaluate_policy_serial(policy, dataset, pool)
                                 : sim::evaluate_policy(policy, dataset, pool));
    }

    std::cout << sim::render_table(reports);
    if (!output.empty()) {
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& r : reports) doc.push_back(r.to_json());
        std::ofstream out(output);
        out << doc.dump(2) << '\n';
        std::cerr << "report written to " << output << '\n';
    }
    if (!csv.empty() && !reports.empty()) {
        std::ofstream out(csv);
        out << sim::histogram_csv(reports.back());
        std::cerr << "cascade histogram written to " << csv << '\n';
    }
    return 0;
}

int cmd_train(const std::string& config, const std::string& data_path, const std::string& out_path,
              double lr, int epochs, double weight_decay) {
    auto engine = Engine::load(require_config(config));
    std::vector<TrainingExample> data = load_training_jsonl(data_path);
    std::vector<std::string> ids;
    for (const auto& m : engine->registry().models()) ids.push_back(m.id);

    TrainConfig cfg{lr, epochs, weight_decay};
    TrainedRouter router =
        train_router(data, cfg, engine->label_space(), engine->embedder(), ids);
    router.save(out_path);
    std::cout << "trained " << router.heads.size() << " heads on " << data.size()
              << " examples; loss " << router.initial_loss << " -> " << router.final_loss
              << '\n';
    return 0;
}

int cmd_validate(const std::string& config) {
    try {
        auto engine = Engine::load(require_config(config));
        std::cout << "ok: " << engine->registry().size() << " models, "
                  << engine->label_space().size() << " labels"
                  << (engine->has_learned_router() ? ", learned router loaded" : "") << '\n';
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 1;
    }
}

int cmd_serve(const std::string& config, const std::string& host, int port) {
    auto engine = Engine::load(require_config(config));
    Service service(engine);
    std::cerr << "listening on " << host << ":" << port << '\n';
    return service.listen(host, port) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascadefuse: cost-aware model routing with cascading and fusion"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config;
    app.add_option("--config", config, "engine config path (or CASCADEFUSE_CONFIG)");
    std::uint64_t seed = 1;
    app.add_option("--seed", seed, "simulation seed");
    int max_cascades = -1;
    app.add_option("--max-cascades", max_cascades, "override the configured cascade limit");
    std::string policy;
    app.add_option("--policy", policy, "routing policy: taxonomy|learned|hybrid");
    std::string output;
    app.add_option("--output", output, "output path");

    auto* route = app.add_subcommand("route", "route one query");
    std::string text, id;
    route->add_option("text", text, "query text")->required();
    route->add_option("--id", id, "query id");

    auto* batch = app.add_subcommand("batch", "route a JSON-lines stream of queries");
    std::string input;
    batch->add_option("--input", input, "JSONL input path (default stdin)");

    auto* simulate = app.add_subcommand("simulate", "run the synthetic benchmark harness");
    std::string pool_path, dataset_path, csv;
    std::size_t queries = 2000, train = 480;
    std::vector<std::string> sim_policies;
    simulate->add_option("--pool", pool_path, "pool spec JSON (default: built-in 8-model pool)");
    simulate->add_option("--dataset", dataset_path, "query dataset JSON (default: synthesized)");
    simulate->add_option("--queries", queries, "synthesized query count");
    simulate->add_option("--train", train, "router training stream size (0 disables)");
    simulate->add_option("--run-policy", sim_policies,
                         "policies to evaluate, e.g. taxonomy learned+1 hybrid+2 oracle all");
    simulate->add_option("--csv", csv, "write the cascade histogram CSV here");
    bool serial = false;
    simulate->add_flag("--serial", serial, "use the serial reference evaluator");

    auto* train_cmd = app.add_subcommand("train-router", "fit the learned router heads");
    std::string data_path, heads_out = "heads.json";
    double lr = 0.05, weight_decay = 1e-2;
    int epochs = 500;
    train_cmd->add_option("--data", data_path, "training examples (JSONL)")->required();
    train_cmd->add_option("--out", heads_out, "output heads JSON path");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--epochs", epochs, "epochs");
    train_cmd->add_option("--weight-decay", weight_decay, "L2 weight decay");

    auto* validate = app.add_subcommand("validate-config", "load and fully validate a config");

    auto* serve = app.add_subcommand("serve", "run the HTTP routing service");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port");

    CLI11_PARSE(app, argc, argv);

    try {
        if (route->parsed()) return cmd_route(config, text, id, policy, max_cascades, output);
        if (batch->parsed()) return cmd_batch(config, input, output, policy, max_cascades);
        if (simulate->parsed()) {
            return cmd_simulate(pool_path, dataset_path, queries, train, seed, sim_policies,
                                output, csv, serial);
        }
        if (train_cmd->parsed()) {
            return cmd_train(config, data_path, heads_out, lr, epochs, weight_decay);
        }
        if (validate->parsed()) return cmd_validate(config);
        if (serve->parsed()) return cmd_serve(config, host, port);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
