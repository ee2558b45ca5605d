#include "cascadefuse/service.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace cascadefuse {

Service::Service(std::shared_ptr<Engine> engine)
    : engine_(std::move(engine)), server_(std::make_unique<httplib::Server>()) {
    wire_routes();
}

Service::~Service() { stop(); }

void Service::wire_routes() {
    server_->Post("/route", [this](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json reply;
        try {
            nlohmann::json body = nlohmann::json::parse(req.body);
            Query query;
            if (body.contains("id") && !body["id"].is_null()) {
                query.id = body["id"].get<std::string>();
            } else {
                std::lock_guard<std::mutex> lock(id_mutex_);
                query.id = "req-" + std::to_string(++auto_id_);
            }
            body.at("text").get_to(query.text);
            if (body.contains("constraints")) {
                body.at("constraints").get_to(query.constraints);
            }
            RouteOptions options;
            if (body.contains("policy")) {
                std::string p = body["policy"].get<std::string>();
                if (p == "taxonomy") options.force_policy = Provenance::Taxonomy;
                else if (p == "learned") options.force_policy = Provenance::Learned;
                else if (p == "hybrid") options.force_policy = Provenance::Hybrid;
                else throw std::invalid_argument("unknown policy '" + p + "'");
            }
            if (body.contains("max_cascades")) {
                options.max_cascades = body["max_cascades"].get<int>();
            }
            RouteOutcome outcome = engine_->route_request(query, options);
            reply = {{"trace_id", outcome.trace_id}, {"ok", outcome.ok}};
            if (outcome.ok) {
                reply["answer"] = outcome.answer;
                reply["model"] = outcome.answer_model;
            } else {
                reply["fallback_reason"] = outcome.fallback_reason;
            }
            res.status = 200;
        } catch (const std::exception& e) {
            reply = {{"error", e.what()}};
            res.status = 400;
        }
        res.set_content(reply.dump(), "application/json");
    });

    server_->Get(R"(/traces/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        std::string id = req.matches[1];
        auto stored = engine_->stored_trace(id);
        if (!stored) {
            res.status = 404;
            res.set_content(nlohmann::json{{"error", "unknown trace id '" + id + "'"}}.dump(),
                            "application/json");
            return;
        }
        res.status = 200;
        res.set_content(stored->dump(), "application/json");
    });

    server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.status = 200;
        res.set_content("ok", "text/plain");
    });
}

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }

int Service::listen_on_any_port(const std::string& host) {
    int port = server_->bind_to_any_port(host);
    std::thread([this]() { server_->listen_after_bind(); }).detach();
    return port;
}

void Service::wait_until_ready() const {
    while (!server_->is_running()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
}

void Service::stop() {
    if (server_ && server_->is_running()) server_->stop();
}

}  // namespace cascadefuse
