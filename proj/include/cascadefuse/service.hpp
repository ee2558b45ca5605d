#pragma once

#include <memory>
#include <string>

#include "cascadefuse/engine.hpp"

namespace httplib {
class Server;
}

namespace cascadefuse {

/// HTTP front end:
///   POST /route        {"id"?, "text", "constraints"?} -> {"answer"|..., "trace_id"}
///   GET  /traces/{id}  stored trace lines for that query
class Service {
public:
    explicit Service(std::shared_ptr<Engine> engine);
    ~Service();

    /// Blocks until stop() is called or the listener fails.
    bool listen(const std::string& host, int port);
    /// Binds an ephemeral port and starts serving on a background thread
    /// inside httplib; returns the bound port. Used by tests.
    int listen_on_any_port(const std::string& host);
    void wait_until_ready() const;
    void stop();

private:
    void wire_routes();

    std::shared_ptr<Engine> engine_;
    std::unique_ptr<httplib::Server> server_;
    std::uint64_t auto_id_ = 0;
    std::mutex id_mutex_;
};

}  // namespace cascadefuse
