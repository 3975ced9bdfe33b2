#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "proxycot/mock_endpoint.hpp"

namespace {
proxycot::MockEndpoint* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic OpenAI-compatible mock endpoint", "proxycot_mock_server"};
    std::string script_path;
    int port = 0;
    std::string host = "127.0.0.1";
    app.add_option("--script", script_path, "Mock script (JSON)");
    app.add_option("--port", port, "Port to listen on (0 picks a free one)");
    app.add_option("--host", host, "Address to bind");
    CLI11_PARSE(app, argc, argv);

    try {
        proxycot::MockScript script;
        if (!script_path.empty())
            script = proxycot::mock_script_from_json(proxycot::json::parse(proxycot::read_file(script_path)));
        proxycot::MockEndpoint server(std::move(script), port, host);
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cout << proxycot::json{{"base_url", server.base_url()}, {"port", server.port()}}.dump() << std::endl;
        server.wait();
    } catch (const std::exception& e) {
        std::cerr << proxycot::json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
