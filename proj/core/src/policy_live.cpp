// Live chat-completions transport; kept in its own TU because cpp-httplib is
// a heavy single-header include.

#include "nexus/error.hpp"
#include "nexus/policy.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace nexus {

namespace {

// Splits "http://host:port/path" into (scheme://host:port, /path).
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos)
        fail(Errc::config_error, "endpoint must include a scheme: " + endpoint);
    auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {endpoint, "/v1/chat/completions"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

} // namespace

ModelResponse LivePolicy::complete(const ModelRequest& request) {
    if (request.decision_point == DecisionPoint::react_step && request.transcript.empty())
        fail(Errc::policy_failure, "react_step request with empty transcript");
    auto [base, path] = split_endpoint(options_.endpoint);
    httplib::Client client(base);
    client.set_read_timeout(options_.timeout_seconds, 0);
    client.set_connection_timeout(options_.timeout_seconds, 0);

    json messages = json::array();
    if (!request.system_context.empty())
        messages.push_back({{"role", "system"}, {"content", request.system_context}});
    for (const auto& message : request.transcript) {
        std::string role = message.role == "observation" ? "user" : message.role;
        messages.push_back({{"role", role}, {"content", message.content}});
    }
    json body;
    if (!options_.model.empty())
        body["model"] = options_.model;
    body["messages"] = messages;
    body["metadata"] = {{"agent", agent_role_to_string(request.agent)},
                        {"decision_point", decision_point_to_string(request.decision_point)}};

    httplib::Headers headers;
    if (!options_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + options_.api_key);

    auto result = client.Post(path, headers, body.dump(), "application/json");
    if (!result)
        fail(Errc::transport_error, "no response from " + options_.endpoint);
    if (result->status < 200 || result->status >= 300)
        fail(Errc::transport_error,
             "endpoint returned HTTP " + std::to_string(result->status) + ": " + result->body);

    json reply;
    try {
        reply = json::parse(result->body);
    } catch (const json::exception& e) {
        fail(Errc::transport_error, std::string("unparseable completion body: ") + e.what());
    }

    ModelResponse response;
    try {
        if (reply.contains("choices"))
            response.content =
                reply.at("choices").at(0).at("message").at("content").get<std::string>();
        else
            response.content = reply.at("content").get<std::string>();
        if (reply.contains("usage")) {
            response.usage.prompt_tokens = reply.at("usage").value("prompt_tokens", 0L);
            response.usage.completion_tokens = reply.at("usage").value("completion_tokens", 0L);
        }
    } catch (const json::exception& e) {
        fail(Errc::transport_error, std::string("unexpected completion shape: ") + e.what());
    }
    response.usage.cost =
        static_cast<double>(response.usage.prompt_tokens) * options_.prompt_price_per_token +
        static_cast<double>(response.usage.completion_tokens) *
            options_.completion_price_per_token;
    return response;
}

} // namespace nexus
