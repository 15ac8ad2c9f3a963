#include "improvolve/mutation_service.hpp"

#include <httplib.h>

#include <cstdlib>
#include <fstream>

namespace improvolve::mutation {

EndpointConfig EndpointConfig::from_json(const json& j) {
    EndpointConfig c;
    c.base_url = j.at("base_url").get<std::string>();
    c.model = j.value("model", std::string{});
    c.temperature = j.value("temperature", 1.0);
    c.api_key_env = j.value("api_key_env", std::string{});
    c.timeout = std::chrono::seconds(j.value("timeout_s", 600));
    if (c.base_url.empty()) throw InvalidArgument("endpoint: empty base_url");
    return c;
}

EndpointConfig EndpointConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open endpoint config " + path.string());
    return from_json(json::parse(in));
}

std::string to_string(FailureKind k) {
    switch (k) {
    case FailureKind::network:
        return "network";
    case FailureKind::bad_response:
        return "bad_response";
    case FailureKind::no_code_block:
        return "no_code_block";
    }
    return "network";
}

ServiceError::ServiceError(FailureKind kind, const std::string& message)
    : evolution::MutationFailed(to_string(kind) + ": " + message), kind_(kind) {}

std::optional<std::string> extract_first_code_block(const std::string& text) {
    const auto open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    const auto body = text.find('\n', open);
    if (body == std::string::npos) return std::nullopt;
    const auto close = text.find("```", body + 1);
    if (close == std::string::npos) return std::nullopt;
    return text.substr(body + 1, close - body - 1);
}

json build_chat_body(const MutationRequest& req, const EndpointConfig& cfg) {
    if (req.parent_sources.empty()) throw InvalidArgument("mutation request needs at least one parent");
    std::string user = "Improve the following program. Reply with the complete new program in a single fenced code "
                       "block.\n\n";
    for (std::size_t i = 0; i < req.parent_sources.size(); ++i) {
        user += "Parent " + std::to_string(i + 1) + ":\n```python\n" + req.parent_sources[i] + "\n```\n\n";
    }
    user += "Context:\n" + req.context + "\n";
    return json{{"model", cfg.model},
                {"temperature", cfg.temperature},
                {"messages",
                 {{{"role", "system"}, {"content", req.constraints}}, {{"role", "user"}, {"content", user}}}}};
}

namespace {

// Splits http://host:port/prefix into the client address and the path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ServiceError(FailureKind::network, "base_url needs a scheme: " + url);
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, ""};
    std::string prefix = url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, slash), prefix};
}

} // namespace

std::string mutation_service_call(const MutationRequest& req, const EndpointConfig& cfg) {
    const auto [address, prefix] = split_url(cfg.base_url);
    httplib::Client client(address);
    if (!client.is_valid()) throw ServiceError(FailureKind::network, "unsupported endpoint " + cfg.base_url);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(cfg.timeout);
    client.set_write_timeout(std::chrono::seconds(60));

    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str())) headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const auto res = client.Post(prefix + "/chat/completions", headers, build_chat_body(req, cfg).dump(),
                                 "application/json");
    if (!res) throw ServiceError(FailureKind::network, httplib::to_string(res.error()));
    if (res->status != 200) throw ServiceError(FailureKind::network, "HTTP " + std::to_string(res->status));

    std::string content;
    try {
        const auto body = json::parse(res->body);
        content = body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw ServiceError(FailureKind::bad_response, e.what());
    }
    auto code = extract_first_code_block(content);
    if (!code) throw ServiceError(FailureKind::no_code_block, "reply contains no fenced code block");
    return *code;
}

std::string interface_constraints(const std::string& problem) {
    if (problem == "hex") {
        return "Write a Python class Improver(hex_num, seed) with methods generate_config(seed=None) returning "
               "(centers of shape (hex_num, 2), angles of shape (hex_num,)), improve(input_config, seed=None) and "
               "perturb(input_config, intensity, seed=None), each returning a configuration of the same shapes. "
               "Unit regular hexagons must not overlap. Define entrypoint() returning Improver.";
    }
    return "Write a Python class Improver(seed) with methods generate_config(seed=None) returning a 1-D array of "
           "non-negative step heights, improve(input_f) and perturb(input_f, intensity, seed=None), each returning a "
           "non-negative 1-D array. The goal is to maximize |f*f|_2^2 / (|f*f|_1 |f*f|_inf). Define entrypoint() "
           "returning Improver.";
}

ServiceMutator::ServiceMutator(EndpointConfig cfg, evolution::ProblemSpec problem, std::filesystem::path candidate_root,
                               std::vector<std::string> shim_command)
    : cfg_(std::move(cfg)), problem_(std::move(problem)), root_(std::move(candidate_root)), shim_(std::move(shim_command)) {
    if (shim_.empty()) throw InvalidArgument("shim command is empty");
}

evolution::Payload ServiceMutator::mutate(const evolution::MutationContext& ctx) {
    MutationRequest req;
    for (const auto* p : ctx.parents) {
        if (const auto* ext = std::get_if<evolution::ExternalPayload>(&p->payload)) {
            req.parent_sources.push_back(ext->source);
        } else {
            req.parent_sources.push_back("# built-in operator triple, parameters:\n# " +
                                         std::get<params::ParamSet>(p->payload).to_json().dump());
        }
    }
    req.context = ctx.describe();
    req.constraints = interface_constraints(problem_.problem);

    std::string source;
    try {
        source = mutation_service_call(req, cfg_);
    } catch (const ServiceError& e) {
        ++failures[e.kind()];
        throw;
    }

    const auto dir = std::filesystem::absolute(root_ / ctx.child_id);
    std::filesystem::create_directories(dir);
    const auto file = dir / "candidate.py";
    {
        std::ofstream out(file);
        if (!out) throw evolution::MutationFailed("cannot write " + file.string());
        out << source;
    }
    evolution::ExternalPayload ext;
    ext.source = source;
    ext.launch.working_dir = dir;
    ext.launch.command = shim_;
    ext.launch.command.insert(ext.launch.command.end(), {"--source", file.string(), "--problem", problem_.problem});
    if (problem_.problem == "hex") {
        ext.launch.command.insert(ext.launch.command.end(), {"--n", std::to_string(problem_.n)});
    } else {
        ext.launch.command.insert(ext.launch.command.end(), {"--resolution", std::to_string(problem_.resolution)});
    }
    ext.launch.command.insert(ext.launch.command.end(), {"--seed", std::to_string(ctx.seed)});
    std::ofstream(dir / "launch.json") << ext.launch.to_json().dump(1) << '\n';
    return ext;
}

} // namespace improvolve::mutation
