#pragma once

#include "improvolve/evolution.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

/// Chat-completions client that turns parent programs into a child program.
namespace improvolve::mutation {

using nlohmann::json;

struct MutationRequest {
    std::vector<std::string> parent_sources;
    std::string context;
    std::string constraints;
};

struct EndpointConfig {
    /// e.g. http://127.0.0.1:8000/v1 ; the request goes to <base_url>/chat/completions.
    std::string base_url;
    std::string model;
    double temperature = 1.0;
    /// Environment variable holding a bearer token, if any.
    std::string api_key_env;
    std::chrono::seconds timeout{600};

    static EndpointConfig from_json(const json& j);
    static EndpointConfig load(const std::filesystem::path& path);
};

enum class FailureKind { network, bad_response, no_code_block };

std::string to_string(FailureKind k);

class ServiceError : public evolution::MutationFailed {
public:
    ServiceError(FailureKind kind, const std::string& message);
    FailureKind kind() const { return kind_; }

private:
    FailureKind kind_;
};

/// First ``` fenced block (language tag dropped), or nothing.
std::optional<std::string> extract_first_code_block(const std::string& text);

/// The chat messages sent for a request.
json build_chat_body(const MutationRequest& req, const EndpointConfig& cfg);

/// Returns the child source. Throws ServiceError.
std::string mutation_service_call(const MutationRequest& req, const EndpointConfig& cfg);

/// Interface text every child program must satisfy, per problem.
std::string interface_constraints(const std::string& problem);

/// Mutator that asks the service for a child and stores it as an external candidate.
class ServiceMutator : public evolution::MutationOperator {
public:
    ServiceMutator(EndpointConfig cfg, evolution::ProblemSpec problem, std::filesystem::path candidate_root,
                   std::vector<std::string> shim_command);
    evolution::Payload mutate(const evolution::MutationContext& ctx) override;

    /// Offspring skipped per failure kind, for reporting.
    std::map<FailureKind, std::size_t> failures;

private:
    EndpointConfig cfg_;
    evolution::ProblemSpec problem_;
    std::filesystem::path root_;
    std::vector<std::string> shim_;
};

} // namespace improvolve::mutation
