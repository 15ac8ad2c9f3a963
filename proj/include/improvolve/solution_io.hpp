#pragma once

#include "improvolve/aci_problem.hpp"
#include "improvolve/hex_problem.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <variant>

/// JSON solution files, shared by the CLI and the wire protocol.
///
///   {"problem":"hex","n":2,"centers":[[x,y],...],"angles":[...]}
///   {"problem":"aci","values":[...]}
///
/// Readers also accept {"file": path} in place of an inline object.
namespace improvolve::io {

using nlohmann::json;
using Solution = std::variant<hex::HexConfig, aci::StepFunction>;

/// ACI payloads above this many samples are written to a side file on the wire.
inline constexpr std::size_t kInlineSampleLimit = 65536;

json to_json(const hex::HexConfig& c);
json to_json(const aci::StepFunction& f);
json to_json(const Solution& s);

/// Structural decoding only: shapes and finiteness. Throws MalformedSolution.
hex::HexConfig hex_from_json(const json& j, std::optional<int> expected_n = std::nullopt);
aci::StepFunction aci_from_json(const json& j);
Solution solution_from_json(const json& j);

std::string problem_name(const Solution& s);

Solution read_solution_file(const std::filesystem::path& path);
void write_solution_file(const std::filesystem::path& path, const Solution& s);

/// Inline JSON, or a {"file": path} reference under `spill_dir` for large ACI payloads.
json to_wire(const Solution& s, const std::filesystem::path& spill_dir);

} // namespace improvolve::io
