#include "improvolve/solution_io.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace improvolve::io {

namespace {

double finite_number(const json& v, const char* what) {
    if (!v.is_number()) throw MalformedSolution(std::string(what) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw MalformedSolution(std::string(what) + ": non-finite value");
    return d;
}

const json& field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw MalformedSolution(std::string("missing field '") + key + "'");
    return j.at(key);
}

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MalformedSolution("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw MalformedSolution("parse error in " + path.string() + ": " + e.what());
    }
}

// {"file": path} indirection.
json resolve(const json& j) {
    if (j.is_object() && j.contains("file") && !j.contains("problem")) {
        if (!j.at("file").is_string()) throw MalformedSolution("'file' must be a string");
        return load_json_file(j.at("file").get<std::string>());
    }
    return j;
}

} // namespace

json to_json(const hex::HexConfig& c) {
    json centers = json::array();
    for (const auto& p : c.centers) centers.push_back({p.x, p.y});
    return json{{"problem", "hex"}, {"n", c.size()}, {"centers", centers}, {"angles", c.angles}};
}

json to_json(const aci::StepFunction& f) { return json{{"problem", "aci"}, {"values", f.values}}; }

json to_json(const Solution& s) {
    return std::visit([](const auto& v) { return to_json(v); }, s);
}

hex::HexConfig hex_from_json(const json& raw, std::optional<int> expected_n) {
    const json j = resolve(raw);
    if (field(j, "problem") != "hex") throw MalformedSolution("not a hex solution");
    const json& n_field = field(j, "n");
    if (!n_field.is_number_integer() || n_field.get<long long>() < 1) {
        throw MalformedSolution("'n' must be a positive integer");
    }
    const auto n = n_field.get<long long>();
    if (expected_n && n != *expected_n) {
        throw MalformedSolution("expected n=" + std::to_string(*expected_n) + ", got n=" + std::to_string(n));
    }
    const json& centers = field(j, "centers");
    const json& angles = field(j, "angles");
    if (!centers.is_array() || static_cast<long long>(centers.size()) != n) {
        throw MalformedSolution("centers: expected shape (" + std::to_string(n) + ", 2), got " +
                                std::to_string(centers.is_array() ? centers.size() : 0) + " rows");
    }
    if (!angles.is_array() || static_cast<long long>(angles.size()) != n) {
        throw MalformedSolution("angles: expected shape (" + std::to_string(n) + ",), got " +
                                std::to_string(angles.is_array() ? angles.size() : 0));
    }
    hex::HexConfig c;
    for (const auto& row : centers) {
        if (!row.is_array() || row.size() != 2) throw MalformedSolution("centers: each row must be [x, y]");
        c.centers.push_back({finite_number(row[0], "centers"), finite_number(row[1], "centers")});
    }
    for (const auto& a : angles) c.angles.push_back(finite_number(a, "angles"));
    return c;
}

aci::StepFunction aci_from_json(const json& raw) {
    const json j = resolve(raw);
    if (field(j, "problem") != "aci") throw MalformedSolution("not an aci solution");
    const json& values = field(j, "values");
    if (!values.is_array() || values.empty()) throw MalformedSolution("values: expected a non-empty 1-D array");
    aci::StepFunction f;
    f.values.reserve(values.size());
    for (const auto& v : values) {
        if (v.is_array()) throw MalformedSolution("values: expected a 1-D array");
        f.values.push_back(finite_number(v, "values"));
    }
    return f;
}

Solution solution_from_json(const json& raw) {
    const json j = resolve(raw);
    const json& problem = field(j, "problem");
    if (problem == "hex") return hex_from_json(j);
    if (problem == "aci") return aci_from_json(j);
    throw MalformedSolution("unknown problem '" + problem.dump() + "'");
}

std::string problem_name(const Solution& s) { return std::holds_alternative<hex::HexConfig>(s) ? "hex" : "aci"; }

Solution read_solution_file(const std::filesystem::path& path) { return solution_from_json(load_json_file(path)); }

void write_solution_file(const std::filesystem::path& path, const Solution& s) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json(s).dump() << '\n';
}

json to_wire(const Solution& s, const std::filesystem::path& spill_dir) {
    const auto* f = std::get_if<aci::StepFunction>(&s);
    if (f == nullptr || f->size() <= kInlineSampleLimit) return to_json(s);
    static std::atomic<unsigned long> counter{0};
    std::filesystem::create_directories(spill_dir);
    const auto path = spill_dir / ("solution-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".json");
    write_solution_file(path, s);
    return json{{"file", path.string()}};
}

} // namespace improvolve::io
