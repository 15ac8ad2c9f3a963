#pragma once

#include "improvolve/aci_problem.hpp"
#include "improvolve/hex_problem.hpp"

#include <json.hpp>

#include <string>
#include <variant>
#include <vector>

/// Named, bounded hyperparameters of the built-in operator triples. This is
/// the payload that the built-in mutator evolves.
namespace improvolve::params {

using nlohmann::json;

struct NumericField {
    std::string name;
    double value = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool integer = false;
};

struct ChoiceField {
    std::string name;
    std::string value;
    std::vector<std::string> choices;
};

using Field = std::variant<NumericField, ChoiceField>;

const std::string& field_name(const Field& f);

class ParamSet {
public:
    std::string problem; ///< "hex" or "aci"
    std::vector<Field> fields;

    const Field& at(const std::string& name) const;
    Field& at(const std::string& name);
    double number(const std::string& name) const;
    const std::string& choice(const std::string& name) const;

    /// Clamps numbers, rounds integers, repairs cross-field constraints.
    void normalize();

    /// {"problem": ..., "values": {name: value}}.
    json to_json() const;
    friend bool operator==(const ParamSet&, const ParamSet&);
};

ParamSet hex_defaults();
ParamSet aci_defaults();
ParamSet defaults_for(const std::string& problem);

/// Starts from the defaults and overrides the named values; unknown keys
/// and out-of-range values throw InvalidArgument.
ParamSet from_json(const json& j);

hex::OperatorParams to_hex(const ParamSet& p);
aci::OperatorParams to_aci(const ParamSet& p);

} // namespace improvolve::params
