#include "improvolve/param_set.hpp"

#include <algorithm>
#include <cmath>

namespace improvolve::params {

const std::string& field_name(const Field& f) {
    return std::visit([](const auto& v) -> const std::string& { return v.name; }, f);
}

const Field& ParamSet::at(const std::string& name) const {
    for (const auto& f : fields) {
        if (field_name(f) == name) return f;
    }
    throw InvalidArgument("unknown parameter '" + name + "' for " + problem);
}

Field& ParamSet::at(const std::string& name) {
    return const_cast<Field&>(std::as_const(*this).at(name));
}

double ParamSet::number(const std::string& name) const {
    const auto* f = std::get_if<NumericField>(&at(name));
    if (f == nullptr) throw InvalidArgument("parameter '" + name + "' is not numeric");
    return f->value;
}

const std::string& ParamSet::choice(const std::string& name) const {
    const auto* f = std::get_if<ChoiceField>(&at(name));
    if (f == nullptr) throw InvalidArgument("parameter '" + name + "' is not a choice");
    return f->value;
}

void ParamSet::normalize() {
    for (auto& f : fields) {
        if (auto* n = std::get_if<NumericField>(&f)) {
            n->value = std::clamp(n->value, n->lower, n->upper);
            if (n->integer) n->value = std::round(n->value);
        }
    }
    if (problem == "aci") {
        auto& lo = std::get<NumericField>(at("min_bumps"));
        auto& hi = std::get<NumericField>(at("max_bumps"));
        if (hi.value < lo.value) std::swap(lo.value, hi.value);
    }
}

json ParamSet::to_json() const {
    json values = json::object();
    for (const auto& f : fields) {
        std::visit([&](const auto& v) { values[v.name] = v.value; }, f);
    }
    return json{{"problem", problem}, {"values", values}};
}

bool operator==(const ParamSet& a, const ParamSet& b) { return a.to_json() == b.to_json(); }

namespace {

NumericField real(std::string name, double v, double lo, double hi) { return {std::move(name), v, lo, hi, false}; }
NumericField integer(std::string name, double v, double lo, double hi) { return {std::move(name), v, lo, hi, true}; }

} // namespace

ParamSet hex_defaults() {
    const hex::OperatorParams d;
    ParamSet p;
    p.problem = "hex";
    p.fields = {
        real("generate_jitter", d.generate_jitter, 0.0, 0.5),
        real("perturb_center_scale", d.perturb_center_scale, 0.01, 1.0),
        real("teleport_threshold", d.teleport_threshold, 0.5, 1000.0),
        real("initial_penalty", d.improve.initial_penalty, 0.01, 1e4),
        real("penalty_growth", d.improve.penalty_growth, 1.5, 100.0),
        integer("rounds", d.improve.rounds, 1, 12),
        integer("max_iterations", d.improve.max_iterations, 20, 3000),
        real("bound_scale", d.improve.bound_scale, 1.0, 5.0),
        ChoiceField{"optimizer", hex::to_string(d.improve.mode), {"gradient", "sqp"}},
    };
    return p;
}

ParamSet aci_defaults() {
    const aci::OperatorParams d;
    ParamSet p;
    p.problem = "aci";
    p.fields = {
        integer("min_bumps", d.min_bumps, 1, 20),
        integer("max_bumps", d.max_bumps, 1, 20),
        real("structural_noise_cap", d.structural_noise_cap, 0.01, 2.0),
        integer("iterations_per_stage", d.improve.iterations_per_stage, 10, 10000),
        real("sharpness_max", d.improve.sharpness.back(), 10.0, 1e6),
        ChoiceField{"grid", aci::to_string(d.improve.mode), {"standard", "extended"}},
    };
    return p;
}

ParamSet defaults_for(const std::string& problem) {
    if (problem == "hex") return hex_defaults();
    if (problem == "aci") return aci_defaults();
    throw InvalidArgument("unknown problem '" + problem + "'");
}

ParamSet from_json(const json& j) {
    if (!j.is_object() || !j.contains("problem") || !j.at("problem").is_string()) {
        throw InvalidArgument("parameter set needs a 'problem' string");
    }
    ParamSet p = defaults_for(j.at("problem").get<std::string>());
    if (!j.contains("values")) return p;
    const json& values = j.at("values");
    if (!values.is_object()) throw InvalidArgument("'values' must be an object");
    for (const auto& [key, v] : values.items()) {
        auto& f = p.at(key);
        if (auto* n = std::get_if<NumericField>(&f)) {
            if (!v.is_number()) throw InvalidArgument("parameter '" + key + "' must be a number");
            const double x = v.get<double>();
            if (!(x >= n->lower && x <= n->upper)) throw InvalidArgument("parameter '" + key + "' out of range");
            n->value = n->integer ? std::round(x) : x;
        } else {
            auto& c = std::get<ChoiceField>(f);
            if (!v.is_string()) throw InvalidArgument("parameter '" + key + "' must be a string");
            const auto s = v.get<std::string>();
            if (std::find(c.choices.begin(), c.choices.end(), s) == c.choices.end()) {
                throw InvalidArgument("parameter '" + key + "': unknown choice '" + s + "'");
            }
            c.value = s;
        }
    }
    p.normalize();
    return p;
}

hex::OperatorParams to_hex(const ParamSet& p) {
    if (p.problem != "hex") throw InvalidArgument("not a hex parameter set");
    hex::OperatorParams o;
    o.generate_jitter = p.number("generate_jitter");
    o.perturb_center_scale = p.number("perturb_center_scale");
    o.teleport_threshold = p.number("teleport_threshold");
    o.improve.mode = hex::optimizer_mode_from_string(p.choice("optimizer"));
    o.improve.initial_penalty = p.number("initial_penalty");
    o.improve.penalty_growth = p.number("penalty_growth");
    o.improve.rounds = static_cast<int>(p.number("rounds"));
    o.improve.max_iterations = static_cast<int>(p.number("max_iterations"));
    o.improve.bound_scale = p.number("bound_scale");
    return o;
}

aci::OperatorParams to_aci(const ParamSet& p) {
    if (p.problem != "aci") throw InvalidArgument("not an aci parameter set");
    aci::OperatorParams o;
    o.min_bumps = static_cast<int>(p.number("min_bumps"));
    o.max_bumps = static_cast<int>(p.number("max_bumps"));
    o.structural_noise_cap = p.number("structural_noise_cap");
    o.improve = aci::improve_params_for(aci::grid_mode_from_string(p.choice("grid")));
    o.improve.iterations_per_stage = static_cast<int>(p.number("iterations_per_stage"));
    // Keep the three-stage continuation, ending at the chosen sharpness.
    const double top = p.number("sharpness_max");
    o.improve.sharpness = {top / 100.0, top / 10.0, top};
    return o;
}

} // namespace improvolve::params
