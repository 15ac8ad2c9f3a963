#include "improvolve/basinhop.hpp"

#include <json.hpp>

#include <cmath>
#include <string>

namespace improvolve::basinhop {

using nlohmann::json;

SigmaSchedule SigmaSchedule::explicit_list(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("sigma schedule: empty list");
    for (double v : values) {
        if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("sigma schedule: values must be positive");
    }
    SigmaSchedule s;
    s.kind_ = Kind::explicit_list;
    s.sigma_max_ = values.front();
    s.sigma_min_ = values.back();
    s.steps_ = static_cast<int>(values.size());
    s.values_ = std::move(values);
    return s;
}

SigmaSchedule SigmaSchedule::geometric(double sigma_max, double sigma_min, int steps) {
    if (!(sigma_min > 0.0) || !(sigma_max >= sigma_min) || steps < 2) {
        throw InvalidArgument("geometric schedule needs sigma_max >= sigma_min > 0 and M >= 2");
    }
    SigmaSchedule s;
    s.kind_ = Kind::geometric;
    s.sigma_max_ = sigma_max;
    s.sigma_min_ = sigma_min;
    s.steps_ = steps;
    return s;
}

std::size_t SigmaSchedule::size() const { return static_cast<std::size_t>(steps_); }

double SigmaSchedule::at(std::size_t t) const {
    if (t < 1 || t > size()) throw InvalidArgument("sigma schedule: iteration out of range");
    if (kind_ == Kind::explicit_list) return values_[t - 1];
    if (t == 1) return sigma_max_;
    if (t == size()) return sigma_min_;
    const double exponent = static_cast<double>(t - 1) / static_cast<double>(steps_ - 1);
    return sigma_max_ * std::pow(sigma_min_ / sigma_max_, exponent);
}

std::vector<double> SigmaSchedule::values() const {
    std::vector<double> out;
    for (std::size_t t = 1; t <= size(); ++t) out.push_back(at(t));
    return out;
}

SigmaSchedule hex_table_schedule() {
    return SigmaSchedule::explicit_list({1e2, 5e1, 1e1, 5, 1, 5e-1, 1e-1, 5e-2, 1e-2, 5e-3, 1e-3});
}

SigmaSchedule aci_table_schedule() {
    return SigmaSchedule::explicit_list({1e2, 1e1, 1, 1e-1, 1e-2, 1e-3});
}

std::string to_string(InvalidPolicy p) { return p == InvalidPolicy::discard ? "discard" : "skip"; }

std::string to_string(StageMode m) {
    switch (m) {
    case StageMode::a_only:
        return "A-only";
    case StageMode::b_only:
        return "B-only";
    case StageMode::a_and_b:
        return "A+B";
    }
    return "A+B";
}

InvalidPolicy invalid_policy_from_string(const std::string& s) {
    if (s == "discard") return InvalidPolicy::discard;
    if (s == "skip") return InvalidPolicy::skip;
    throw InvalidArgument("unknown invalid policy: " + s);
}

StageMode stage_mode_from_string(const std::string& s) {
    if (s == "A-only" || s == "a-only" || s == "A") return StageMode::a_only;
    if (s == "B-only" || s == "b-only" || s == "B") return StageMode::b_only;
    if (s == "A+B" || s == "a+b" || s == "AB") return StageMode::a_and_b;
    throw InvalidArgument("unknown stage mode: " + s);
}

void BasinHopParams::check() const {
    if (runs_stage_a() && K < 1) throw InvalidArgument("K must be at least 1 when Stage A runs");
    if (R < 0) throw InvalidArgument("R must be non-negative");
    if (per_call_timeout.count() <= 0) throw InvalidArgument("per-call timeout must be positive");
    if (schedule.size() == 0) throw InvalidArgument("empty sigma schedule");
}

PolicyAction apply_invalid_policy(InvalidPolicy policy) {
    return policy == InvalidPolicy::discard ? PolicyAction::discard_candidate : PolicyAction::continue_run;
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

} // namespace

void write_trace_jsonl(const RunTrace& trace, std::ostream& out) {
    for (const auto& ev : trace.events) {
        json j;
        j["stage"] = std::string(1, ev.stage);
        j["round"] = ev.round;
        j["iteration"] = ev.iteration;
        j["sigma"] = optional_number(ev.sigma);
        j["fitness_before"] = optional_number(ev.fitness_before);
        j["fitness_after"] = optional_number(ev.fitness_after);
        j["accepted"] = ev.accepted;
        j["elapsed"] = ev.elapsed;
        j["invalid"] = ev.invalid;
        out << j.dump() << '\n';
    }
}

RunTrace read_trace_jsonl(std::istream& in) {
    RunTrace trace;
    std::optional<double> best;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        TraceEvent ev;
        const auto stage = j.at("stage").get<std::string>();
        if (stage != "A" && stage != "B") throw MalformedSolution("trace: bad stage " + stage);
        ev.stage = stage[0];
        ev.round = j.at("round").get<int>();
        ev.iteration = j.at("iteration").get<int>();
        ev.sigma = read_optional(j, "sigma");
        ev.fitness_before = read_optional(j, "fitness_before");
        ev.fitness_after = read_optional(j, "fitness_after");
        ev.accepted = j.at("accepted").get<bool>();
        ev.elapsed = j.at("elapsed").get<double>();
        ev.invalid = j.at("invalid").get<bool>();
        if (ev.accepted && ev.fitness_after) best = *ev.fitness_after;
        trace.events.push_back(ev);
        if (best) trace.best_fitness_curve.push_back(*best);
    }
    return trace;
}

} // namespace improvolve::basinhop
