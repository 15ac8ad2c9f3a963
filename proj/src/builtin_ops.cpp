#include "improvolve/builtin_ops.hpp"

namespace improvolve::builtin {

using basinhop::Deadline;

basinhop::OperatorTriple<hex::HexConfig> hex_triple(int n, hex::OperatorParams params) {
    if (n < 1 || n > hex::kMaxHexagons) throw InvalidArgument("hex: n out of range");
    basinhop::OperatorTriple<hex::HexConfig> ops;
    ops.generate = [n, params](std::uint64_t seed, Deadline) { return hex::generate(n, seed, params); };
    ops.improve = [params](const hex::HexConfig& c, Deadline d) { return hex::improve(c, params.improve, d); };
    ops.perturb = [params](const hex::HexConfig& c, double sigma, std::uint64_t seed, Deadline) {
        return hex::perturb(c, sigma, seed, params);
    };
    return ops;
}

basinhop::FitnessFn<hex::HexConfig> hex_fitness() {
    return [](const hex::HexConfig& c) { return hex::fitness(c); };
}

basinhop::OperatorTriple<aci::StepFunction> aci_triple(std::size_t resolution, aci::OperatorParams params) {
    basinhop::OperatorTriple<aci::StepFunction> ops;
    ops.generate = [resolution, params](std::uint64_t seed, Deadline) {
        return aci::generate(resolution, seed, params);
    };
    ops.improve = [params](const aci::StepFunction& f, Deadline d) { return aci::improve(f, params.improve, d); };
    ops.perturb = [params](const aci::StepFunction& f, double sigma, std::uint64_t seed, Deadline) {
        return aci::perturb(f, sigma, seed, params);
    };
    return ops;
}

basinhop::FitnessFn<aci::StepFunction> aci_fitness() {
    return [](const aci::StepFunction& f) { return aci::fitness(f).c_value; };
}

} // namespace improvolve::builtin
