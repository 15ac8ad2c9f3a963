#pragma once

#include "improvolve/aci_problem.hpp"
#include "improvolve/basinhop.hpp"
#include "improvolve/hex_problem.hpp"

/// The in-process operator triples, bound to a problem instance.
namespace improvolve::builtin {

basinhop::OperatorTriple<hex::HexConfig> hex_triple(int n, hex::OperatorParams params = {});
basinhop::FitnessFn<hex::HexConfig> hex_fitness();

basinhop::OperatorTriple<aci::StepFunction> aci_triple(std::size_t resolution, aci::OperatorParams params = {});
basinhop::FitnessFn<aci::StepFunction> aci_fitness();

} // namespace improvolve::builtin
