#pragma once

#include "improvolve/aci_problem.hpp"
#include "improvolve/basinhop.hpp"
#include "improvolve/hex_problem.hpp"

#include <string>

/// SVG figures for solutions and run traces.
namespace improvolve::render {

/// Container (side = L) plus every unit hexagon, labeled with L.
std::string hex_svg(const hex::HexConfig& c);

/// Step plot of f above a panel with f*f and the C value.
std::string aci_svg(const aci::StepFunction& f);

/// Best fitness per event as a polyline, attempted fitness as dots.
std::string trace_svg(const basinhop::RunTrace& t);

} // namespace improvolve::render
