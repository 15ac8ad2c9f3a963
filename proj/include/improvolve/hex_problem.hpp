#pragma once

#include "improvolve/errors.hpp"
#include "improvolve/geometry.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

/// Packing unit hexagons into the smallest flat-topped hexagon.
namespace improvolve::hex {

using geometry::Point2;

inline constexpr int kMaxHexagons = 64;

struct HexConfig {
    std::vector<Point2> centers;
    std::vector<double> angles;

    std::size_t size() const { return centers.size(); }
    geometry::Hexagon hexagon(std::size_t i) const { return {centers[i], angles[i], 1.0}; }
    friend bool operator==(const HexConfig&, const HexConfig&) = default;
};

struct Overlap {
    std::size_t i = 0;
    std::size_t j = 0;
    double depth = 0.0;
};

struct ValidationReport {
    double side_length = 0.0;
    std::vector<Overlap> overlaps;

    bool valid() const { return overlaps.empty(); }
};

class ConstraintViolation : public Error {
public:
    explicit ConstraintViolation(ValidationReport report);
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

enum class OptimizerMode {
    gradient, ///< bounded L-BFGS on the penalized objective
    sqp,      ///< explicit inequality constraints, softer warm-up, larger budget
};

std::string to_string(OptimizerMode mode);
OptimizerMode optimizer_mode_from_string(const std::string& s);

struct ImproveParams {
    OptimizerMode mode = OptimizerMode::gradient;
    double initial_penalty = 10.0;
    double penalty_growth = 10.0;
    int rounds = 6;
    int max_iterations = 300;
    /// Half-width of the center box, as a multiple of the starting side length.
    double bound_scale = 1.5;
};

/// Parameter set behind the built-in operator triple; evolution mutates it.
struct OperatorParams {
    double generate_jitter = 0.05;
    double perturb_center_scale = 0.1;
    double teleport_threshold = 10.0;
    ImproveParams improve;
};

/// Default (or +E) improve parameters for a mode.
ImproveParams improve_params_for(OptimizerMode mode);

/// Throws MalformedSolution on shape mismatch or non-finite values.
void check_well_formed(const HexConfig& c);

std::vector<Point2> all_vertices(const HexConfig& c);
double side_length(const HexConfig& c);

ValidationReport validate(const HexConfig& c);

/// -L for a valid packing; throws ConstraintViolation otherwise.
double fitness(const HexConfig& c);

/// The first n flat-topped honeycomb sites by distance from the origin,
/// neighbor spacing sqrt(3) * dilation, all angles zero.
HexConfig lattice(int n, double dilation = 1.0);

HexConfig generate(int n, std::uint64_t seed, const OperatorParams& params = {});

HexConfig improve(const HexConfig& c, OptimizerMode mode,
                  std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);
HexConfig improve(const HexConfig& c, const ImproveParams& params,
                  std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);

/// May return an invalid configuration.
HexConfig perturb(const HexConfig& c, double sigma, std::uint64_t seed, const OperatorParams& params = {});

/// Uniformly scales centers about the origin by the least factor that
/// removes every overlap. Throws ImprovementFailed on coincident centers.
HexConfig separate_by_dilation(const HexConfig& c);

} // namespace improvolve::hex
