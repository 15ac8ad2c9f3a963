#pragma once

#include "improvolve/errors.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

/// The second autocorrelation inequality: maximize
/// C(f) = |f*f|_2^2 / (|f*f|_1 |f*f|_inf) over non-negative step functions.
namespace improvolve::aci {

struct StepFunction {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    friend bool operator==(const StepFunction&, const StepFunction&) = default;
};

struct AciReport {
    double c_value = 0.0;
    double l1 = 0.0;
    double l2_sq = 0.0;
    double linf = 0.0;
};

/// Finite, non-negative, non-empty, positive sum. Throws MalformedSolution.
void check_valid(std::span<const double> f);

/// g[k] = sum_{i+j=k} f[i] f[j]. Exact double loop up to 256 samples, FFT above.
std::vector<double> autoconvolve(std::span<const double> f);
std::vector<double> autoconvolve_direct(std::span<const double> f);
std::vector<double> autoconvolve_fft(std::span<const double> f);

AciReport fitness(const StepFunction& f);

enum class GridMode {
    standard, ///< fixed ladder up to 8192 samples
    extended, ///< start at the input size and double up to a cap
};

std::string to_string(GridMode mode);
GridMode grid_mode_from_string(const std::string& s);

inline constexpr std::size_t kStandardTop = 8192;
inline constexpr std::size_t kExtendedDefaultCap = 65536;
inline constexpr std::size_t kExtendedMaxCap = std::size_t{1} << 21;
inline constexpr std::size_t kFinalMinResolution = 1024;

struct ImproveParams {
    GridMode mode = GridMode::standard;
    std::size_t resolution_cap = kExtendedDefaultCap;
    /// Log-sum-exp sharpness per stage at every resolution.
    std::vector<double> sharpness = {1e2, 1e3, 1e4};
    int iterations_per_stage = 2000;
    int history = 10;
};

ImproveParams improve_params_for(GridMode mode);

/// Resolutions visited by improve for an input of `n` samples.
std::vector<std::size_t> resolution_ladder(std::size_t n, const ImproveParams& params);

struct OperatorParams {
    int min_bumps = 2;
    int max_bumps = 5;
    /// Log-std of the multiplicative noise in the structural band.
    double structural_noise_cap = 0.5;
    ImproveParams improve;
};

StepFunction generate(std::size_t resolution, std::uint64_t seed, const OperatorParams& params = {});

StepFunction improve(const StepFunction& f, GridMode mode,
                     std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);
StepFunction improve(const StepFunction& f, const ImproveParams& params,
                     std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);

StepFunction perturb(const StepFunction& f, double intensity, std::uint64_t seed, const OperatorParams& params = {});

/// Upsamples to 1024 samples when shorter; identity otherwise.
StepFunction finalize(const StepFunction& f);

/// Piecewise-linear resampling on cell centers.
std::vector<double> resample_linear(std::span<const double> f, std::size_t n);

/// Smoothed ratio optimized by improve, as a function of the softplus
/// parameters u (f = softplus(u)). Writes dC/du into grad when non-empty.
double smooth_ratio(std::span<const double> u, double sharpness, std::span<double> grad);

} // namespace improvolve::aci
