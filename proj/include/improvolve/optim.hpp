#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

/// Local optimizers shared by the built-in improvers.
namespace improvolve::optim {

using Clock = std::chrono::steady_clock;

/// Returns f(x) and writes the gradient into `grad` (same length as x).
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Box bounds; use +-infinity for free coordinates.
struct Bounds {
    std::vector<double> lower;
    std::vector<double> upper;
};

struct LbfgsOptions {
    int max_iterations = 500;
    int history = 10;
    /// Stop when the projected-gradient infinity norm falls below this.
    double gradient_tolerance = 1e-9;
    /// Stop after `stall_limit` consecutive iterations with relative decrease below this.
    double function_tolerance = 1e-13;
    int stall_limit = 5;
    std::optional<Clock::time_point> deadline;
};

struct Result {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    std::string stop_reason;
};

/// Limited-memory BFGS with projection onto box bounds and a backtracking
/// Armijo search along the projected path.
Result lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsOptions& options,
                      const Bounds* bounds = nullptr);

/// Inequality constraints c(x) <= 0 with their Jacobian (row-major, one row
/// per constraint). Implementations may return a different set on each call.
struct ConstraintValues {
    std::vector<double> values;
    std::vector<std::vector<double>> jacobian;
};
using Constraints = std::function<ConstraintValues(std::span<const double> x)>;

struct SqpOptions {
    int max_iterations = 200;
    double step_tolerance = 1e-10;
    double feasibility_tolerance = 1e-10;
    /// Box on each step component; keeps the quadratic model local.
    double max_step = 0.5;
    std::optional<Clock::time_point> deadline;
};

/// Sequential quadratic programming: damped-BFGS Hessian model, dual
/// coordinate-ascent QP subproblem, l1 merit line search.
Result sqp_minimize(const Objective& f, const Constraints& constraints, std::vector<double> x0,
                    const SqpOptions& options, const Bounds* bounds = nullptr);

/// Central-difference gradient, used by tests and by callers without an
/// analytic gradient.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h);

} // namespace improvolve::optim
