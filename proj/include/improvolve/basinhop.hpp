#pragma once

#include "improvolve/errors.hpp"
#include "improvolve/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

/// Two-stage monotonic basin hopping: Stage A picks the best improved seed,
/// Stage B repeatedly perturbs and improves it under a sigma schedule.
namespace improvolve::basinhop {

using Clock = std::chrono::steady_clock;
using Deadline = std::optional<Clock::time_point>;

class SigmaSchedule {
public:
    enum class Kind { explicit_list, geometric };

    static SigmaSchedule explicit_list(std::vector<double> values);
    static SigmaSchedule geometric(double sigma_max, double sigma_min, int steps);

    Kind kind() const { return kind_; }
    std::size_t size() const;
    /// Sigma at 1-based iteration t.
    double at(std::size_t t) const;
    std::vector<double> values() const;

    double sigma_max() const { return sigma_max_; }
    double sigma_min() const { return sigma_min_; }

private:
    Kind kind_ = Kind::explicit_list;
    std::vector<double> values_;
    double sigma_max_ = 0.0;
    double sigma_min_ = 0.0;
    int steps_ = 0;
};

enum class InvalidPolicy { discard, skip };
enum class StageMode { a_only, b_only, a_and_b };

std::string to_string(InvalidPolicy p);
std::string to_string(StageMode m);
InvalidPolicy invalid_policy_from_string(const std::string& s);
StageMode stage_mode_from_string(const std::string& s);

struct BasinHopParams {
    int K = 10;
    int R = 15;
    SigmaSchedule schedule = SigmaSchedule::geometric(100.0, 0.001, 10);
    std::chrono::milliseconds per_call_timeout{std::chrono::minutes(5)};
    InvalidPolicy invalid_policy = InvalidPolicy::skip;
    StageMode stage_mode = StageMode::a_and_b;
    /// Concurrent Stage-A evaluations.
    int workers = 1;

    bool runs_stage_a() const { return stage_mode != StageMode::b_only; }
    bool runs_stage_b() const { return stage_mode != StageMode::a_only; }
    /// Throws InvalidArgument when inconsistent.
    void check() const;
};

/// Sigma schedules from the reference hyperparameter table.
SigmaSchedule hex_table_schedule();
SigmaSchedule aci_table_schedule();

struct TraceEvent {
    char stage = 'A';
    int round = 0;
    int iteration = 0;
    std::optional<double> sigma;
    std::optional<double> fitness_before;
    std::optional<double> fitness_after;
    bool accepted = false;
    double elapsed = 0.0; ///< seconds since the run started
    bool invalid = false;
};

struct RunTrace {
    std::vector<TraceEvent> events;
    std::vector<double> best_fitness_curve;
};

/// One JSON object per event.
void write_trace_jsonl(const RunTrace& trace, std::ostream& out);
RunTrace read_trace_jsonl(std::istream& in);

/// Raised under the discard policy when any operator call is invalid.
class CandidateDiscarded : public Error {
public:
    using Error::Error;
};

/// Raised when Stage A (or the B-only start) yields no valid solution.
class NoValidStart : public Error {
public:
    using Error::Error;
};

enum class PolicyAction { continue_run, discard_candidate };

/// What the engine does after an invalid improve.
PolicyAction apply_invalid_policy(InvalidPolicy policy);

template <class S>
struct OperatorTriple {
    std::function<S(std::uint64_t seed, Deadline deadline)> generate;
    std::function<S(const S& x, Deadline deadline)> improve;
    std::function<S(const S& x, double sigma, std::uint64_t seed, Deadline deadline)> perturb;
};

/// Fitness of a valid solution (higher is better); throws on invalid input.
template <class S>
using FitnessFn = std::function<double(const S&)>;

template <class S>
struct RunResult {
    S best;
    double fitness = 0.0;
    RunTrace trace;
};

/// Operator seed used for Stage-A index s (1-based).
inline std::uint64_t stage_a_seed(std::uint64_t run_seed, int K, int s) {
    return run_seed * static_cast<std::uint64_t>(std::max(K, 1)) + static_cast<std::uint64_t>(s);
}

/// Operator seed for the perturbation at (round, t).
inline std::uint64_t perturb_seed(std::uint64_t run_seed, int round, std::size_t t) {
    return derive_seed(run_seed, static_cast<std::uint64_t>(round), t);
}

namespace detail {

/// Grace period after the cooperative deadline before the watchdog gives up.
inline constexpr std::chrono::milliseconds kWatchdogGrace{500};

template <class S>
struct CallOutcome {
    std::optional<S> value;
    std::string error;
};

// Runs fn(deadline) on a worker thread. A call that has not returned by
// deadline + grace is abandoned (the detached thread owns all its state).
template <class S, class Fn>
CallOutcome<S> guarded_call(Fn fn, std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    auto task = std::make_shared<std::packaged_task<S()>>([fn = std::move(fn), deadline]() mutable {
        return fn(Deadline{deadline});
    });
    auto future = task->get_future();
    std::thread([task] { (*task)(); }).detach();
    if (future.wait_until(deadline + kWatchdogGrace) != std::future_status::ready) {
        return {std::nullopt, "timeout"};
    }
    try {
        return {future.get(), {}};
    } catch (const std::exception& e) {
        return {std::nullopt, e.what()};
    } catch (...) {
        return {std::nullopt, "unknown error"};
    }
}

template <class S>
struct Scored {
    std::optional<S> solution;
    std::optional<double> fitness;
    std::string error;
};

template <class S>
Scored<S> score(CallOutcome<S> outcome, const FitnessFn<S>& fitness) {
    if (!outcome.value) return {std::nullopt, std::nullopt, outcome.error};
    try {
        const double f = fitness(*outcome.value);
        if (!std::isfinite(f)) return {std::nullopt, std::nullopt, "non-finite fitness"};
        return {std::move(outcome.value), f, {}};
    } catch (const std::exception& e) {
        return {std::nullopt, std::nullopt, e.what()};
    }
}

} // namespace detail

template <class S>
RunResult<S> run_validation(const OperatorTriple<S>& ops, const FitnessFn<S>& fitness, const BasinHopParams& p,
                            std::uint64_t seed) {
    p.check();
    const auto start = Clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

    RunTrace trace;
    std::optional<S> best;
    double best_fitness = 0.0;

    auto record = [&](TraceEvent ev) {
        ev.elapsed = elapsed();
        trace.events.push_back(ev);
        if (best) trace.best_fitness_curve.push_back(best_fitness);
    };

    auto on_invalid = [&](const std::string& what) {
        if (apply_invalid_policy(p.invalid_policy) == PolicyAction::discard_candidate) {
            throw CandidateDiscarded("invalid operator output: " + what);
        }
    };

    // improve(generate(s)) as two guarded calls.
    auto seeded_start = [&](std::uint64_t op_seed) {
        auto generated = detail::guarded_call<S>(
            [gen = ops.generate, op_seed](Deadline d) { return gen(op_seed, d); }, p.per_call_timeout);
        if (!generated.value) return detail::Scored<S>{std::nullopt, std::nullopt, generated.error};
        auto improved = detail::guarded_call<S>(
            [imp = ops.improve, x = std::move(*generated.value)](Deadline d) { return imp(x, d); },
            p.per_call_timeout);
        return detail::score(std::move(improved), fitness);
    };

    if (p.runs_stage_a()) {
        std::vector<detail::Scored<S>> starts(static_cast<std::size_t>(p.K));
        const int workers = std::max(1, p.workers);
        for (int first = 0; first < p.K; first += workers) {
            const int last = std::min(p.K, first + workers);
            if (workers == 1) {
                starts[first] = seeded_start(stage_a_seed(seed, p.K, first + 1));
                continue;
            }
            std::vector<std::future<detail::Scored<S>>> batch;
            for (int s = first; s < last; ++s) {
                batch.push_back(std::async(std::launch::async, seeded_start, stage_a_seed(seed, p.K, s + 1)));
            }
            for (int s = first; s < last; ++s) starts[s] = batch[s - first].get();
        }
        for (int s = 0; s < p.K; ++s) {
            TraceEvent ev;
            ev.stage = 'A';
            ev.iteration = s + 1;
            if (best) ev.fitness_before = best_fitness;
            auto& cand = starts[s];
            if (!cand.solution) {
                ev.invalid = true;
                record(ev);
                on_invalid(cand.error);
                continue;
            }
            ev.fitness_after = cand.fitness;
            // Strict comparison keeps the lowest seed on ties.
            if (!best || *cand.fitness > best_fitness) {
                best = std::move(cand.solution);
                best_fitness = *cand.fitness;
                ev.accepted = true;
            }
            record(ev);
        }
        if (!best) throw NoValidStart("no valid Stage-A solution among " + std::to_string(p.K) + " seeds");
    } else {
        auto cand = seeded_start(stage_a_seed(seed, p.K, 1));
        TraceEvent ev;
        ev.stage = 'A';
        ev.iteration = 1;
        if (!cand.solution) {
            ev.invalid = true;
            record(ev);
            on_invalid(cand.error);
            throw NoValidStart("B-only start is invalid: " + cand.error);
        }
        best = std::move(cand.solution);
        best_fitness = *cand.fitness;
        ev.fitness_after = best_fitness;
        ev.accepted = true;
        record(ev);
    }

    if (p.runs_stage_b()) {
        for (int round = 1; round <= p.R; ++round) {
            for (std::size_t t = 1; t <= p.schedule.size(); ++t) {
                const double sigma = p.schedule.at(t);
                TraceEvent ev;
                ev.stage = 'B';
                ev.round = round;
                ev.iteration = static_cast<int>(t);
                ev.sigma = sigma;
                ev.fitness_before = best_fitness;

                auto perturbed = detail::guarded_call<S>(
                    [pert = ops.perturb, x = *best, sigma, ps = perturb_seed(seed, round, t)](Deadline d) {
                        return pert(x, sigma, ps, d);
                    },
                    p.per_call_timeout);
                detail::Scored<S> cand;
                if (perturbed.value) {
                    cand = detail::score(
                        detail::guarded_call<S>(
                            [imp = ops.improve, x = std::move(*perturbed.value)](Deadline d) { return imp(x, d); },
                            p.per_call_timeout),
                        fitness);
                } else {
                    cand.error = perturbed.error;
                }

                if (!cand.solution) {
                    ev.invalid = true;
                    record(ev);
                    on_invalid(cand.error);
                    continue;
                }
                ev.fitness_after = cand.fitness;
                if (*cand.fitness >= best_fitness) {
                    best = std::move(cand.solution);
                    best_fitness = *cand.fitness;
                    ev.accepted = true;
                }
                record(ev);
            }
        }
    }

    return RunResult<S>{std::move(*best), best_fitness, std::move(trace)};
}

} // namespace improvolve::basinhop
