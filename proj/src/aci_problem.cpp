#include "improvolve/aci_problem.hpp"

#include "improvolve/optim.hpp"
#include "improvolve/rng.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>

namespace improvolve::aci {

namespace {

constexpr std::size_t kDirectLimit = 256;

// FFTW planning is not thread-safe; execution with new arrays is.
struct FftPlans {
    fftw_plan forward;
    fftw_plan backward;
};

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

FftPlans plans_for(std::size_t size) {
    static std::map<std::size_t, FftPlans> cache;
    std::lock_guard lock(planner_mutex());
    auto it = cache.find(size);
    if (it != cache.end()) return it->second;
    double* real = fftw_alloc_real(size);
    fftw_complex* spec = fftw_alloc_complex(size / 2 + 1);
    const int n = static_cast<int>(size);
    FftPlans p{fftw_plan_dft_r2c_1d(n, real, spec, FFTW_ESTIMATE),
               fftw_plan_dft_c2r_1d(n, spec, real, FFTW_ESTIMATE)};
    fftw_free(real);
    fftw_free(spec);
    cache.emplace(size, p);
    return p;
}

struct RealBuffer {
    std::unique_ptr<double, decltype(&fftw_free)> ptr;
    explicit RealBuffer(std::size_t n) : ptr(fftw_alloc_real(n), &fftw_free) {}
    double* get() const { return ptr.get(); }
};

struct ComplexBuffer {
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> ptr;
    explicit ComplexBuffer(std::size_t n) : ptr(fftw_alloc_complex(n), &fftw_free) {}
    fftw_complex* get() const { return ptr.get(); }
};

std::size_t fft_size_for(std::size_t n) {
    std::size_t p = 1;
    while (p < 2 * n - 1) p <<= 1;
    return p;
}

// Autoconvolution and its adjoint for one fixed length, reusing buffers.
class Convolver {
public:
    explicit Convolver(std::size_t n)
        : n_(n), p_(fft_size_for(n)), plans_(plans_for(p_)), real_(p_), spec_f_(p_ / 2 + 1), spec_tmp_(p_ / 2 + 1) {}

    /// g = f * f (length 2n-1).
    void convolve(std::span<const double> f, std::span<double> g) {
        std::fill(real_.get(), real_.get() + p_, 0.0);
        std::copy(f.begin(), f.end(), real_.get());
        fftw_execute_dft_r2c(plans_.forward, real_.get(), spec_f_.get());
        const std::size_t m = p_ / 2 + 1;
        for (std::size_t k = 0; k < m; ++k) {
            const std::complex<double> z(spec_f_.get()[k][0], spec_f_.get()[k][1]);
            const std::complex<double> sq = z * z;
            spec_tmp_.get()[k][0] = sq.real();
            spec_tmp_.get()[k][1] = sq.imag();
        }
        fftw_execute_dft_c2r(plans_.backward, spec_tmp_.get(), real_.get());
        const double scale = 1.0 / static_cast<double>(p_);
        for (std::size_t k = 0; k < 2 * n_ - 1; ++k) g[k] = std::max(0.0, real_.get()[k] * scale);
    }

    /// out[i] = sum_k d[k] f[k-i], using the spectrum of f from the last convolve().
    void correlate(std::span<const double> d, std::span<double> out) {
        std::fill(real_.get(), real_.get() + p_, 0.0);
        std::copy(d.begin(), d.end(), real_.get());
        fftw_execute_dft_r2c(plans_.forward, real_.get(), spec_tmp_.get());
        const std::size_t m = p_ / 2 + 1;
        for (std::size_t k = 0; k < m; ++k) {
            const std::complex<double> a(spec_tmp_.get()[k][0], spec_tmp_.get()[k][1]);
            const std::complex<double> b(spec_f_.get()[k][0], -spec_f_.get()[k][1]);
            const std::complex<double> c = a * b;
            spec_tmp_.get()[k][0] = c.real();
            spec_tmp_.get()[k][1] = c.imag();
        }
        fftw_execute_dft_c2r(plans_.backward, spec_tmp_.get(), real_.get());
        const double scale = 1.0 / static_cast<double>(p_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = real_.get()[i] * scale;
    }

private:
    std::size_t n_;
    std::size_t p_;
    FftPlans plans_;
    RealBuffer real_;
    ComplexBuffer spec_f_;
    ComplexBuffer spec_tmp_;
};

double softplus(double u) { return u > 30.0 ? u : std::log1p(std::exp(u)); }
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double inverse_softplus(double f) { return f > 30.0 ? f : std::log(std::expm1(f)); }

// Smoothed ratio and dC/dg for a given autoconvolution.
double smoothed_ratio_from_g(std::span<const double> g, double beta, std::span<double> dg) {
    const double P = static_cast<double>(g.size());
    double l1 = 0.0, l2 = 0.0, gmax = 0.0;
    for (double v : g) {
        l1 += v;
        l2 += v * v;
        gmax = std::max(gmax, v);
    }
    const double mean = l1 / P;
    const double amax = beta * gmax / mean;
    double z = 0.0;
    for (double v : g) z += std::exp(beta * v / mean - amax);
    const double log_z = amax + std::log(z);
    const double smax = mean / beta * log_z;
    const double ratio = l2 / (l1 * smax);
    if (dg.empty()) return ratio;

    double weighted = 0.0;
    for (double v : g) weighted += std::exp(beta * v / mean - amax) / z * v / mean;
    const double common = log_z / (beta * P) - weighted / P;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double pk = std::exp(beta * g[k] / mean - amax) / z;
        const double ds = common + pk;
        dg[k] = 2.0 * g[k] / (l1 * smax) - ratio / l1 - ratio / smax * ds;
    }
    return ratio;
}

// Smoothed ratio over softplus parameters, for one resolution.
class SmoothProblem {
public:
    explicit SmoothProblem(std::size_t n) : n_(n), conv_(n), f_(n), g_(2 * n - 1), dg_(2 * n - 1), df_(n) {}

    double beta = 1e2;

    double evaluate(std::span<const double> u, std::span<double> grad) {
        for (std::size_t i = 0; i < n_; ++i) f_[i] = softplus(u[i]);
        conv_.convolve(f_, g_);
        if (grad.empty()) return smoothed_ratio_from_g(g_, beta, {});
        const double ratio = smoothed_ratio_from_g(g_, beta, dg_);
        conv_.correlate(dg_, df_);
        for (std::size_t i = 0; i < n_; ++i) grad[i] = 2.0 * df_[i] * sigmoid(u[i]);
        return ratio;
    }

private:
    std::size_t n_;
    Convolver conv_;
    std::vector<double> f_, g_, dg_, df_;
};

bool past(const std::optional<std::chrono::steady_clock::time_point>& deadline) {
    return deadline && std::chrono::steady_clock::now() >= *deadline;
}

double true_ratio(std::span<const double> f) {
    return fitness(StepFunction{{f.begin(), f.end()}}).c_value;
}

// Softplus parameters for f rescaled to unit maximum; zeros map to a floor.
std::vector<double> to_parameters(std::span<const double> f) {
    const double peak = *std::max_element(f.begin(), f.end());
    std::vector<double> u(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        u[i] = inverse_softplus(std::max(f[i] / peak, 1e-12));
    }
    return u;
}

} // namespace

void check_valid(std::span<const double> f) {
    if (f.empty()) throw MalformedSolution("empty function");
    double sum = 0.0;
    for (double v : f) {
        if (!std::isfinite(v)) throw MalformedSolution("non-finite sample");
        if (v < 0.0) throw MalformedSolution("negative sample");
        sum += v;
    }
    if (!(sum > 0.0)) throw MalformedSolution("all-zero function");
}

std::vector<double> autoconvolve_direct(std::span<const double> f) {
    const std::size_t n = f.size();
    std::vector<double> g(2 * n - 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[i + j] += f[i] * f[j];
    }
    return g;
}

std::vector<double> autoconvolve_fft(std::span<const double> f) {
    std::vector<double> g(2 * f.size() - 1);
    Convolver(f.size()).convolve(f, g);
    return g;
}

std::vector<double> autoconvolve(std::span<const double> f) {
    if (f.empty()) throw MalformedSolution("empty function");
    return f.size() <= kDirectLimit ? autoconvolve_direct(f) : autoconvolve_fft(f);
}

AciReport fitness(const StepFunction& f) {
    check_valid(f.values);
    const auto g = autoconvolve(f.values);
    AciReport r;
    for (double v : g) {
        r.l1 += v;
        r.l2_sq += v * v;
        r.linf = std::max(r.linf, v);
    }
    r.c_value = r.l2_sq / (r.l1 * r.linf);
    return r;
}

std::string to_string(GridMode mode) {
    return mode == GridMode::standard ? "standard" : "extended";
}

GridMode grid_mode_from_string(const std::string& s) {
    if (s == "standard" || s == "default") return GridMode::standard;
    if (s == "extended") return GridMode::extended;
    throw InvalidArgument("unknown grid mode: " + s);
}

ImproveParams improve_params_for(GridMode mode) {
    ImproveParams p;
    p.mode = mode;
    if (mode == GridMode::extended) p.iterations_per_stage = 3000;
    return p;
}

std::vector<std::size_t> resolution_ladder(std::size_t n, const ImproveParams& params) {
    std::vector<std::size_t> ladder;
    if (params.mode == GridMode::standard) {
        ladder.push_back(std::min(n, std::size_t{1024}));
        if (n > 1024) ladder.back() = n;
        for (std::size_t r : {std::size_t{2048}, std::size_t{4096}, kStandardTop}) {
            if (r > ladder.back()) ladder.push_back(r);
        }
    } else {
        const std::size_t cap = std::min(std::max(params.resolution_cap, n), kExtendedMaxCap);
        ladder.push_back(n);
        while (ladder.back() * 2 <= cap) ladder.push_back(ladder.back() * 2);
    }
    return ladder;
}

std::vector<double> resample_linear(std::span<const double> f, std::size_t n) {
    if (n == 0 || f.empty()) throw InvalidArgument("resample: empty input or target");
    if (n == f.size()) return {f.begin(), f.end()};
    std::vector<double> out(n);
    const double ratio = static_cast<double>(f.size()) / static_cast<double>(n);
    const double last = static_cast<double>(f.size() - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, last);
        const auto lo = static_cast<std::size_t>(std::floor(x));
        const std::size_t hi = std::min(lo + 1, f.size() - 1);
        const double t = x - static_cast<double>(lo);
        out[i] = (1.0 - t) * f[lo] + t * f[hi];
    }
    return out;
}

double smooth_ratio(std::span<const double> u, double sharpness, std::span<double> grad) {
    SmoothProblem problem(u.size());
    problem.beta = sharpness;
    return problem.evaluate(u, grad);
}

StepFunction generate(std::size_t resolution, std::uint64_t seed, const OperatorParams& params) {
    if (resolution < 16) throw InvalidArgument("aci generate: resolution must be at least 16");
    Rng rng = make_rng(seed);
    std::uniform_int_distribution<int> count(params.min_bumps, params.max_bumps);
    std::uniform_real_distribution<double> height(0.1, 1.0);
    const auto n = static_cast<double>(resolution);
    std::uniform_real_distribution<double> width(n / 10.0, n / 2.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    StepFunction f{std::vector<double>(resolution, 0.0)};
    const int bumps = count(rng);
    for (int b = 0; b < bumps; ++b) {
        const double w = width(rng);
        const double start = unit(rng) * (n - w);
        const double h = height(rng);
        const auto lo = static_cast<std::size_t>(start);
        const auto hi = std::min(resolution, static_cast<std::size_t>(start + w) + 1);
        for (std::size_t i = lo; i < hi; ++i) f.values[i] += h;
    }
    return f;
}

StepFunction improve(const StepFunction& f, GridMode mode,
                     std::optional<std::chrono::steady_clock::time_point> deadline) {
    return improve(f, improve_params_for(mode), deadline);
}

StepFunction improve(const StepFunction& input, const ImproveParams& params,
                     std::optional<std::chrono::steady_clock::time_point> deadline) {
    check_valid(input.values);
    const double input_c = true_ratio(input.values);
    StepFunction best = input;
    double best_c = input_c;

    std::vector<double> current = input.values;
    for (std::size_t resolution : resolution_ladder(input.size(), params)) {
        if (past(deadline)) break;
        current = resample_linear(current, resolution);
        std::vector<double> u = to_parameters(current);
        SmoothProblem problem(resolution);
        for (double beta : params.sharpness) {
            if (past(deadline)) break;
            problem.beta = beta;
            const optim::Objective objective = [&](std::span<const double> x, std::span<double> g) {
                const double r = problem.evaluate(x, g);
                for (double& v : g) v = -v;
                return -r;
            };
            optim::LbfgsOptions opts;
            opts.max_iterations = params.iterations_per_stage;
            opts.history = params.history;
            opts.deadline = deadline;
            opts.gradient_tolerance = 1e-12;
            auto res = optim::lbfgs_minimize(objective, std::move(u), opts);
            u = std::move(res.x);
        }
        if (!std::all_of(u.begin(), u.end(), [](double v) { return std::isfinite(v); })) {
            if (best_c >= input_c) return best;
            throw ImprovementFailed("aci improve: non-finite state");
        }
        for (std::size_t i = 0; i < resolution; ++i) current[i] = softplus(u[i]);
        double c = 0.0;
        try {
            c = true_ratio(current);
        } catch (const MalformedSolution&) {
            continue;
        }
        if (c > best_c) {
            best_c = c;
            best.values = current;
        }
    }
    return best;
}

StepFunction perturb(const StepFunction& f, double intensity, std::uint64_t seed, const OperatorParams& params) {
    check_valid(f.values);
    if (!(intensity > 0.0)) throw InvalidArgument("perturb: intensity must be positive");
    Rng rng = make_rng(seed);
    std::vector<double> v = f.values;
    const std::size_t n = v.size();

    const double log_std = intensity < 0.1 ? intensity : std::min(intensity, params.structural_noise_cap);
    std::normal_distribution<double> noise(0.0, log_std);
    for (double& x : v) x *= std::exp(noise(rng));

    if (intensity >= 0.1 && n >= 2) {
        std::uniform_real_distribution<double> frac(0.05, 0.20);
        std::uniform_real_distribution<double> factor(0.5, 2.0);
        const auto len = std::clamp<std::size_t>(static_cast<std::size_t>(frac(rng) * n), 1, n);
        std::uniform_int_distribution<std::size_t> start(0, n - len);
        const std::size_t s = start(rng);
        const double k = factor(rng);
        for (std::size_t i = s; i < s + len; ++i) v[i] *= k;
    }

    if (intensity >= 10.0) {
        std::uniform_int_distribution<std::size_t> size(std::max<std::size_t>(1, n / 2), 2 * n);
        v = resample_linear(v, size(rng));
        std::uniform_int_distribution<int> blocks(1, 3);
        const int b = std::min<int>(blocks(rng), static_cast<int>(v.size()));
        if (b > 1) {
            std::uniform_int_distribution<std::size_t> cut(1, v.size() - 1);
            std::vector<std::size_t> cuts;
            while (static_cast<int>(cuts.size()) < b - 1) {
                const std::size_t c = cut(rng);
                if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
            }
            std::sort(cuts.begin(), cuts.end());
            cuts.insert(cuts.begin(), 0);
            cuts.push_back(v.size());
            std::vector<std::size_t> order(cuts.size() - 1);
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            std::vector<double> shuffled;
            shuffled.reserve(v.size());
            for (std::size_t k : order) shuffled.insert(shuffled.end(), v.begin() + cuts[k], v.begin() + cuts[k + 1]);
            v = std::move(shuffled);
        }
    }
    return StepFunction{std::move(v)};
}

StepFunction finalize(const StepFunction& f) {
    check_valid(f.values);
    if (f.size() >= kFinalMinResolution) return f;
    return StepFunction{resample_linear(f.values, kFinalMinResolution)};
}

} // namespace improvolve::aci
