#include "improvolve/hex_problem.hpp"

#include "improvolve/optim.hpp"
#include "improvolve/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace improvolve::hex {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * kPi;
constexpr double kApothemRatio = geometry::kSqrt3 / 2.0;
constexpr double kFdStep = 1e-7;

double canonical_angle(double a) {
    double r = std::fmod(a, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    if (r >= kTwoPi) r = 0.0;
    return r;
}

void canonicalize(HexConfig& c) {
    for (double& a : c.angles) a = canonical_angle(a);
}

std::string describe(const ValidationReport& r) {
    std::ostringstream os;
    os << "configuration invalid: L=" << r.side_length << ", " << r.overlaps.size() << " overlapping pair(s)";
    for (const auto& o : r.overlaps) os << " (" << o.i << "," << o.j << ":" << o.depth << ")";
    return os.str();
}

// Outward normals of the container's six edges.
struct ContainerDirections {
    std::array<double, 6> phi{};
    std::array<Point2, 6> u{};

    ContainerDirections() {
        for (int k = 0; k < 6; ++k) {
            phi[k] = kPi / 6.0 + k * kPi / 3.0;
            u[k] = {std::cos(phi[k]), std::sin(phi[k])};
        }
    }
};

const ContainerDirections& directions() {
    static const ContainerDirections d;
    return d;
}

// Depth as a function of the center offset and both angles.
double pair_depth(double dx, double dy, double ta, double tb) {
    return geometry::penetration_depth({{0.0, 0.0}, ta, 1.0}, {{dx, dy}, tb, 1.0});
}

struct DepthGradient {
    double depth;
    double d_dx, d_dy, d_ta, d_tb;
};

DepthGradient pair_depth_gradient(double dx, double dy, double ta, double tb) {
    const double h = kFdStep;
    DepthGradient out{};
    out.depth = pair_depth(dx, dy, ta, tb);
    out.d_dx = (pair_depth(dx + h, dy, ta, tb) - pair_depth(dx - h, dy, ta, tb)) / (2 * h);
    out.d_dy = (pair_depth(dx, dy + h, ta, tb) - pair_depth(dx, dy - h, ta, tb)) / (2 * h);
    out.d_ta = (pair_depth(dx, dy, ta + h, tb) - pair_depth(dx, dy, ta - h, tb)) / (2 * h);
    out.d_tb = (pair_depth(dx, dy, ta, tb + h) - pair_depth(dx, dy, ta, tb - h)) / (2 * h);
    return out;
}

// Penalized objective over z = (x0, y0, t0, ..., L).
class PackingObjective {
public:
    explicit PackingObjective(std::size_t n) : n_(n) {}

    double weight = 10.0;

    double operator()(std::span<const double> z, std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double L = z[3 * n_];
        double value = L;
        grad[3 * n_] = 1.0;
        const auto& dirs = directions();

        for (std::size_t i = 0; i < n_; ++i) {
            const double x = z[3 * i], y = z[3 * i + 1], t = z[3 * i + 2];
            for (int k = 0; k < 6; ++k) {
                const double delta = std::remainder(dirs.phi[k] - t, kPi / 3.0);
                const double excess = x * dirs.u[k].x + y * dirs.u[k].y + std::cos(delta) - L * kApothemRatio;
                if (excess <= 0.0) continue;
                const double coef = 2.0 * weight * excess;
                value += weight * excess * excess;
                grad[3 * i] += coef * dirs.u[k].x;
                grad[3 * i + 1] += coef * dirs.u[k].y;
                grad[3 * i + 2] += coef * std::sin(delta);
                grad[3 * n_] -= coef * kApothemRatio;
            }
        }

        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = i + 1; j < n_; ++j) {
                const double dx = z[3 * j] - z[3 * i];
                const double dy = z[3 * j + 1] - z[3 * i + 1];
                if (dx * dx + dy * dy >= 4.0) continue;
                if (pair_depth(dx, dy, z[3 * i + 2], z[3 * j + 2]) <= 0.0) continue;
                const DepthGradient dg = pair_depth_gradient(dx, dy, z[3 * i + 2], z[3 * j + 2]);
                if (dg.depth <= 0.0) continue;
                const double coef = 2.0 * weight * dg.depth;
                value += weight * dg.depth * dg.depth;
                grad[3 * i] -= coef * dg.d_dx;
                grad[3 * i + 1] -= coef * dg.d_dy;
                grad[3 * j] += coef * dg.d_dx;
                grad[3 * j + 1] += coef * dg.d_dy;
                grad[3 * i + 2] += coef * dg.d_ta;
                grad[3 * j + 2] += coef * dg.d_tb;
            }
        }
        return value;
    }

    // Non-overlap and near-active containment as explicit c(z) <= 0 rows.
    optim::ConstraintValues constraints(std::span<const double> z) const {
        optim::ConstraintValues out;
        const std::size_t dim = 3 * n_ + 1;
        const double L = z[3 * n_];
        const auto& dirs = directions();
        for (std::size_t i = 0; i < n_; ++i) {
            const double x = z[3 * i], y = z[3 * i + 1], t = z[3 * i + 2];
            for (int k = 0; k < 6; ++k) {
                const double delta = std::remainder(dirs.phi[k] - t, kPi / 3.0);
                const double excess = x * dirs.u[k].x + y * dirs.u[k].y + std::cos(delta) - L * kApothemRatio;
                if (excess < -0.5) continue;
                std::vector<double> row(dim, 0.0);
                row[3 * i] = dirs.u[k].x;
                row[3 * i + 1] = dirs.u[k].y;
                row[3 * i + 2] = std::sin(delta);
                row[3 * n_] = -kApothemRatio;
                out.values.push_back(excess);
                out.jacobian.push_back(std::move(row));
            }
        }
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = i + 1; j < n_; ++j) {
                const double dx = z[3 * j] - z[3 * i];
                const double dy = z[3 * j + 1] - z[3 * i + 1];
                if (dx * dx + dy * dy >= 2.5 * 2.5) continue;
                const DepthGradient dg = pair_depth_gradient(dx, dy, z[3 * i + 2], z[3 * j + 2]);
                std::vector<double> row(dim, 0.0);
                row[3 * i] = -dg.d_dx;
                row[3 * i + 1] = -dg.d_dy;
                row[3 * j] = dg.d_dx;
                row[3 * j + 1] = dg.d_dy;
                row[3 * i + 2] = dg.d_ta;
                row[3 * j + 2] = dg.d_tb;
                out.values.push_back(dg.depth);
                out.jacobian.push_back(std::move(row));
            }
        }
        return out;
    }

private:
    std::size_t n_;
};

std::vector<double> pack(const HexConfig& c, double L) {
    std::vector<double> z(3 * c.size() + 1);
    for (std::size_t i = 0; i < c.size(); ++i) {
        z[3 * i] = c.centers[i].x;
        z[3 * i + 1] = c.centers[i].y;
        z[3 * i + 2] = c.angles[i];
    }
    z.back() = L;
    return z;
}

HexConfig unpack(std::span<const double> z, std::size_t n) {
    HexConfig c;
    c.centers.resize(n);
    c.angles.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.centers[i] = {z[3 * i], z[3 * i + 1]};
        c.angles[i] = z[3 * i + 2];
    }
    return c;
}

bool all_finite(const HexConfig& c) {
    for (const auto& p : c.centers) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    }
    return std::all_of(c.angles.begin(), c.angles.end(), [](double a) { return std::isfinite(a); });
}

} // namespace

ConstraintViolation::ConstraintViolation(ValidationReport report)
    : Error(describe(report)), report_(std::move(report)) {}

std::string to_string(OptimizerMode mode) {
    return mode == OptimizerMode::gradient ? "gradient" : "sqp";
}

OptimizerMode optimizer_mode_from_string(const std::string& s) {
    if (s == "gradient" || s == "default") return OptimizerMode::gradient;
    if (s == "sqp" || s == "extended") return OptimizerMode::sqp;
    throw InvalidArgument("unknown optimizer mode: " + s);
}

ImproveParams improve_params_for(OptimizerMode mode) {
    ImproveParams p;
    p.mode = mode;
    if (mode == OptimizerMode::sqp) {
        p.initial_penalty = 1.0;
        p.rounds = 7;
        p.max_iterations = 1000;
        p.bound_scale = 3.0;
    }
    return p;
}

void check_well_formed(const HexConfig& c) {
    if (c.centers.size() != c.angles.size()) {
        throw MalformedSolution("centers and angles differ in length");
    }
    if (c.centers.empty()) throw MalformedSolution("empty configuration");
    if (!all_finite(c)) throw MalformedSolution("non-finite coordinate");
}

std::vector<Point2> all_vertices(const HexConfig& c) {
    std::vector<Point2> out;
    out.reserve(6 * c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto v = geometry::hex_vertices(c.hexagon(i));
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

double side_length(const HexConfig& c) {
    return geometry::min_enclosing_side(all_vertices(c));
}

ValidationReport validate(const HexConfig& c) {
    check_well_formed(c);
    ValidationReport r;
    r.side_length = side_length(c);
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = i + 1; j < c.size(); ++j) {
            const double d = geometry::penetration_depth(c.hexagon(i), c.hexagon(j));
            if (d > geometry::kOverlapTolerance) r.overlaps.push_back({i, j, d});
        }
    }
    return r;
}

double fitness(const HexConfig& c) {
    ValidationReport r = validate(c);
    if (!r.valid()) throw ConstraintViolation(std::move(r));
    return -r.side_length;
}

HexConfig lattice(int n, double dilation) {
    if (n < 1 || n > kMaxHexagons) throw InvalidArgument("hexagon count out of range [1, 64]");
    const Point2 a{1.5, geometry::kSqrt3 / 2.0};
    const Point2 b{1.5, -geometry::kSqrt3 / 2.0};
    struct Site {
        Point2 p;
        double r2;
        double theta;
    };
    std::vector<Site> sites;
    constexpr int kRange = 12;
    for (int i = -kRange; i <= kRange; ++i) {
        for (int j = -kRange; j <= kRange; ++j) {
            const Point2 p = static_cast<double>(i) * a + static_cast<double>(j) * b;
            const double r2 = std::round(dot(p, p) * 1e9) / 1e9;
            sites.push_back({p, r2, r2 == 0.0 ? 0.0 : canonical_angle(std::atan2(p.y, p.x))});
        }
    }
    std::sort(sites.begin(), sites.end(), [](const Site& l, const Site& r) {
        if (l.r2 != r.r2) return l.r2 < r.r2;
        return l.theta < r.theta;
    });
    HexConfig c;
    for (int k = 0; k < n; ++k) {
        c.centers.push_back(dilation * sites[k].p);
        c.angles.push_back(0.0);
    }
    return c;
}

HexConfig generate(int n, std::uint64_t seed, const OperatorParams& params) {
    if (n < 1 || n > kMaxHexagons) throw InvalidArgument("hexagon count out of range [1, 64]");
    // A small gap between lattice neighbors leaves room for the jitter.
    const HexConfig base = lattice(n, 1.001);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> noise(3 * n);
    for (double& v : noise) v = normal(rng);

    double scale = params.generate_jitter;
    for (int attempt = 0; attempt <= 20 && scale > 0.0; ++attempt, scale *= 0.5) {
        HexConfig c = base;
        for (int i = 0; i < n; ++i) {
            c.centers[i].x += scale * noise[3 * i];
            c.centers[i].y += scale * noise[3 * i + 1];
            c.angles[i] += scale * noise[3 * i + 2];
        }
        canonicalize(c);
        if (validate(c).valid()) return c;
    }
    return base;
}

HexConfig separate_by_dilation(const HexConfig& c) {
    double factor = 1.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = i + 1; j < c.size(); ++j) {
            const auto a = c.hexagon(i);
            const auto b = c.hexagon(j);
            if (geometry::penetration_depth(a, b) <= 0.0) continue;
            const Point2 d = b.center - a.center;
            // Scaling the offset by s shrinks the overlap on axis u by
            // (s - 1)|d.u|; the pair separates once any axis clears.
            double need = std::numeric_limits<double>::infinity();
            for (const auto* owner : {&a, &b}) {
                for (int k = 0; k < 3; ++k) {
                    const double phi = owner->angle + kPi / 6.0 + k * kPi / 3.0;
                    const double proj = std::abs(d.x * std::cos(phi) + d.y * std::sin(phi));
                    if (proj < 1e-12) continue;
                    const double widths = geometry::support_halfwidth(a, phi) + geometry::support_halfwidth(b, phi);
                    need = std::min(need, widths / proj);
                }
            }
            if (!std::isfinite(need)) throw ImprovementFailed("coincident hexagon centers cannot be separated");
            factor = std::max(factor, need);
        }
    }
    if (factor == 1.0) return c;
    factor *= 1.0 + 1e-12;
    HexConfig out = c;
    for (auto& p : out.centers) p = factor * p;
    return out;
}

HexConfig improve(const HexConfig& c, OptimizerMode mode,
                  std::optional<std::chrono::steady_clock::time_point> deadline) {
    return improve(c, improve_params_for(mode), deadline);
}

HexConfig improve(const HexConfig& input, const ImproveParams& params,
                  std::optional<std::chrono::steady_clock::time_point> deadline) {
    check_well_formed(input);
    const std::size_t n = input.size();
    const ValidationReport before = validate(input);

    auto fallback = [&](const std::string& why) -> HexConfig {
        if (before.valid()) return input;
        throw ImprovementFailed("hex improve: " + why);
    };

    const double L0 = std::max(before.side_length, 1.0);
    std::vector<double> z = pack(input, L0);
    const double box = params.bound_scale * L0 + 2.0;
    optim::Bounds bounds;
    bounds.lower.assign(z.size(), -std::numeric_limits<double>::infinity());
    bounds.upper.assign(z.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        bounds.lower[3 * i] = bounds.lower[3 * i + 1] = -box;
        bounds.upper[3 * i] = bounds.upper[3 * i + 1] = box;
    }
    bounds.lower.back() = 1.0;

    PackingObjective objective(n);
    objective.weight = params.initial_penalty;
    for (int round = 0; round < params.rounds; ++round) {
        const optim::Objective f = [&](std::span<const double> x, std::span<double> g) { return objective(x, g); };
        optim::Result res;
        if (params.mode == OptimizerMode::gradient) {
            optim::LbfgsOptions opts;
            opts.max_iterations = params.max_iterations;
            opts.deadline = deadline;
            res = optim::lbfgs_minimize(f, z, opts, &bounds);
        } else {
            optim::SqpOptions opts;
            opts.max_iterations = params.max_iterations;
            opts.deadline = deadline;
            opts.max_step = 0.25;
            const optim::Constraints cons = [&](std::span<const double> x) { return objective.constraints(x); };
            res = optim::sqp_minimize(f, cons, z, opts, &bounds);
        }
        if (!std::all_of(res.x.begin(), res.x.end(), [](double v) { return std::isfinite(v); })) {
            return fallback("optimizer diverged");
        }
        z = std::move(res.x);
        objective.weight *= params.penalty_growth;
        if (deadline && std::chrono::steady_clock::now() >= *deadline) break;
    }

    HexConfig out;
    try {
        out = separate_by_dilation(unpack(z, n));
    } catch (const ImprovementFailed& e) {
        return fallback(e.what());
    }
    canonicalize(out);
    const ValidationReport after = validate(out);
    if (!after.valid()) return fallback("no valid configuration reached");
    if (before.valid() && after.side_length > before.side_length) return input;
    return out;
}

HexConfig perturb(const HexConfig& c, double sigma, std::uint64_t seed, const OperatorParams& params) {
    check_well_formed(c);
    if (!(sigma > 0.0)) throw InvalidArgument("perturb: sigma must be positive");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> center_noise(0.0, std::min(sigma, 10.0) * params.perturb_center_scale);
    std::normal_distribution<double> angle_noise(0.0, std::min(sigma, kPi));
    HexConfig out = c;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.centers[i].x += center_noise(rng);
        out.centers[i].y += center_noise(rng);
        out.angles[i] += angle_noise(rng);
    }
    if (sigma >= params.teleport_threshold) {
        const double L = side_length(c);
        std::uniform_int_distribution<std::size_t> pick(0, out.size() - 1);
        std::uniform_real_distribution<double> ux(-L, L);
        std::uniform_real_distribution<double> uy(-L * kApothemRatio, L * kApothemRatio);
        const std::size_t k = pick(rng);
        for (;;) {
            const Point2 p{ux(rng), uy(rng)};
            bool inside = true;
            for (const auto& nrm : geometry::container_normals()) {
                inside = inside && std::abs(dot(p, nrm)) <= L * kApothemRatio;
            }
            if (inside) {
                out.centers[k] = p;
                break;
            }
        }
    }
    canonicalize(out);
    return out;
}

} // namespace improvolve::hex
