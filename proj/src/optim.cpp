#include "improvolve/optim.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace improvolve::optim {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double inf_norm(std::span<const double> a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

bool past(const std::optional<Clock::time_point>& deadline) {
    return deadline && Clock::now() >= *deadline;
}

struct Box {
    const Bounds* bounds;

    double lo(std::size_t i) const {
        return bounds ? bounds->lower[i] : -std::numeric_limits<double>::infinity();
    }
    double hi(std::size_t i) const {
        return bounds ? bounds->upper[i] : std::numeric_limits<double>::infinity();
    }
    void project(std::vector<double>& x) const {
        if (!bounds) return;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo(i), hi(i));
    }
    // Coordinate pinned at a bound with the gradient pushing outward.
    bool pinned(std::size_t i, double xi, double gi) const {
        return (xi <= lo(i) && gi > 0.0) || (xi >= hi(i) && gi < 0.0);
    }
};

struct CurvaturePair {
    std::vector<double> s;
    std::vector<double> y;
    double rho;
};

} // namespace

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h) {
    std::vector<double> xp(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(xp);
        xp[i] = orig - h;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Result lbfgs_minimize(const Objective& f, std::vector<double> x, const LbfgsOptions& options,
                      const Bounds* bounds) {
    const Box box{bounds};
    const std::size_t n = x.size();
    box.project(x);

    Result result;
    std::vector<double> g(n), g_new(n), x_new(n), d(n), alpha_hist;
    double fx = f(x, g);
    ++result.evaluations;
    std::deque<CurvaturePair> memory;
    int stall = 0;

    auto finish = [&](std::string reason) {
        result.x = std::move(x);
        result.value = fx;
        result.stop_reason = std::move(reason);
        return result;
    };

    if (!std::isfinite(fx)) return finish("non-finite objective");

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        result.iterations = iter + 1;
        if (past(options.deadline)) return finish("deadline");

        // Projected gradient: zero the coordinates pinned at a bound.
        std::vector<bool> free(n, true);
        for (std::size_t i = 0; i < n; ++i) free[i] = !box.pinned(i, x[i], g[i]);
        double pg_norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (free[i]) pg_norm = std::max(pg_norm, std::abs(g[i]));
        }
        if (pg_norm < options.gradient_tolerance) return finish("gradient tolerance");

        // Two-loop recursion on the free subspace.
        for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
        alpha_hist.assign(memory.size(), 0.0);
        for (std::size_t k = memory.size(); k-- > 0;) {
            const auto& m = memory[k];
            alpha_hist[k] = m.rho * dot(m.s, d);
            for (std::size_t i = 0; i < n; ++i) d[i] -= alpha_hist[k] * m.y[i];
        }
        if (!memory.empty()) {
            const auto& last = memory.back();
            const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
            for (double& v : d) v *= gamma;
        }
        for (std::size_t k = 0; k < memory.size(); ++k) {
            const auto& m = memory[k];
            const double beta = m.rho * dot(m.y, d);
            for (std::size_t i = 0; i < n; ++i) d[i] += (alpha_hist[k] - beta) * m.s[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!free[i]) d[i] = 0.0;
        }

        double slope = dot(g, d);
        if (!(slope < 0.0)) {
            memory.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
            slope = dot(g, d);
        }

        double step = memory.empty() ? std::min(1.0, 1.0 / std::max(inf_norm(d), 1e-300)) : 1.0;
        double f_new = fx;
        bool accepted = false;
        for (int bt = 0; bt < 40; ++bt) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * d[i];
            box.project(x_new);
            double decrease = 0.0;
            for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (x_new[i] - x[i]);
            f_new = f(x_new, g_new);
            ++result.evaluations;
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * decrease) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!memory.empty()) {
                memory.clear();
                continue;
            }
            return finish("line search failed");
        }

        CurvaturePair pair{std::vector<double>(n), std::vector<double>(n), 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            pair.s[i] = x_new[i] - x[i];
            pair.y[i] = g_new[i] - g[i];
        }
        const double sy = dot(pair.s, pair.y);
        if (sy > 1e-12 * std::sqrt(dot(pair.s, pair.s) * dot(pair.y, pair.y))) {
            pair.rho = 1.0 / sy;
            memory.push_back(std::move(pair));
            if (static_cast<int>(memory.size()) > options.history) memory.pop_front();
        }

        const double rel = (fx - f_new) / std::max({std::abs(fx), std::abs(f_new), 1.0});
        stall = rel < options.function_tolerance ? stall + 1 : 0;
        x.swap(x_new);
        g.swap(g_new);
        fx = f_new;
        if (stall >= options.stall_limit) return finish("function tolerance");
    }
    return finish("max iterations");
}

namespace {

// min 1/2 d'Bd + g'd  s.t.  A d <= b, solved through its dual by
// projected coordinate descent (Hildreth).
Eigen::VectorXd solve_qp(const Eigen::MatrixXd& B_inv, const Eigen::VectorXd& g, const Eigen::MatrixXd& A,
                         const Eigen::VectorXd& b, Eigen::VectorXd& lambda) {
    const Eigen::Index m = A.rows();
    lambda = Eigen::VectorXd::Zero(m);
    if (m == 0) return -B_inv * g;
    const Eigen::MatrixXd AB = A * B_inv;
    const Eigen::MatrixXd Q = AB * A.transpose();
    const Eigen::VectorXd p = AB * g + b;
    Eigen::VectorXd Ql = Eigen::VectorXd::Zero(m);
    for (int sweep = 0; sweep < 2000; ++sweep) {
        double change = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (Q(i, i) <= 1e-300) continue;
            const double updated = std::max(0.0, lambda(i) - (Ql(i) + p(i)) / Q(i, i));
            const double delta = updated - lambda(i);
            if (delta != 0.0) {
                Ql += delta * Q.col(i);
                lambda(i) = updated;
                change = std::max(change, std::abs(delta));
            }
        }
        if (change < 1e-13 * (1.0 + lambda.cwiseAbs().maxCoeff())) break;
    }
    return -B_inv * (g + A.transpose() * lambda);
}

double violation(const std::vector<double>& c) {
    double v = 0.0;
    for (double ci : c) v += std::max(0.0, ci);
    return v;
}

} // namespace

Result sqp_minimize(const Objective& f, const Constraints& constraints, std::vector<double> x,
                    const SqpOptions& options, const Bounds* bounds) {
    const Box box{bounds};
    const std::size_t n = x.size();
    box.project(x);

    Result result;
    std::vector<double> g(n), g_trial(n);
    double fx = f(x, g);
    ++result.evaluations;
    ConstraintValues cv = constraints(x);
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n);
    double mu = 1.0;

    auto finish = [&](std::string reason) {
        result.x = std::move(x);
        result.value = fx;
        result.stop_reason = std::move(reason);
        return result;
    };

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        result.iterations = iter + 1;
        if (past(options.deadline)) return finish("deadline");

        // Rows: nonlinear constraints, bounds, step box.
        const std::size_t mc = cv.values.size();
        std::vector<Eigen::RowVectorXd> rows;
        std::vector<double> rhs;
        rows.reserve(mc + 4 * n);
        for (std::size_t k = 0; k < mc; ++k) {
            rows.emplace_back(Eigen::Map<const Eigen::RowVectorXd>(cv.jacobian[k].data(), n));
            rhs.push_back(-cv.values[k]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double up = std::min(box.hi(i) - x[i], options.max_step);
            const double down = std::min(x[i] - box.lo(i), options.max_step);
            Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
            e(i) = 1.0;
            rows.push_back(e);
            rhs.push_back(up);
            rows.push_back(-e);
            rhs.push_back(down);
        }
        Eigen::MatrixXd A(rows.size(), n);
        Eigen::VectorXd b(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            A.row(r) = rows[r];
            b(r) = rhs[r];
        }
        const Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(g.data(), n);
        const Eigen::MatrixXd B_inv = B.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
        Eigen::VectorXd lambda;
        const Eigen::VectorXd d = solve_qp(B_inv, gv, A, b, lambda);
        if (!d.allFinite()) return finish("non-finite step");

        const double viol = violation(cv.values);
        if (d.lpNorm<Eigen::Infinity>() < options.step_tolerance && viol <= options.feasibility_tolerance) {
            return finish("converged");
        }

        double lambda_max = 0.0;
        for (std::size_t k = 0; k < mc; ++k) lambda_max = std::max(lambda_max, lambda(k));
        mu = std::max(mu, 2.0 * lambda_max);

        const double merit = fx + mu * viol;
        const double directional = gv.dot(d) - mu * viol;
        double step = 1.0;
        std::vector<double> x_trial(n);
        double f_trial = fx;
        ConstraintValues cv_trial;
        bool accepted = false;
        for (int bt = 0; bt < 30; ++bt) {
            for (std::size_t i = 0; i < n; ++i) x_trial[i] = x[i] + step * d(i);
            box.project(x_trial);
            f_trial = f(x_trial, g_trial);
            ++result.evaluations;
            cv_trial = constraints(x_trial);
            const double merit_trial = f_trial + mu * violation(cv_trial.values);
            if (std::isfinite(merit_trial) && merit_trial <= merit + 1e-4 * step * std::min(directional, 0.0)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!B.isIdentity()) {
                B.setIdentity();
                continue;
            }
            return finish("line search failed");
        }

        // Damped BFGS on the Lagrangian gradient. The constraint set may
        // differ between points, so only the objective part is used.
        Eigen::VectorXd s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s(i) = x_trial[i] - x[i];
            y(i) = g_trial[i] - g[i];
        }
        const Eigen::VectorXd Bs = B * s;
        const double sBs = s.dot(Bs);
        const double sy = s.dot(y);
        if (sBs > 1e-300) {
            const double theta = sy >= 0.2 * sBs ? 1.0 : 0.8 * sBs / (sBs - sy);
            const Eigen::VectorXd r = theta * y + (1.0 - theta) * Bs;
            const double sr = s.dot(r);
            if (sr > 1e-300) B += r * r.transpose() / sr - Bs * Bs.transpose() / sBs;
        }

        x.swap(x_trial);
        g.swap(g_trial);
        fx = f_trial;
        cv = std::move(cv_trial);
    }
    return finish("max iterations");
}

} // namespace improvolve::optim
