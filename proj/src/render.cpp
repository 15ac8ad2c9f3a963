#include "improvolve/render.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace improvolve::render {

namespace {

constexpr double kWidth = 640.0;

std::string header(double w, double h) {
    return fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
                       "viewBox=\"0 0 {:.0f} {:.0f}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
                       w, h, w, h);
}

template <class Pts>
std::string points_attr(const Pts& pts) {
    std::string s;
    for (const auto& [x, y] : pts) s += fmt::format("{:.3f},{:.3f} ", x, y);
    if (!s.empty()) s.pop_back();
    return s;
}

// Maps samples into a box; y grows upwards in data space.
struct Panel {
    double x0, y0, w, h;
    double xmin, xmax, ymin, ymax;

    std::pair<double, double> map(double x, double y) const {
        const double sx = xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.5;
        const double sy = ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.5;
        return {x0 + sx * w, y0 + h - sy * h};
    }

    std::string frame() const {
        return fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" "
                           "stroke=\"#999\"/>\n",
                           x0, y0, w, h);
    }
};

} // namespace

std::string hex_svg(const hex::HexConfig& c) {
    hex::check_well_formed(c);
    const double L = hex::side_length(c);
    const double margin = 30.0;
    const double scale = (kWidth - 2 * margin) / (2.0 * L);
    const double height = kWidth + 30.0;
    auto map = [&](geometry::Point2 p) { return std::pair{kWidth / 2 + p.x * scale, kWidth / 2 - p.y * scale}; };

    std::vector<std::pair<double, double>> outer;
    for (int k = 0; k < 6; ++k) {
        const double a = k * std::numbers::pi / 3.0;
        outer.push_back(map({L * std::cos(a), L * std::sin(a)}));
    }
    std::string svg = header(kWidth, height);
    svg += fmt::format("<polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n", points_attr(outer));
    for (std::size_t i = 0; i < c.size(); ++i) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& v : geometry::hex_vertices(c.hexagon(i))) pts.push_back(map(v));
        svg += fmt::format("<polygon points=\"{}\" fill=\"#8ab4e8\" stroke=\"#1f4e8c\" stroke-width=\"1\"/>\n",
                           points_attr(pts));
    }
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"18\" "
                       "text-anchor=\"middle\">n = {}, L = {:.4f}</text>\n",
                       kWidth / 2, height - 10.0, c.size(), L);
    svg += "</svg>\n";
    return svg;
}

std::string aci_svg(const aci::StepFunction& f) {
    aci::check_valid(f.values);
    const auto report = aci::fitness(f);
    const auto g = aci::autoconvolve(f.values);
    const double fmax = *std::max_element(f.values.begin(), f.values.end());
    const double gmax = *std::max_element(g.begin(), g.end());
    const double height = 560.0;

    std::string svg = header(kWidth, height);
    const Panel top{40, 30, kWidth - 60, 200, 0.0, static_cast<double>(f.size()), 0.0, fmax};
    const Panel bottom{40, 290, kWidth - 60, 200, 0.0, static_cast<double>(g.size() - 1), 0.0, gmax};
    svg += top.frame();
    svg += bottom.frame();

    std::vector<std::pair<double, double>> steps;
    for (std::size_t i = 0; i < f.size(); ++i) {
        steps.push_back(top.map(static_cast<double>(i), f.values[i]));
        steps.push_back(top.map(static_cast<double>(i + 1), f.values[i]));
    }
    svg += fmt::format("<polyline class=\"f\" points=\"{}\" fill=\"none\" stroke=\"#1f4e8c\" stroke-width=\"1.5\"/>\n",
                       points_attr(steps));

    std::vector<std::pair<double, double>> conv;
    for (std::size_t k = 0; k < g.size(); ++k) conv.push_back(bottom.map(static_cast<double>(k), g[k]));
    svg += fmt::format("<polyline class=\"autoconvolution\" points=\"{}\" fill=\"none\" stroke=\"#b8461b\" "
                       "stroke-width=\"1.5\"/>\n",
                       points_attr(conv));

    svg += fmt::format("<text x=\"40\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">f ({} steps)</text>\n",
                       f.size());
    svg += fmt::format("<text x=\"40\" y=\"282\" font-family=\"sans-serif\" font-size=\"14\">f*f</text>\n");
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"18\" "
                       "text-anchor=\"middle\">C = {:.5f}</text>\n",
                       kWidth / 2, height - 20.0, report.c_value);
    svg += "</svg>\n";
    return svg;
}

std::string trace_svg(const basinhop::RunTrace& t) {
    const double height = 400.0;
    std::string svg = header(kWidth, height);
    if (t.best_fitness_curve.empty()) {
        svg += "<text x=\"20\" y=\"40\" font-family=\"sans-serif\">empty trace</text>\n</svg>\n";
        return svg;
    }
    double lo = *std::min_element(t.best_fitness_curve.begin(), t.best_fitness_curve.end());
    double hi = *std::max_element(t.best_fitness_curve.begin(), t.best_fitness_curve.end());
    for (const auto& ev : t.events) {
        if (ev.fitness_after) lo = std::min(lo, *ev.fitness_after);
    }
    // Keep wildly bad attempts from flattening the curve.
    lo = std::max(lo, hi - 10.0 * std::max(hi - *std::min_element(t.best_fitness_curve.begin(), t.best_fitness_curve.end()), 1e-3));
    const std::size_t n = t.best_fitness_curve.size();
    const std::size_t offset = t.events.size() - n; // events before the first valid start
    const Panel panel{60, 30, kWidth - 90, height - 90, 0.0, static_cast<double>(std::max<std::size_t>(t.events.size(), 2) - 1),
                      lo, hi};
    svg += panel.frame();

    for (std::size_t i = 0; i < t.events.size(); ++i) {
        const auto& ev = t.events[i];
        if (!ev.fitness_after || *ev.fitness_after < lo) continue;
        const auto [x, y] = panel.map(static_cast<double>(i), *ev.fitness_after);
        svg += fmt::format("<circle cx=\"{:.3f}\" cy=\"{:.3f}\" r=\"2\" fill=\"{}\"/>\n", x, y,
                           ev.accepted ? "#2a8c3a" : "#bbbbbb");
    }
    std::vector<std::pair<double, double>> best;
    for (std::size_t i = 0; i < n; ++i) best.push_back(panel.map(static_cast<double>(i + offset), t.best_fitness_curve[i]));
    svg += fmt::format("<polyline class=\"best\" points=\"{}\" fill=\"none\" stroke=\"#1f4e8c\" stroke-width=\"2\"/>\n",
                       points_attr(best));
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"14\" "
                       "text-anchor=\"middle\">iteration</text>\n",
                       kWidth / 2, height - 30.0);
    svg += fmt::format("<text x=\"60\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">best fitness {:.6f}</text>\n",
                       t.best_fitness_curve.back());
    svg += "</svg>\n";
    return svg;
}

} // namespace improvolve::render
