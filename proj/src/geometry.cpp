#include "improvolve/geometry.hpp"

#include "improvolve/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace improvolve::geometry {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kSixth = kPi / 3.0;
} // namespace

std::array<Point2, 6> hex_vertices(const Hexagon& h) {
    std::array<Point2, 6> out{};
    for (int k = 0; k < 6; ++k) {
        const double a = h.angle + k * kSixth;
        out[k] = {h.center.x + h.circumradius * std::cos(a), h.center.y + h.circumradius * std::sin(a)};
    }
    return out;
}

const std::array<Point2, 3>& container_normals() {
    static const std::array<Point2, 3> normals = {
        Point2{std::cos(kPi / 6.0), std::sin(kPi / 6.0)},
        Point2{0.0, 1.0},
        Point2{std::cos(5.0 * kPi / 6.0), std::sin(5.0 * kPi / 6.0)},
    };
    return normals;
}

double min_enclosing_side(std::span<const Point2> points) {
    if (points.empty()) {
        throw InvalidArgument("min_enclosing_side: empty point set");
    }
    double apothem = 0.0;
    for (const Point2& p : points) {
        for (const Point2& n : container_normals()) {
            apothem = std::max(apothem, std::abs(dot(p, n)));
        }
    }
    return apothem * 2.0 / kSqrt3;
}

double support_halfwidth(const Hexagon& h, double dir_angle) {
    // Offset to the nearest vertex direction lies in [-30, 30] degrees.
    const double delta = std::remainder(dir_angle - h.angle, kSixth);
    return h.circumradius * std::cos(delta);
}

double penetration_depth(const Hexagon& a, const Hexagon& b) {
    const Point2 d = b.center - a.center;
    double depth = std::numeric_limits<double>::infinity();
    for (const Hexagon* owner : {&a, &b}) {
        for (int k = 0; k < 3; ++k) {
            const double phi = owner->angle + kPi / 6.0 + k * kSixth;
            const Point2 u{std::cos(phi), std::sin(phi)};
            const double overlap =
                support_halfwidth(a, phi) + support_halfwidth(b, phi) - std::abs(dot(d, u));
            depth = std::min(depth, overlap);
        }
    }
    return depth;
}

double polygon_area(std::span<const Point2> poly) {
    if (poly.size() < 3) return 0.0;
    double twice = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        twice += cross(poly[i], poly[(i + 1) % poly.size()]);
    }
    return 0.5 * twice;
}

std::vector<Point2> clip_convex(std::span<const Point2> subject, std::span<const Point2> clip) {
    std::vector<Point2> out(subject.begin(), subject.end());
    for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
        const Point2 p0 = clip[e];
        const Point2 p1 = clip[(e + 1) % clip.size()];
        const Point2 edge = p1 - p0;
        auto side = [&](Point2 q) { return cross(edge, q - p0); };

        std::vector<Point2> in = std::move(out);
        out.clear();
        for (std::size_t i = 0; i < in.size(); ++i) {
            const Point2 cur = in[i];
            const Point2 nxt = in[(i + 1) % in.size()];
            const double sc = side(cur);
            const double sn = side(nxt);
            if (sc >= 0.0) out.push_back(cur);
            if ((sc >= 0.0) != (sn >= 0.0)) {
                const double t = sc / (sc - sn);
                out.push_back(cur + t * (nxt - cur));
            }
        }
    }
    return out;
}

double intersection_area(const Hexagon& a, const Hexagon& b) {
    const auto va = hex_vertices(a);
    const auto vb = hex_vertices(b);
    const auto poly = clip_convex(va, vb);
    return std::max(0.0, polygon_area(poly));
}

} // namespace improvolve::geometry
