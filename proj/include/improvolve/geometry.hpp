#pragma once

#include <array>
#include <numbers>
#include <span>
#include <vector>

namespace improvolve::geometry {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
    friend bool operator==(Point2, Point2) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }

/// Regular hexagon. The first vertex sits at `angle` (radians) from the
/// center; angle 0 is flat-topped.
struct Hexagon {
    Point2 center;
    double angle = 0.0;
    double circumradius = 1.0;
};

inline constexpr double kSqrt3 = std::numbers::sqrt3;

/// Overlap is declared iff penetration depth exceeds this (length units).
inline constexpr double kOverlapTolerance = 1e-9;

/// Vertices in counterclockwise order, vertex k at angle + k*60 degrees.
std::array<Point2, 6> hex_vertices(const Hexagon& h);

/// Unit normals of the flat-topped container's edges (30, 90, 150 degrees).
const std::array<Point2, 3>& container_normals();

/// Side of the smallest origin-centered flat-topped hexagon containing all
/// points. Throws InvalidArgument on an empty span.
double min_enclosing_side(std::span<const Point2> points);

/// Half-width of the projection of `h` onto unit direction `dir_angle`,
/// measured from the projected center.
double support_halfwidth(const Hexagon& h, double dir_angle);

/// Separating-axis depth: minimum projection-interval overlap over the edge
/// normals of both hexagons. Positive iff the interiors intersect.
double penetration_depth(const Hexagon& a, const Hexagon& b);

/// Area of a convex polygon given counterclockwise.
double polygon_area(std::span<const Point2> poly);

/// Clip convex `subject` by convex `clip` (both counterclockwise).
std::vector<Point2> clip_convex(std::span<const Point2> subject, std::span<const Point2> clip);

/// Exact overlap area computed by polygon clipping.
double intersection_area(const Hexagon& a, const Hexagon& b);

} // namespace improvolve::geometry
