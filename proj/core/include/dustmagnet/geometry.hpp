#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace dustmagnet {

// Tolerance used for degeneracy tests (coincident magnets, collinear
// corners, parallel axes), in view units.
inline constexpr double kGeomEpsilon = 1e-6;

// Barycentric weights down to -kEdgeTolerance count as zero, so a point on
// a shared triangle edge keeps both triangles.
inline constexpr double kEdgeTolerance = 1e-12;

struct Point2D {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2D&, const Point2D&) = default;
};

inline Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
inline Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }
inline Point2D operator*(double s, Point2D p) { return {s * p.x, s * p.y}; }

double dot(Point2D a, Point2D b);
double cross(Point2D a, Point2D b);
double distance(Point2D a, Point2D b);

// Relevance of an element to each magnet of a view: entries in [0,1], sum 1.
class WeightVector {
public:
    WeightVector() = default;

    // Validates entries; throws InvalidWeightVector.
    explicit WeightVector(std::vector<double> weights);

    static WeightVector unit(std::size_t n, std::size_t index);
    static WeightVector uniform(std::size_t n);

    // Clamps negatives to zero and rescales to sum 1. Throws when nothing
    // positive remains.
    static WeightVector normalized(std::vector<double> raw);

    std::size_t size() const { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }
    const std::vector<double>& values() const { return weights_; }
    auto begin() const { return weights_.begin(); }
    auto end() const { return weights_.end(); }

    friend bool operator==(const WeightVector&, const WeightVector&) = default;

private:
    std::vector<double> weights_;
};

bool approx_equal(const WeightVector& a, const WeightVector& b, double tol);

enum class Orientation { counter_clockwise, clockwise };

// Ordered magnet positions of one view. For n >= 3 the stored order traces a
// strictly convex polygon (either winding).
class MagnetLayout {
public:
    // Throws DegenerateLayout.
    explicit MagnetLayout(std::vector<Point2D> positions);

    // Non-throwing variant of the constructor's checks.
    static bool is_valid(std::span<const Point2D> positions);

    std::size_t size() const { return positions_.size(); }
    const Point2D& operator[](std::size_t i) const { return positions_[i]; }
    std::span<const Point2D> positions() const { return positions_; }
    Orientation orientation() const { return orientation_; }

    bool contains(Point2D p) const;

    // Nearest point of the hull (segment for n == 2).
    Point2D clamp_to_hull(Point2D p) const;

private:
    std::vector<Point2D> positions_;
    Orientation orientation_ = Orientation::counter_clockwise;
};

Point2D weights_to_position(const MagnetLayout& layout, const WeightVector& w);

// Inverse mapping. Points outside the hull are first clamped onto it.
// n == 2 projects onto the segment, n == 3 is the exact barycentric solve,
// n > 3 averages the non-negative barycentric solutions of every magnet
// triple.
WeightVector position_to_weights(const MagnetLayout& layout, Point2D p);

// Barycentric coordinates of p in triangle (a, b, c). Throws
// DegenerateLayout for a (near) collinear triangle.
std::array<double, 3> barycentric(Point2D a, Point2D b, Point2D c, Point2D p);

struct Rect {
    Point2D min;
    Point2D max;
    bool contains(Point2D p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
    }
};

// Two 2-magnet views fused into one plane.
class CrossedAxes {
public:
    // Throws DegenerateLayout if either axis is not exactly two distinct
    // magnets or the axes are parallel.
    CrossedAxes(MagnetLayout axis_a, MagnetLayout axis_b, Rect frame);

    // Axis A horizontal across the unit square at y = 0.5, axis B vertical
    // at x = 0.5. This is the plane the server exposes for crossed views.
    static CrossedAxes unit_plane();

    const MagnetLayout& axis_a() const { return axis_a_; }
    const MagnetLayout& axis_b() const { return axis_b_; }
    const Rect& frame() const { return frame_; }

private:
    MagnetLayout axis_a_;
    MagnetLayout axis_b_;
    Rect frame_;
};

std::pair<WeightVector, WeightVector> crossed_position_to_weights(const CrossedAxes& axes, Point2D p);

Point2D crossed_weights_to_position(const CrossedAxes& axes, const WeightVector& wa, const WeightVector& wb);

// Returns `proposed` if moving magnet `moved_index` there keeps the layout
// valid, otherwise the nearest position that does.
Point2D validate_or_project_convex(const MagnetLayout& layout, std::size_t moved_index, Point2D proposed);

} // namespace dustmagnet
