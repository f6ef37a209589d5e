#include "dustmagnet/geometry.hpp"

#include "dustmagnet/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>

namespace dustmagnet {

double dot(Point2D a, Point2D b) { return a.x * b.x + a.y * b.y; }
double cross(Point2D a, Point2D b) { return a.x * b.y - a.y * b.x; }
double distance(Point2D a, Point2D b) { return std::hypot(a.x - b.x, a.y - b.y); }

namespace {

bool finite(Point2D p) { return std::isfinite(p.x) && std::isfinite(p.y); }

constexpr double kSumTolerance = 1e-9;

Point2D project_onto_segment(Point2D a, Point2D b, Point2D p, double* t_out = nullptr) {
    const Point2D d = b - a;
    const double len2 = dot(d, d);
    double t = len2 > 0.0 ? dot(p - a, d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    if (t_out) *t_out = t;
    return a + t * d;
}

// Turn at each corner, normalized to the sine of the turning angle.
std::optional<Orientation> convex_orientation(std::span<const Point2D> pts) {
    const std::size_t n = pts.size();
    int sign = 0;
    double total_turn = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const Point2D prev = pts[(k + n - 1) % n];
        const Point2D cur = pts[k];
        const Point2D next = pts[(k + 1) % n];
        const Point2D e1 = cur - prev;
        const Point2D e2 = next - cur;
        const double c = cross(e1, e2);
        const double sine = c / (std::hypot(e1.x, e1.y) * std::hypot(e2.x, e2.y));
        if (!(std::abs(sine) > kGeomEpsilon)) return std::nullopt;
        const int s = sine > 0 ? 1 : -1;
        if (sign == 0) sign = s;
        else if (sign != s) return std::nullopt;
        total_turn += std::atan2(c, dot(e1, e2));
    }
    // A pentagram turns the same way at every corner but winds twice.
    if (std::abs(std::abs(total_turn) - 2.0 * std::numbers::pi) > 1e-6) return std::nullopt;
    return sign > 0 ? Orientation::counter_clockwise : Orientation::clockwise;
}

} // namespace

WeightVector::WeightVector(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw Error(ErrorCode::InvalidWeightVector, "weight vector is empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        double& w = weights_[i];
        if (!std::isfinite(w) || w < -kEdgeTolerance || w > 1.0 + kEdgeTolerance) {
            throw Error(ErrorCode::InvalidWeightVector,
                        "weight " + std::to_string(i) + " is outside [0,1]");
        }
        w = std::clamp(w, 0.0, 1.0);
        sum += w;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        throw Error(ErrorCode::InvalidWeightVector, "weights sum to " + std::to_string(sum) + ", not 1");
    }
}

WeightVector WeightVector::unit(std::size_t n, std::size_t index) {
    std::vector<double> w(n, 0.0);
    w.at(index) = 1.0;
    return WeightVector(std::move(w));
}

WeightVector WeightVector::uniform(std::size_t n) {
    return WeightVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

WeightVector WeightVector::normalized(std::vector<double> raw) {
    double total = 0.0;
    for (double& w : raw) {
        if (!std::isfinite(w)) throw Error(ErrorCode::InvalidWeightVector, "non-finite weight");
        w = std::max(w, 0.0);
        total += w;
    }
    if (!(total > 0.0)) throw Error(ErrorCode::InvalidWeightVector, "no positive weight to normalize");
    for (double& w : raw) w /= total;
    return WeightVector(std::move(raw));
}

bool approx_equal(const WeightVector& a, const WeightVector& b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) > tol) return false;
    }
    return true;
}

bool MagnetLayout::is_valid(std::span<const Point2D> positions) {
    const std::size_t n = positions.size();
    if (n < 2) return false;
    for (std::size_t i = 0; i < n; ++i) {
        if (!finite(positions[i])) return false;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (distance(positions[i], positions[j]) <= kGeomEpsilon) return false;
        }
    }
    return n == 2 || convex_orientation(positions).has_value();
}

MagnetLayout::MagnetLayout(std::vector<Point2D> positions) : positions_(std::move(positions)) {
    const std::size_t n = positions_.size();
    if (n < 2) throw Error(ErrorCode::DegenerateLayout, "a view needs at least two magnets");
    for (std::size_t i = 0; i < n; ++i) {
        if (!finite(positions_[i])) {
            throw Error(ErrorCode::DegenerateLayout, "magnet " + std::to_string(i) + " has a non-finite position");
        }
        for (std::size_t j = i + 1; j < n; ++j) {
            if (distance(positions_[i], positions_[j]) <= kGeomEpsilon) {
                throw Error(ErrorCode::DegenerateLayout,
                            "magnets " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
            }
        }
    }
    if (n >= 3) {
        auto orientation = convex_orientation(positions_);
        if (!orientation) {
            throw Error(ErrorCode::DegenerateLayout, "magnets do not form a strictly convex polygon in stored order");
        }
        orientation_ = *orientation;
    }
}

bool MagnetLayout::contains(Point2D p) const {
    const std::size_t n = positions_.size();
    if (n == 2) {
        const Point2D d = positions_[1] - positions_[0];
        if (std::abs(cross(d, p - positions_[0])) > 0.0) return false;
        const double t = dot(p - positions_[0], d) / dot(d, d);
        return t >= 0.0 && t <= 1.0;
    }
    const double s = orientation_ == Orientation::counter_clockwise ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        const Point2D a = positions_[k];
        const Point2D b = positions_[(k + 1) % n];
        if (s * cross(b - a, p - a) < 0.0) return false;
    }
    return true;
}

Point2D MagnetLayout::clamp_to_hull(Point2D p) const {
    const std::size_t n = positions_.size();
    if (n == 2) return project_onto_segment(positions_[0], positions_[1], p);
    if (contains(p)) return p;
    Point2D best = positions_[0];
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
        const Point2D q = project_onto_segment(positions_[k], positions_[(k + 1) % n], p);
        const double d = distance(p, q);
        if (d < best_dist) {
            best_dist = d;
            best = q;
        }
    }
    return best;
}

Point2D weights_to_position(const MagnetLayout& layout, const WeightVector& w) {
    if (w.size() != layout.size()) {
        throw Error(ErrorCode::InvalidWeightVector,
                    "expected " + std::to_string(layout.size()) + " weights, got " + std::to_string(w.size()));
    }
    Point2D p{0.0, 0.0};
    for (std::size_t i = 0; i < layout.size(); ++i) p = p + w[i] * layout[i];
    return p;
}

std::array<double, 3> barycentric(Point2D a, Point2D b, Point2D c, Point2D p) {
    const double det = cross(b - a, c - a);
    const double scale = distance(a, b) * distance(a, c);
    if (!(std::abs(det) > kGeomEpsilon * scale)) {
        throw Error(ErrorCode::DegenerateLayout, "collinear magnet triple");
    }
    const double wa = cross(b - p, c - p) / det;
    const double wb = cross(c - p, a - p) / det;
    const double wc = cross(a - p, b - p) / det;
    return {wa, wb, wc};
}

WeightVector position_to_weights(const MagnetLayout& layout, Point2D p) {
    if (!finite(p)) throw Error(ErrorCode::InvalidWeightVector, "position is not finite");
    const std::size_t n = layout.size();
    const Point2D q = layout.clamp_to_hull(p);

    if (n == 2) {
        double t = 0.0;
        project_onto_segment(layout[0], layout[1], q, &t);
        return WeightVector({1.0 - t, t});
    }

    std::vector<double> sums(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            for (std::size_t k = j + 1; k < n; ++k) {
                auto w = barycentric(layout[i], layout[j], layout[k], q);
                if (w[0] < -kEdgeTolerance || w[1] < -kEdgeTolerance || w[2] < -kEdgeTolerance) continue;
                for (double& v : w) v = std::max(v, 0.0);
                sums[i] += w[0];
                sums[j] += w[1];
                sums[k] += w[2];
                total += w[0] + w[1] + w[2];
            }
        }
    }
    if (!(total > 0.0)) {
        throw Error(ErrorCode::HeuristicFailure, "no magnet triple contains the position");
    }
    for (double& s : sums) s /= total;
    return WeightVector(std::move(sums));
}

CrossedAxes::CrossedAxes(MagnetLayout axis_a, MagnetLayout axis_b, Rect frame)
    : axis_a_(std::move(axis_a)), axis_b_(std::move(axis_b)), frame_(frame) {
    if (axis_a_.size() != 2 || axis_b_.size() != 2) {
        throw Error(ErrorCode::DegenerateLayout, "crossed axes need exactly two magnets each");
    }
    const Point2D da = axis_a_[1] - axis_a_[0];
    const Point2D db = axis_b_[1] - axis_b_[0];
    const double sine = cross(da, db) / (std::hypot(da.x, da.y) * std::hypot(db.x, db.y));
    if (!(std::abs(sine) > kGeomEpsilon)) throw Error(ErrorCode::DegenerateLayout, "crossed axes are parallel");
}

CrossedAxes CrossedAxes::unit_plane() {
    return CrossedAxes(MagnetLayout({{0.0, 0.5}, {1.0, 0.5}}), MagnetLayout({{0.5, 0.0}, {0.5, 1.0}}),
                       Rect{{0.0, 0.0}, {1.0, 1.0}});
}

std::pair<WeightVector, WeightVector> crossed_position_to_weights(const CrossedAxes& axes, Point2D p) {
    if (!finite(p)) throw Error(ErrorCode::InvalidWeightVector, "position is not finite");
    const Point2D a0 = axes.axis_a()[0];
    const Point2D b0 = axes.axis_b()[0];
    const Point2D da = axes.axis_a()[1] - a0;
    const Point2D db = axes.axis_b()[1] - b0;
    const double det = cross(da, db);
    // Line through p parallel to the other axis, intersected with this axis.
    const double ta = std::clamp(cross(p - a0, db) / det, 0.0, 1.0);
    const double tb = std::clamp(cross(p - b0, da) / -det, 0.0, 1.0);
    return {WeightVector({1.0 - ta, ta}), WeightVector({1.0 - tb, tb})};
}

Point2D crossed_weights_to_position(const CrossedAxes& axes, const WeightVector& wa, const WeightVector& wb) {
    if (wa.size() != 2 || wb.size() != 2) {
        throw Error(ErrorCode::InvalidWeightVector, "crossed weights need two entries per axis");
    }
    const Point2D a0 = axes.axis_a()[0];
    const Point2D b0 = axes.axis_b()[0];
    const Point2D da = axes.axis_a()[1] - a0;
    const Point2D db = axes.axis_b()[1] - b0;
    const Point2D qa = a0 + wa[1] * da;
    const Point2D qb = b0 + wb[1] * db;
    const double s = cross(qa - qb, da) / cross(da, db);
    return qa + s * db;
}

namespace {

// a . v + c >= 0
struct HalfPlane {
    Point2D normal;
    double offset;

    double eval(Point2D v) const { return dot(normal, v) + offset; }
};

// The corner turns at moved-1, moved and moved+1 are the only ones that
// depend on the moved magnet, and each is affine in its position.
std::vector<HalfPlane> convexity_constraints(std::span<const Point2D> pts, std::size_t i, double sign) {
    const std::size_t n = pts.size();
    const Point2D pm2 = pts[(i + n - 2) % n];
    const Point2D pm1 = pts[(i + n - 1) % n];
    const Point2D pp1 = pts[(i + 1) % n];
    const Point2D pp2 = pts[(i + 2) % n];
    auto cross_with = [](Point2D d) { return Point2D{-d.y, d.x}; }; // cross(d, v) == dot(cross_with(d), v)

    std::vector<HalfPlane> planes;
    // cross(pm1 - pm2, v - pm1)
    const Point2D d1 = pm1 - pm2;
    planes.push_back({sign * cross_with(d1), -sign * cross(d1, pm1)});
    // cross(v - pm1, pp1 - v) == cross(pm1 - pp1, v) - cross(pm1, pp1)
    planes.push_back({sign * cross_with(pm1 - pp1), -sign * cross(pm1, pp1)});
    // cross(pp1 - v, pp2 - pp1) == cross(pp1, d2) + cross(d2, v)
    const Point2D d2 = pp2 - pp1;
    planes.push_back({sign * cross_with(d2), sign * cross(pp1, d2)});
    return planes;
}

std::optional<Point2D> nearest_in_region(const std::vector<HalfPlane>& planes, Point2D q, double margin) {
    auto shifted = planes;
    for (auto& h : shifted) h.offset -= margin * std::hypot(h.normal.x, h.normal.y);

    auto feasible = [&](Point2D v) {
        for (const auto& h : shifted) {
            const double scale = std::hypot(h.normal.x, h.normal.y) * (1.0 + std::hypot(v.x, v.y));
            if (h.eval(v) < -1e-12 * scale) return false;
        }
        return true;
    };
    if (feasible(q)) return q;

    std::optional<Point2D> best;
    double best_dist = std::numeric_limits<double>::infinity();
    auto consider = [&](Point2D v) {
        if (!finite(v) || !feasible(v)) return;
        const double d = distance(v, q);
        if (d < best_dist) {
            best_dist = d;
            best = v;
        }
    };
    for (const auto& h : shifted) {
        const double nn = dot(h.normal, h.normal);
        if (nn == 0.0) continue;
        consider(q - (h.eval(q) / nn) * h.normal);
    }
    for (std::size_t a = 0; a < shifted.size(); ++a) {
        for (std::size_t b = a + 1; b < shifted.size(); ++b) {
            const auto& h1 = shifted[a];
            const auto& h2 = shifted[b];
            const double det = cross(h1.normal, h2.normal);
            if (std::abs(det) < 1e-300) continue;
            // Solve n1.v = -c1, n2.v = -c2.
            const Point2D v{(-h1.offset * h2.normal.y + h2.offset * h1.normal.y) / det,
                            (-h2.offset * h1.normal.x + h1.offset * h2.normal.x) / det};
            consider(v);
        }
    }
    return best;
}

} // namespace

Point2D validate_or_project_convex(const MagnetLayout& layout, std::size_t moved_index, Point2D proposed) {
    const std::size_t n = layout.size();
    if (moved_index >= n) throw Error(ErrorCode::NotFound, "magnet index out of range");
    const Point2D original = layout[moved_index];
    if (!finite(proposed)) return original;

    std::vector<Point2D> pts(layout.positions().begin(), layout.positions().end());
    pts[moved_index] = proposed;
    if (MagnetLayout::is_valid(pts)) return proposed;
    if (n == 2) return original; // only a coincident drop can fail

    const double sign = layout.orientation() == Orientation::counter_clockwise ? 1.0 : -1.0;
    const auto planes = convexity_constraints(layout.positions(), moved_index, sign);

    double scale = 0.0;
    for (std::size_t k = 0; k < n; ++k) scale = std::max(scale, distance(layout[k], layout[(k + 1) % n]));
    for (double margin = 10.0 * kGeomEpsilon * scale; margin < 0.5 * scale; margin *= 4.0) {
        auto candidate = nearest_in_region(planes, proposed, margin);
        if (!candidate) break;
        pts[moved_index] = *candidate;
        if (MagnetLayout::is_valid(pts)) return *candidate;
    }
    return original;
}

} // namespace dustmagnet
