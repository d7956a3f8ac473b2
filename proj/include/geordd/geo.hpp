#pragma once

// Planar geometry for boundary buffers: projection, polylines, polygons,
// flat-capped buffers with round joins, side assignment and counting.
//
// Everything here works in a local planar frame measured in feet. All
// functions are pure and safe to call concurrently on shared geometry.

#include <array>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace geordd::geo {

inline constexpr double kEarthRadiusFeet = 20'902'231.0;
/// Tolerance for edge coincidence in point-in-polygon and on-boundary tests.
inline constexpr double kEdgeEpsilon = 1e-6;

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
};

struct PlanarPoint {
    double x = 0.0;  // feet east of origin
    double y = 0.0;  // feet north of origin

    friend PlanarPoint operator+(PlanarPoint a, PlanarPoint b) { return {a.x + b.x, a.y + b.y}; }
    friend PlanarPoint operator-(PlanarPoint a, PlanarPoint b) { return {a.x - b.x, a.y - b.y}; }
    friend bool operator==(PlanarPoint, PlanarPoint) = default;
};

double dot(PlanarPoint a, PlanarPoint b);
double cross(PlanarPoint a, PlanarPoint b);
double norm(PlanarPoint a);

/// Local equirectangular projection around `origin`. Throws DataError on
/// non-finite input or |lat| >= 89.
PlanarPoint project(double lon, double lat, LonLat origin);
LonLat unproject(PlanarPoint p, LonLat origin);

struct BBox {
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = -std::numeric_limits<double>::infinity();

    void expand(PlanarPoint p);
    void expand(const BBox& other);
    [[nodiscard]] BBox inflated(double by) const;
    [[nodiscard]] bool contains(PlanarPoint p) const;
    [[nodiscard]] bool intersects(const BBox& other) const;
    [[nodiscard]] bool empty() const { return min_x > max_x; }
};

/// Ordered open polyline with at least two vertices and no repeated
/// consecutive vertices.
class Polyline {
public:
    explicit Polyline(std::vector<PlanarPoint> vertices);

    [[nodiscard]] std::span<const PlanarPoint> vertices() const { return vertices_; }
    [[nodiscard]] std::size_t segment_count() const { return vertices_.size() - 1; }
    [[nodiscard]] std::pair<PlanarPoint, PlanarPoint> segment(std::size_t i) const {
        return {vertices_[i], vertices_[i + 1]};
    }
    [[nodiscard]] double length() const { return length_; }
    [[nodiscard]] const BBox& bbox() const { return bbox_; }

    [[nodiscard]] Polyline reversed() const;
    [[nodiscard]] Polyline transformed(double a, double b, double c, double d, PlanarPoint shift) const;

private:
    std::vector<PlanarPoint> vertices_;
    double length_ = 0.0;
    BBox bbox_;
};

using Ring = std::vector<PlanarPoint>;

/// Simple polygon with optional holes. Rings are stored closed (first == last).
class Polygon {
public:
    explicit Polygon(Ring outer, std::vector<Ring> holes = {});

    [[nodiscard]] const Ring& outer() const { return outer_; }
    [[nodiscard]] const std::vector<Ring>& holes() const { return holes_; }
    [[nodiscard]] const BBox& bbox() const { return bbox_; }
    [[nodiscard]] double area() const;
    /// Even-odd ray casting; points within kEdgeEpsilon of an edge count as inside.
    [[nodiscard]] bool contains(PlanarPoint p) const;
    /// Shortest distance from p to any ring edge.
    [[nodiscard]] double boundary_distance(PlanarPoint p) const;

private:
    Ring outer_;
    std::vector<Ring> holes_;
    BBox bbox_;
};

using PolygonSet = std::vector<Polygon>;

double area(const PolygonSet& set);
bool contains(const PolygonSet& set, PlanarPoint p);
BBox bbox(const PolygonSet& set);
/// Rejects rings that are self-intersecting, open after closing, or of zero area.
void validate(const Polygon& polygon);

double segment_distance(PlanarPoint p, PlanarPoint a, PlanarPoint b);
/// Euclidean distance from p to the nearest point of the polyline.
double distance_to(PlanarPoint p, const Polyline& boundary);

enum class Side { side1, side0, outside };
enum class SideRule { precinct_membership, left_right };

/// Relation of a point to a boundary that does not depend on the buffer width.
struct BoundaryProximity {
    /// Distance under the flat-cap metric: perpendicular distance to a segment
    /// whose span covers the point, or distance to an interior vertex.
    /// Infinite when the point lies beyond both end caps.
    double cap_distance = std::numeric_limits<double>::infinity();
    /// Index of the segment nearest in plain Euclidean distance.
    std::size_t nearest_segment = 0;
    /// Sign of the cross product against the nearest segment (+1 left, -1 right, 0 on line).
    int orientation = 0;
    bool on_boundary = false;
};

BoundaryProximity locate(PlanarPoint p, const Polyline& boundary);

/// A boundary with a buffer width and a rule for splitting the buffer into
/// its two sides. Side regions are shared, never copied.
class BorderBuffer {
public:
    /// side1 is the part inside region_a, side0 the part inside region_b.
    static BorderBuffer precinct_membership(Polyline boundary, double delta,
                                            std::shared_ptr<const PolygonSet> region_a,
                                            std::shared_ptr<const PolygonSet> region_b);
    /// side1 lies left of the boundary direction, side0 to the right.
    static BorderBuffer left_right(Polyline boundary, double delta);

    [[nodiscard]] const Polyline& boundary() const { return *boundary_; }
    [[nodiscard]] double delta() const { return delta_; }
    [[nodiscard]] SideRule side_rule() const { return rule_; }
    [[nodiscard]] const PolygonSet* region_a() const { return region_a_.get(); }
    [[nodiscard]] const PolygonSet* region_b() const { return region_b_.get(); }
    [[nodiscard]] BorderBuffer with_delta(double delta) const;

    /// Side for a point whose proximity was already computed.
    [[nodiscard]] Side classify(PlanarPoint p, const BoundaryProximity& prox) const;

private:
    BorderBuffer() = default;

    std::shared_ptr<const Polyline> boundary_;
    double delta_ = 0.0;
    SideRule rule_ = SideRule::left_right;
    std::shared_ptr<const PolygonSet> region_a_;
    std::shared_ptr<const PolygonSet> region_b_;
};

/// Points on the boundary itself resolve to side1.
Side assign_side(PlanarPoint p, const BorderBuffer& bb);

/// {s : d(s, boundary) < delta} with flat end caps and round joins,
/// as a polygon approximation (arcs use 90 points per circle).
PolygonSet buffer_polyline(const Polyline& boundary, double delta);

/// Explicit polygons for one side of the buffer.
PolygonSet side_region(const BorderBuffer& bb, Side side);

std::size_t count_in(std::span<const PlanarPoint> points, const PolygonSet& region);

struct SideCount {
    std::size_t side1 = 0;
    std::size_t side0 = 0;
    std::size_t on_boundary = 0;  // included in side1
};

SideCount count_sides(std::span<const PlanarPoint> points, const BorderBuffer& bb);

} // namespace geordd::geo
