#include "geordd/geo.hpp"

#include "geordd/error.hpp"

#define BOOST_ALLOW_DEPRECATED_HEADERS
#include <boost/geometry.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace geordd::geo {

namespace bg = boost::geometry;

namespace {

using BgPoint = bg::model::d2::point_xy<double>;
using BgPolygon = bg::model::polygon<BgPoint, /*ClockWise=*/false>;
using BgMulti = bg::model::multi_polygon<BgPolygon>;
using BgLine = bg::model::linestring<BgPoint>;

constexpr int kPointsPerCircle = 90;

double signed_area(const Ring& ring) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        acc += ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
    }
    return 0.5 * acc;
}

bool finite(PlanarPoint p) { return std::isfinite(p.x) && std::isfinite(p.y); }

Ring close_ring(Ring ring) {
    if (ring.size() >= 1 && !(ring.front() == ring.back())) {
        ring.push_back(ring.front());
    }
    return ring;
}

// Even-odd crossing parity of a horizontal ray from p against one ring.
bool ray_parity(const Ring& ring, PlanarPoint p) {
    bool inside = false;
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const PlanarPoint& a = ring[i];
        const PlanarPoint& b = ring[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < x_cross) inside = !inside;
        }
    }
    return inside;
}

double ring_distance(const Ring& ring, PlanarPoint p) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        best = std::min(best, segment_distance(p, ring[i], ring[i + 1]));
    }
    return best;
}

BgPolygon to_bg(const Polygon& polygon) {
    BgPolygon out;
    for (const auto& v : polygon.outer()) bg::append(out.outer(), BgPoint(v.x, v.y));
    out.inners().resize(polygon.holes().size());
    for (std::size_t h = 0; h < polygon.holes().size(); ++h) {
        for (const auto& v : polygon.holes()[h]) bg::append(out.inners()[h], BgPoint(v.x, v.y));
    }
    return out;
}

BgMulti to_bg(const PolygonSet& set) {
    BgMulti out;
    for (const auto& p : set) out.push_back(to_bg(p));
    return out;
}

Ring from_bg_ring(const auto& ring) {
    Ring out;
    out.reserve(ring.size());
    for (const auto& v : ring) out.push_back({bg::get<0>(v), bg::get<1>(v)});
    return out;
}

PolygonSet from_bg(const BgMulti& multi) {
    PolygonSet out;
    for (const auto& poly : multi) {
        if (bg::area(poly) <= 0.0) continue;
        std::vector<Ring> holes;
        for (const auto& inner : poly.inners()) holes.push_back(from_bg_ring(inner));
        out.emplace_back(from_bg_ring(poly.outer()), std::move(holes));
    }
    return out;
}

BgLine to_bg(const Polyline& line) {
    BgLine out;
    for (const auto& v : line.vertices()) bg::append(out, BgPoint(v.x, v.y));
    return out;
}

template <typename Distance>
BgMulti buffer_with(const Polyline& line, const Distance& distance) {
    BgMulti out;
    bg::strategy::buffer::join_round join(kPointsPerCircle);
    bg::strategy::buffer::end_flat end;
    bg::strategy::buffer::point_circle circle(kPointsPerCircle);
    bg::strategy::buffer::side_straight side;
    bg::buffer(to_bg(line), out, distance, side, join, end, circle);
    return out;
}

} // namespace

double dot(PlanarPoint a, PlanarPoint b) { return a.x * b.x + a.y * b.y; }
double cross(PlanarPoint a, PlanarPoint b) { return a.x * b.y - a.y * b.x; }
double norm(PlanarPoint a) { return std::hypot(a.x, a.y); }

PlanarPoint project(double lon, double lat, LonLat origin) {
    if (!std::isfinite(lon) || !std::isfinite(lat) || !std::isfinite(origin.lon) ||
        !std::isfinite(origin.lat)) {
        throw DataError("project: non-finite coordinate");
    }
    if (std::abs(lat) >= 89.0 || std::abs(origin.lat) >= 89.0) {
        throw DataError("project: latitude outside (-89, 89)");
    }
    constexpr double k = kEarthRadiusFeet * std::numbers::pi / 180.0;
    const double coslat = std::cos(origin.lat * std::numbers::pi / 180.0);
    return {(lon - origin.lon) * k * coslat, (lat - origin.lat) * k};
}

LonLat unproject(PlanarPoint p, LonLat origin) {
    constexpr double k = kEarthRadiusFeet * std::numbers::pi / 180.0;
    const double coslat = std::cos(origin.lat * std::numbers::pi / 180.0);
    return {origin.lon + p.x / (k * coslat), origin.lat + p.y / k};
}

void BBox::expand(PlanarPoint p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
}

void BBox::expand(const BBox& other) {
    if (other.empty()) return;
    expand(PlanarPoint{other.min_x, other.min_y});
    expand(PlanarPoint{other.max_x, other.max_y});
}

BBox BBox::inflated(double by) const {
    return {min_x - by, min_y - by, max_x + by, max_y + by};
}

bool BBox::contains(PlanarPoint p) const {
    return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y;
}

bool BBox::intersects(const BBox& o) const {
    return !(o.min_x > max_x || o.max_x < min_x || o.min_y > max_y || o.max_y < min_y);
}

Polyline::Polyline(std::vector<PlanarPoint> vertices) : vertices_(std::move(vertices)) {
    if (vertices_.size() < 2) throw GeometryError("polyline needs at least two vertices");
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
        if (!finite(vertices_[i])) throw GeometryError("polyline vertex is not finite");
        bbox_.expand(vertices_[i]);
        if (i > 0) {
            if (vertices_[i] == vertices_[i - 1]) {
                throw GeometryError("polyline has repeated consecutive vertices");
            }
            length_ += norm(vertices_[i] - vertices_[i - 1]);
        }
    }
}

Polyline Polyline::reversed() const {
    std::vector<PlanarPoint> v(vertices_.rbegin(), vertices_.rend());
    return Polyline(std::move(v));
}

Polyline Polyline::transformed(double a, double b, double c, double d, PlanarPoint shift) const {
    std::vector<PlanarPoint> v;
    v.reserve(vertices_.size());
    for (const auto& p : vertices_) v.push_back({a * p.x + b * p.y + shift.x, c * p.x + d * p.y + shift.y});
    return Polyline(std::move(v));
}

Polygon::Polygon(Ring outer, std::vector<Ring> holes) : outer_(close_ring(std::move(outer))) {
    if (outer_.size() < 4) throw GeometryError("polygon ring needs at least three distinct vertices");
    for (const auto& v : outer_) {
        if (!finite(v)) throw GeometryError("polygon vertex is not finite");
        bbox_.expand(v);
    }
    if (signed_area(outer_) < 0.0) std::reverse(outer_.begin(), outer_.end());
    for (auto& h : holes) {
        Ring ring = close_ring(std::move(h));
        if (ring.size() < 4) throw GeometryError("polygon hole needs at least three distinct vertices");
        if (signed_area(ring) > 0.0) std::reverse(ring.begin(), ring.end());
        holes_.push_back(std::move(ring));
    }
}

double Polygon::area() const {
    double a = std::abs(signed_area(outer_));
    for (const auto& h : holes_) a -= std::abs(signed_area(h));
    return a;
}

double Polygon::boundary_distance(PlanarPoint p) const {
    double best = ring_distance(outer_, p);
    for (const auto& h : holes_) best = std::min(best, ring_distance(h, p));
    return best;
}

bool Polygon::contains(PlanarPoint p) const {
    if (!bbox_.inflated(kEdgeEpsilon).contains(p)) return false;
    if (boundary_distance(p) <= kEdgeEpsilon) return true;
    bool inside = ray_parity(outer_, p);
    for (const auto& h : holes_) {
        if (ray_parity(h, p)) inside = !inside;
    }
    return inside;
}

double area(const PolygonSet& set) {
    double a = 0.0;
    for (const auto& p : set) a += p.area();
    return a;
}

bool contains(const PolygonSet& set, PlanarPoint p) {
    return std::any_of(set.begin(), set.end(), [&](const Polygon& poly) { return poly.contains(p); });
}

BBox bbox(const PolygonSet& set) {
    BBox out;
    for (const auto& p : set) out.expand(p.bbox());
    return out;
}

void validate(const Polygon& polygon) {
    if (!(polygon.area() > 0.0)) throw GeometryError("polygon has zero area");
    std::string reason;
    if (!bg::is_valid(to_bg(polygon), reason)) {
        throw GeometryError("invalid polygon: " + reason);
    }
}

double segment_distance(PlanarPoint p, PlanarPoint a, PlanarPoint b) {
    const PlanarPoint v = b - a;
    const double len2 = dot(v, v);
    double t = len2 > 0.0 ? dot(p - a, v) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - PlanarPoint{a.x + t * v.x, a.y + t * v.y});
}

double distance_to(PlanarPoint p, const Polyline& boundary) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < boundary.segment_count(); ++i) {
        const auto [a, b] = boundary.segment(i);
        best = std::min(best, segment_distance(p, a, b));
    }
    return best;
}

BoundaryProximity locate(PlanarPoint p, const Polyline& boundary) {
    BoundaryProximity out;
    const auto verts = boundary.vertices();
    const std::size_t nseg = boundary.segment_count();
    double nearest = std::numeric_limits<double>::infinity();
    double nearest_t = 0.0;

    for (std::size_t i = 0; i < nseg; ++i) {
        const PlanarPoint a = verts[i];
        const PlanarPoint v = verts[i + 1] - a;
        const double len2 = dot(v, v);
        const double t = dot(p - a, v) / len2;
        const double tc = std::clamp(t, 0.0, 1.0);
        const double d = norm(p - PlanarPoint{a.x + tc * v.x, a.y + tc * v.y});
        if (d < nearest) {
            nearest = d;
            nearest_t = t;
            out.nearest_segment = i;
        }
        if (t >= 0.0 && t <= 1.0) {
            out.cap_distance = std::min(out.cap_distance, std::abs(cross(v, p - a)) / std::sqrt(len2));
        }
        if (i > 0) out.cap_distance = std::min(out.cap_distance, norm(p - a));
    }

    out.on_boundary = nearest <= kEdgeEpsilon;
    auto orient = [&](std::size_t i) {
        const PlanarPoint a = verts[i];
        const PlanarPoint v = verts[i + 1] - a;
        const double c = cross(v, p - a) / norm(v);
        if (std::abs(c) <= kEdgeEpsilon) return 0;
        return c > 0.0 ? 1 : -1;
    };
    out.orientation = orient(out.nearest_segment);
    // On the extension of the nearest segment past a shared vertex the sign
    // is decided by the neighbouring segment.
    if (out.orientation == 0 && !out.on_boundary) {
        if (nearest_t <= 0.0 && out.nearest_segment > 0) {
            out.orientation = orient(out.nearest_segment - 1);
        } else if (nearest_t >= 1.0 && out.nearest_segment + 1 < nseg) {
            out.orientation = orient(out.nearest_segment + 1);
        }
    }
    return out;
}

BorderBuffer BorderBuffer::precinct_membership(Polyline boundary, double delta,
                                               std::shared_ptr<const PolygonSet> region_a,
                                               std::shared_ptr<const PolygonSet> region_b) {
    if (!(delta > 0.0)) throw InvalidArgument("buffer width must be positive");
    if (!region_a || !region_b) throw InvalidArgument("precinct-membership buffer needs both regions");
    BorderBuffer bb;
    bb.boundary_ = std::make_shared<const Polyline>(std::move(boundary));
    bb.delta_ = delta;
    bb.rule_ = SideRule::precinct_membership;
    bb.region_a_ = std::move(region_a);
    bb.region_b_ = std::move(region_b);
    return bb;
}

BorderBuffer BorderBuffer::left_right(Polyline boundary, double delta) {
    if (!(delta > 0.0)) throw InvalidArgument("buffer width must be positive");
    BorderBuffer bb;
    bb.boundary_ = std::make_shared<const Polyline>(std::move(boundary));
    bb.delta_ = delta;
    bb.rule_ = SideRule::left_right;
    return bb;
}

BorderBuffer BorderBuffer::with_delta(double delta) const {
    if (!(delta > 0.0)) throw InvalidArgument("buffer width must be positive");
    BorderBuffer bb = *this;
    bb.delta_ = delta;
    return bb;
}

Side BorderBuffer::classify(PlanarPoint p, const BoundaryProximity& prox) const {
    if (!(prox.cap_distance < delta_)) return Side::outside;
    if (prox.on_boundary) return Side::side1;
    if (rule_ == SideRule::left_right) {
        return prox.orientation >= 0 ? Side::side1 : Side::side0;
    }
    if (contains(*region_a_, p)) return Side::side1;
    if (contains(*region_b_, p)) return Side::side0;
    return Side::outside;
}

Side assign_side(PlanarPoint p, const BorderBuffer& bb) {
    if (!bb.boundary().bbox().inflated(bb.delta()).contains(p)) return Side::outside;
    return bb.classify(p, locate(p, bb.boundary()));
}

PolygonSet buffer_polyline(const Polyline& boundary, double delta) {
    if (!(delta > 0.0)) throw InvalidArgument("buffer width must be positive");
    return from_bg(buffer_with(boundary, bg::strategy::buffer::distance_symmetric<double>(delta)));
}

PolygonSet side_region(const BorderBuffer& bb, Side side) {
    if (side == Side::outside) throw InvalidArgument("side_region: outside is not a side");
    if (bb.side_rule() == SideRule::left_right) {
        const double left = side == Side::side1 ? bb.delta() : 0.0;
        const double right = side == Side::side1 ? 0.0 : bb.delta();
        return from_bg(buffer_with(bb.boundary(), bg::strategy::buffer::distance_asymmetric<double>(left, right)));
    }
    const BgMulti whole = buffer_with(bb.boundary(), bg::strategy::buffer::distance_symmetric<double>(bb.delta()));
    BgMulti out;
    bg::intersection(whole, to_bg(side == Side::side1 ? *bb.region_a() : *bb.region_b()), out);
    return from_bg(out);
}

std::size_t count_in(std::span<const PlanarPoint> points, const PolygonSet& region) {
    const BBox box = bbox(region).inflated(kEdgeEpsilon);
    return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [&](PlanarPoint p) {
        return box.contains(p) && contains(region, p);
    }));
}

SideCount count_sides(std::span<const PlanarPoint> points, const BorderBuffer& bb) {
    SideCount out;
    const BBox box = bb.boundary().bbox().inflated(bb.delta());
    for (const auto& p : points) {
        if (!box.contains(p)) continue;
        const BoundaryProximity prox = locate(p, bb.boundary());
        switch (bb.classify(p, prox)) {
        case Side::side1:
            ++out.side1;
            if (prox.on_boundary) ++out.on_boundary;
            break;
        case Side::side0: ++out.side0; break;
        case Side::outside: break;
        }
    }
    return out;
}

} // namespace geordd::geo
