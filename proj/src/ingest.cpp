#include "geordd/ingest.hpp"

#include "geordd/error.hpp"

#define BOOST_ALLOW_DEPRECATED_HEADERS
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace geordd::ingest {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

namespace {

bool parse_int(std::string_view s, int& out) {
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    std::string buf(s);
    char* endp = nullptr;
    const double v = std::strtod(buf.c_str(), &endp);
    if (endp != buf.c_str() + buf.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

bool valid_date(const Date& d) {
    static constexpr int kDays[12] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (d.month < 1 || d.month > 12 || d.day < 1) return false;
    if (d.day > kDays[d.month - 1]) return false;
    if (d.month == 2 && d.day == 29) {
        const bool leap = (d.year % 4 == 0 && d.year % 100 != 0) || d.year % 400 == 0;
        return leap;
    }
    return true;
}

std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

struct Edge {
    geo::PlanarPoint a;
    geo::PlanarPoint b;
};

using BgPoint = bg::model::point<double, 2, bg::cs::cartesian>;
using BgBox = bg::model::box<BgPoint>;
using EdgeTree = bgi::rtree<std::pair<BgBox, std::size_t>, bgi::quadratic<16>>;

BgBox edge_box(const Edge& e, double pad) {
    return BgBox(BgPoint(std::min(e.a.x, e.b.x) - pad, std::min(e.a.y, e.b.y) - pad),
                 BgPoint(std::max(e.a.x, e.b.x) + pad, std::max(e.a.y, e.b.y) + pad));
}

std::vector<Edge> edges_of(const geo::PolygonSet& set) {
    std::vector<Edge> out;
    auto add_ring = [&](const geo::Ring& ring) {
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
            if (!(ring[i] == ring[i + 1])) out.push_back({ring[i], ring[i + 1]});
        }
    };
    for (const auto& poly : set) {
        add_ring(poly.outer());
        for (const auto& h : poly.holes()) add_ring(h);
    }
    return out;
}

// Portion of f lying on e (within tol), expressed as a sub-segment of e.
std::optional<Edge> collinear_overlap(const Edge& e, const Edge& f, double tol) {
    const geo::PlanarPoint v = e.b - e.a;
    const double len = geo::norm(v);
    const geo::PlanarPoint u{v.x / len, v.y / len};
    if (std::abs(geo::cross(u, f.a - e.a)) > tol || std::abs(geo::cross(u, f.b - e.a)) > tol) {
        return std::nullopt;
    }
    const double s1 = geo::dot(f.a - e.a, u);
    const double s2 = geo::dot(f.b - e.a, u);
    const double lo = std::max(0.0, std::min(s1, s2));
    const double hi = std::min(len, std::max(s1, s2));
    if (hi - lo <= tol) return std::nullopt;
    return Edge{{e.a.x + u.x * lo, e.a.y + u.y * lo}, {e.a.x + u.x * hi, e.a.y + u.y * hi}};
}

// Chains pieces sharing endpoints into polylines; returns them longest first.
std::vector<std::vector<geo::PlanarPoint>> chain_pieces(const std::vector<Edge>& pieces, double tol) {
    std::vector<geo::PlanarPoint> nodes;
    auto node_of = [&](geo::PlanarPoint p) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (geo::norm(nodes[i] - p) <= tol) return i;
        }
        nodes.push_back(p);
        return nodes.size() - 1;
    };
    std::vector<std::pair<std::size_t, std::size_t>> links;
    for (const auto& p : pieces) {
        const std::size_t a = node_of(p.a);
        const std::size_t b = node_of(p.b);
        if (a != b) links.emplace_back(a, b);
    }
    // Duplicate links (both orientations of the same piece) collapse.
    for (auto& l : links) {
        if (l.first > l.second) std::swap(l.first, l.second);
    }
    std::sort(links.begin(), links.end());
    links.erase(std::unique(links.begin(), links.end()), links.end());

    std::vector<std::vector<std::size_t>> incident(nodes.size());
    for (std::size_t i = 0; i < links.size(); ++i) {
        incident[links[i].first].push_back(i);
        incident[links[i].second].push_back(i);
    }
    std::vector<bool> used(links.size(), false);
    std::vector<std::vector<geo::PlanarPoint>> chains;
    auto walk = [&](std::size_t start) {
        std::vector<geo::PlanarPoint> chain{nodes[start]};
        std::size_t at = start;
        for (;;) {
            auto it = std::find_if(incident[at].begin(), incident[at].end(),
                                   [&](std::size_t li) { return !used[li]; });
            if (it == incident[at].end()) break;
            used[*it] = true;
            at = links[*it].first == at ? links[*it].second : links[*it].first;
            chain.push_back(nodes[at]);
        }
        if (chain.size() >= 2) chains.push_back(std::move(chain));
    };
    for (std::size_t n = 0; n < nodes.size(); ++n) {
        if (incident[n].size() % 2 == 1) walk(n);
    }
    for (std::size_t n = 0; n < nodes.size(); ++n) {
        if (std::any_of(incident[n].begin(), incident[n].end(), [&](std::size_t li) { return !used[li]; })) walk(n);
    }
    auto chain_length = [](const std::vector<geo::PlanarPoint>& c) {
        double l = 0.0;
        for (std::size_t i = 1; i < c.size(); ++i) l += geo::norm(c[i] - c[i - 1]);
        return l;
    };
    std::stable_sort(chains.begin(), chains.end(),
                     [&](const auto& x, const auto& y) { return chain_length(x) > chain_length(y); });
    return chains;
}

// Drops interior vertices that are collinear with their neighbours.
std::vector<geo::PlanarPoint> simplify_collinear(std::vector<geo::PlanarPoint> pts, double tol) {
    if (pts.size() <= 2) return pts;
    std::vector<geo::PlanarPoint> out{pts.front()};
    for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
        const geo::PlanarPoint prev = out.back();
        const geo::PlanarPoint dir = pts[i + 1] - prev;
        const double len = geo::norm(dir);
        if (len > 0.0 && std::abs(geo::cross(dir, pts[i] - prev)) / len <= tol &&
            geo::dot(pts[i] - prev, dir) > 0.0 && geo::dot(pts[i + 1] - pts[i], dir) > 0.0) {
            continue;
        }
        out.push_back(pts[i]);
    }
    out.push_back(pts.back());
    return out;
}

int feature_id(const nlohmann::json& feature, const std::string& property, int fallback) {
    const auto props = feature.find("properties");
    if (props == feature.end() || !props->is_object()) return fallback;
    const auto it = props->find(property);
    if (it == props->end()) return fallback;
    if (it->is_number_integer()) return it->get<int>();
    if (it->is_number()) return static_cast<int>(std::lround(it->get<double>()));
    if (it->is_string()) {
        int v = 0;
        if (parse_int(it->get<std::string>(), v)) return v;
    }
    return fallback;
}

const nlohmann::json& features_of(const nlohmann::json& fc, const char* what) {
    if (!fc.is_object() || fc.value("type", "") != "FeatureCollection" || !fc.contains("features") ||
        !fc["features"].is_array()) {
        throw DataError(std::string("invalid GeoJSON ") + what + ": expected a FeatureCollection");
    }
    return fc["features"];
}

geo::Ring ring_from(const nlohmann::json& coords, geo::LonLat origin) {
    if (!coords.is_array()) throw GeometryError("ring coordinates are not an array");
    geo::Ring ring;
    for (const auto& c : coords) {
        if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) {
            throw GeometryError("malformed coordinate");
        }
        const geo::PlanarPoint p = geo::project(c[0].get<double>(), c[1].get<double>(), origin);
        if (ring.empty() || !(ring.back() == p)) ring.push_back(p);
    }
    return ring;
}

geo::Polygon polygon_from(const nlohmann::json& rings, geo::LonLat origin) {
    if (!rings.is_array() || rings.empty()) throw GeometryError("polygon without rings");
    std::vector<geo::Ring> holes;
    for (std::size_t i = 1; i < rings.size(); ++i) holes.push_back(ring_from(rings[i], origin));
    geo::Polygon poly(ring_from(rings[0], origin), std::move(holes));
    geo::validate(poly);
    return poly;
}

void visit_coordinates(const nlohmann::json& geometry, auto&& f) {
    const std::string type = geometry.value("type", "");
    const auto& coords = geometry.at("coordinates");
    if (type == "Polygon") {
        for (const auto& ring : coords) for (const auto& c : ring) f(c);
    } else if (type == "MultiPolygon") {
        for (const auto& poly : coords) for (const auto& ring : poly) for (const auto& c : ring) f(c);
    }
}

} // namespace

std::optional<Date> parse_date(std::string_view text) {
    std::string s = trim(text);
    Date d;
    if (s.size() >= 10 && s[4] == '-' && s[7] == '-') {
        if (!parse_int(std::string_view(s).substr(0, 4), d.year) ||
            !parse_int(std::string_view(s).substr(5, 2), d.month) ||
            !parse_int(std::string_view(s).substr(8, 2), d.day)) {
            return std::nullopt;
        }
        if (s.size() > 10 && s[10] != 'T' && s[10] != ' ') return std::nullopt;
    } else {
        const auto space = s.find(' ');
        const std::string_view head = std::string_view(s).substr(0, space);
        const auto p1 = head.find('/');
        const auto p2 = head.find('/', p1 == std::string_view::npos ? p1 : p1 + 1);
        if (p1 == std::string_view::npos || p2 == std::string_view::npos) return std::nullopt;
        if (!parse_int(head.substr(0, p1), d.month) || !parse_int(head.substr(p1 + 1, p2 - p1 - 1), d.day) ||
            !parse_int(head.substr(p2 + 1), d.year) || head.substr(p2 + 1).size() != 4) {
            return std::nullopt;
        }
    }
    if (!valid_date(d)) return std::nullopt;
    return d;
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", d.year, d.month, d.day);
    return buf;
}

int monthly_index(const Date& date, const Date& window_start) {
    const int elapsed = (date.year - window_start.year) * 12 + (date.month - window_start.month);
    if (elapsed < 0) throw InvalidArgument("monthly_index: date precedes the window start");
    return 1 + elapsed;
}

std::optional<EventKind> parse_kind(std::string_view text) {
    std::string s = trim(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "arrest") return EventKind::arrest;
    if (s == "crime") return EventKind::crime;
    if (s == "tree") return EventKind::tree;
    return std::nullopt;
}

std::string_view to_string(EventKind kind) {
    switch (kind) {
    case EventKind::arrest: return "arrest";
    case EventKind::crime: return "crime";
    case EventKind::tree: return "tree";
    }
    return "unknown";
}

EventSet::EventSet(int months) {
    if (months < 1) throw InvalidArgument("EventSet needs at least one month");
    buckets_.resize(static_cast<std::size_t>(months));
}

const EventSet::Bucket& EventSet::bucket(int month) const {
    if (month < 1 || month > months()) throw InvalidArgument("month index out of range");
    return buckets_[static_cast<std::size_t>(month - 1)];
}

void EventSet::add(int month, geo::PlanarPoint p, EventKind kind, std::optional<int> source_region) {
    if (month < 1 || month > months()) throw InvalidArgument("month index out of range");
    auto& b = buckets_[static_cast<std::size_t>(month - 1)];
    b.positions.push_back(p);
    b.kinds.push_back(kind);
    b.sources.push_back(source_region.value_or(-1));
}

std::span<const geo::PlanarPoint> EventSet::positions(int month) const { return bucket(month).positions; }
std::span<const EventKind> EventSet::kinds(int month) const { return bucket(month).kinds; }
std::span<const int> EventSet::sources(int month) const { return bucket(month).sources; }

std::size_t EventSet::total() const {
    std::size_t n = 0;
    for (const auto& b : buckets_) n += b.positions.size();
    return n;
}

EventSet EventSet::filtered(EventKind kind) const {
    EventSet out(months());
    for (int t = 1; t <= months(); ++t) {
        const auto& b = bucket(t);
        for (std::size_t i = 0; i < b.positions.size(); ++i) {
            if (b.kinds[i] == kind) {
                out.add(t, b.positions[i], kind, b.sources[i] < 0 ? std::nullopt : std::optional<int>(b.sources[i]));
            }
        }
    }
    return out;
}

bool operator==(const EventSet& a, const EventSet& b) { return a.buckets_ == b.buckets_; }

std::size_t count_in(const EventSet& events, const geo::PolygonSet& region, int month) {
    return geo::count_in(events.positions(month), region);
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

LoadedEvents parse_events(std::istream& in, const CsvSchema& schema, const StudyWindow& window,
                          geo::LonLat origin) {
    LoadedEvents out{EventSet(window.months()), {}};
    std::string line;
    if (!std::getline(in, line)) throw DataError("event CSV has no header");
    const auto header = split_csv_line(line);
    auto column = [&](const std::string& name, bool required) -> int {
        if (name.empty()) return -1;
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (trim(header[i]) == name) return static_cast<int>(i);
        }
        if (required) throw DataError("event CSV is missing required column '" + name + "'");
        return -1;
    };
    const int date_col = column(schema.date_column, true);
    const int lat_col = column(schema.latitude_column, true);
    const int lon_col = column(schema.longitude_column, true);
    const int kind_col = column(schema.kind_column, true);
    const int src_col = column(schema.source_region_column, true);

    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++out.report.rows;
        const auto fields = split_csv_line(line);
        auto field = [&](int c) -> std::string_view {
            return c >= 0 && static_cast<std::size_t>(c) < fields.size() ? std::string_view(fields[c]) : std::string_view();
        };
        const auto date = parse_date(field(date_col));
        const auto lat = parse_double(field(lat_col));
        const auto lon = parse_double(field(lon_col));
        std::optional<EventKind> kind = schema.default_kind;
        if (kind_col >= 0) kind = parse_kind(field(kind_col));
        std::optional<int> source;
        bool ok = date && lat && lon && kind && std::abs(*lat) < 89.0;
        if (ok && src_col >= 0) {
            const std::string s = trim(field(src_col));
            if (!s.empty()) {
                int v = 0;
                if (parse_int(s, v)) source = v;
                else ok = false;
            }
        }
        if (!ok) {
            ++out.report.malformed;
            continue;
        }
        if (!window.contains(*date)) {
            ++out.report.outside_window;
            continue;
        }
        if (schema.lonlat_bounds) {
            const auto& bb = *schema.lonlat_bounds;
            if (*lon < bb[0] || *lat < bb[1] || *lon > bb[2] || *lat > bb[3]) {
                ++out.report.outside_bounds;
                continue;
            }
        }
        out.events.add(monthly_index(*date, window.start), geo::project(*lon, *lat, origin), *kind, source);
        ++out.report.kept;
    }
    return out;
}

LoadedEvents load_events(const std::filesystem::path& path, const CsvSchema& schema, const StudyWindow& window,
                         geo::LonLat origin) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open event file " + path.string());
    return parse_events(in, schema, window, origin);
}

std::vector<int> RegionGeometry::region_ids() const {
    std::vector<int> ids;
    for (const auto& [id, _] : regions) ids.push_back(id);
    return ids;
}

std::optional<int> RegionGeometry::region_of(geo::PlanarPoint p) const {
    for (const auto& [id, set] : regions) {
        if (geo::contains(*set, p)) return id;
    }
    return std::nullopt;
}

bool RegionGeometry::adjacent(int a, int b) const {
    const RegionPair key{std::min(a, b), std::max(a, b)};
    return std::binary_search(adjacency.begin(), adjacency.end(), key);
}

AdjacencyReport derive_adjacency(RegionGeometry& geometry, const AdjacencyOptions& options) {
    AdjacencyReport report;
    geometry.adjacency.clear();
    geometry.borders.clear();
    const double tol = options.tolerance;

    struct Indexed {
        int id;
        geo::BBox box;
        std::vector<Edge> edges;
        EdgeTree tree;
    };
    std::vector<Indexed> index;
    for (const auto& [id, set] : geometry.regions) {
        Indexed ix{id, geo::bbox(*set), edges_of(*set), {}};
        for (std::size_t i = 0; i < ix.edges.size(); ++i) ix.tree.insert({edge_box(ix.edges[i], tol), i});
        index.push_back(std::move(ix));
    }

    for (std::size_t i = 0; i < index.size(); ++i) {
        for (std::size_t j = i + 1; j < index.size(); ++j) {
            const Indexed& a = index[i];
            const Indexed& b = index[j];
            if (!a.box.inflated(tol).intersects(b.box)) continue;
            std::vector<Edge> pieces;
            double shared = 0.0;
            std::vector<std::pair<BgBox, std::size_t>> hits;
            for (const Edge& e : a.edges) {
                hits.clear();
                b.tree.query(bgi::intersects(edge_box(e, tol)), std::back_inserter(hits));
                for (const auto& [_, k] : hits) {
                    if (auto piece = collinear_overlap(e, b.edges[k], tol)) {
                        shared += geo::norm(piece->b - piece->a);
                        pieces.push_back(*piece);
                    }
                }
            }
            if (shared <= options.min_shared_length) continue;
            const RegionPair key{a.id, b.id};
            auto chains = chain_pieces(pieces, tol);
            if (chains.empty()) continue;
            if (chains.size() > 1) report.fragmented_borders.push_back(key);
            geometry.adjacency.push_back(key);
            geometry.borders.emplace(key, geo::Polyline(simplify_collinear(std::move(chains.front()), tol)));
        }
    }
    std::sort(geometry.adjacency.begin(), geometry.adjacency.end());
    return report;
}

std::optional<geo::LonLat> parse_origin(const nlohmann::json& precincts) {
    double min_lon = INFINITY, min_lat = INFINITY, max_lon = -INFINITY, max_lat = -INFINITY;
    for (const auto& f : features_of(precincts, "precincts")) {
        if (!f.contains("geometry") || !f["geometry"].is_object()) continue;
        try {
            visit_coordinates(f["geometry"], [&](const nlohmann::json& c) {
                if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) return;
                min_lon = std::min(min_lon, c[0].get<double>());
                max_lon = std::max(max_lon, c[0].get<double>());
                min_lat = std::min(min_lat, c[1].get<double>());
                max_lat = std::max(max_lat, c[1].get<double>());
            });
        } catch (const nlohmann::json::exception&) {
        }
    }
    if (!(min_lon <= max_lon)) return std::nullopt;
    return geo::LonLat{0.5 * (min_lon + max_lon), 0.5 * (min_lat + max_lat)};
}

LoadedGeometry parse_geometry(const nlohmann::json& precincts, const nlohmann::json* streets,
                              const GeometryOptions& options) {
    LoadedGeometry out;
    const auto& features = features_of(precincts, "precincts");
    const auto origin = options.origin ? options.origin : parse_origin(precincts);
    if (!origin) throw DataError("precinct GeoJSON has no coordinates");
    out.origin = *origin;

    std::map<int, geo::PolygonSet> regions;
    for (std::size_t k = 0; k < features.size(); ++k) {
        const auto& f = features[k];
        ++out.report.precinct_features;
        const int id = feature_id(f, options.region_id_property, static_cast<int>(k) + 1);
        try {
            if (!f.contains("geometry") || !f["geometry"].is_object()) throw GeometryError("feature without geometry");
            const auto& g = f["geometry"];
            const std::string type = g.value("type", "");
            geo::PolygonSet set;
            if (type == "Polygon") {
                set.push_back(polygon_from(g.at("coordinates"), out.origin));
            } else if (type == "MultiPolygon") {
                for (const auto& rings : g.at("coordinates")) set.push_back(polygon_from(rings, out.origin));
            } else {
                throw GeometryError("unsupported precinct geometry type '" + type + "'");
            }
            auto& dst = regions[id];
            for (auto& p : set) dst.push_back(std::move(p));
        } catch (const GeometryError& e) {
            out.report.rejected_features.push_back("precinct " + std::to_string(id) + ": " + e.what());
        } catch (const DataError& e) {
            out.report.rejected_features.push_back("precinct " + std::to_string(id) + ": " + e.what());
        } catch (const nlohmann::json::exception& e) {
            out.report.rejected_features.push_back("precinct " + std::to_string(id) + ": " + e.what());
        }
    }
    for (auto& [id, set] : regions) {
        out.geometry.regions.emplace(id, std::make_shared<const geo::PolygonSet>(std::move(set)));
    }
    out.report.adjacency = derive_adjacency(out.geometry, options.adjacency);

    if (streets != nullptr) {
        int next_id = 0;
        for (const auto& f : features_of(*streets, "streets")) {
            ++out.report.street_features;
            try {
                const auto& g = f.at("geometry");
                const std::string type = g.value("type", "");
                std::vector<const nlohmann::json*> lines;
                if (type == "LineString") {
                    lines.push_back(&g.at("coordinates"));
                } else if (type == "MultiLineString") {
                    for (const auto& l : g.at("coordinates")) lines.push_back(&l);
                } else {
                    throw GeometryError("unsupported street geometry");
                }
                const int base = feature_id(f, options.street_id_property, -1);
                for (const auto* l : lines) {
                    auto pts = ring_from(*l, out.origin);
                    const int id = (base >= 0 && lines.size() == 1) ? base : next_id;
                    out.streets.push_back({id, geo::Polyline(std::move(pts))});
                    ++next_id;
                }
            } catch (const std::exception&) {
                ++out.report.rejected_streets;
            }
        }
        std::stable_sort(out.streets.begin(), out.streets.end(),
                         [](const Street& a, const Street& b) { return a.id < b.id; });
        for (std::size_t i = 1; i < out.streets.size(); ++i) {
            if (out.streets[i].id == out.streets[i - 1].id) throw DataError("duplicate street id " + std::to_string(out.streets[i].id));
        }
    }
    return out;
}

namespace {
nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("invalid JSON in " + path.string() + ": " + e.what());
    }
}
} // namespace

LoadedGeometry load_geometry(const std::filesystem::path& precincts_path,
                             const std::optional<std::filesystem::path>& streets_path,
                             const GeometryOptions& options) {
    const nlohmann::json precincts = read_json(precincts_path);
    if (streets_path) {
        const nlohmann::json streets = read_json(*streets_path);
        return parse_geometry(precincts, &streets, options);
    }
    return parse_geometry(precincts, nullptr, options);
}

nlohmann::json to_json(const EventSet& events) {
    nlohmann::json months = nlohmann::json::array();
    for (int t = 1; t <= events.months(); ++t) {
        nlohmann::json rows = nlohmann::json::array();
        const auto pos = events.positions(t);
        const auto kinds = events.kinds(t);
        const auto src = events.sources(t);
        for (std::size_t i = 0; i < pos.size(); ++i) {
            rows.push_back({pos[i].x, pos[i].y, std::string(to_string(kinds[i])), src[i]});
        }
        months.push_back(std::move(rows));
    }
    return {{"months", events.months()}, {"events", std::move(months)}};
}

EventSet event_set_from_json(const nlohmann::json& j) {
    try {
        EventSet out(j.at("months").get<int>());
        const auto& months = j.at("events");
        for (int t = 1; t <= out.months(); ++t) {
            for (const auto& row : months.at(static_cast<std::size_t>(t - 1))) {
                const auto kind = parse_kind(row.at(2).get<std::string>());
                if (!kind) throw DataError("unknown event kind in cache");
                const int src = row.at(3).get<int>();
                out.add(t, {row.at(0).get<double>(), row.at(1).get<double>()}, *kind,
                        src < 0 ? std::nullopt : std::optional<int>(src));
            }
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed event cache: ") + e.what());
    }
}

std::uint64_t content_hash(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t file_hash(const std::filesystem::path& path, std::uint64_t seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return content_hash(ss.str(), seed);
}

std::string hex_hash(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace geordd::ingest
