#pragma once

// Event and geometry ingestion: CSV events bucketed by calendar month,
// GeoJSON precincts and streets, shared-border extraction, and the JSON
// persistence used by the derived-artifact cache.

#include "geordd/geo.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <istream>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace geordd::ingest {

struct Date {
    int year = 0;
    int month = 0;  // 1..12
    int day = 0;    // 1..31

    friend auto operator<=>(const Date&, const Date&) = default;
};

/// Accepts YYYY-MM-DD (optionally followed by a time) and MM/DD/YYYY.
std::optional<Date> parse_date(std::string_view text);
std::string format_date(const Date& d);

/// 1 + calendar months elapsed since the window start month.
int monthly_index(const Date& date, const Date& window_start);

struct StudyWindow {
    Date start{2010, 1, 1};
    Date end{2018, 12, 31};

    [[nodiscard]] int months() const { return monthly_index(end, start); }
    [[nodiscard]] bool contains(const Date& d) const { return d >= start && d <= end; }
};

enum class EventKind { arrest, crime, tree };

std::optional<EventKind> parse_kind(std::string_view text);
std::string_view to_string(EventKind kind);

struct EventRecord {
    Date date;
    double lon = 0.0;
    double lat = 0.0;
    EventKind kind = EventKind::arrest;
    std::optional<int> source_region_id;
};

/// Projected events grouped by month (1..T). Positions of a month are
/// stored contiguously so geometry routines can take them as spans.
class EventSet {
public:
    EventSet() = default;
    explicit EventSet(int months);

    void add(int month, geo::PlanarPoint p, EventKind kind, std::optional<int> source_region);

    [[nodiscard]] int months() const { return static_cast<int>(buckets_.size()); }
    [[nodiscard]] std::span<const geo::PlanarPoint> positions(int month) const;
    [[nodiscard]] std::span<const EventKind> kinds(int month) const;
    /// Source region per event, -1 when absent.
    [[nodiscard]] std::span<const int> sources(int month) const;
    [[nodiscard]] std::size_t count(int month) const { return positions(month).size(); }
    [[nodiscard]] std::size_t total() const;

    [[nodiscard]] EventSet filtered(EventKind kind) const;

    friend bool operator==(const EventSet&, const EventSet&);

private:
    struct Bucket {
        std::vector<geo::PlanarPoint> positions;
        std::vector<EventKind> kinds;
        std::vector<int> sources;
        friend bool operator==(const Bucket&, const Bucket&) = default;
    };
    const Bucket& bucket(int month) const;

    std::vector<Bucket> buckets_;
};

/// Events of one month inside a region.
std::size_t count_in(const EventSet& events, const geo::PolygonSet& region, int month);

struct CsvSchema {
    std::string date_column = "date";
    std::string latitude_column = "latitude";
    std::string longitude_column = "longitude";
    /// Empty: every row gets `default_kind`.
    std::string kind_column;
    /// Empty: no source region attribution.
    std::string source_region_column;
    EventKind default_kind = EventKind::arrest;
    /// Optional lon/lat bounding box; rows outside are filtered.
    std::optional<std::array<double, 4>> lonlat_bounds;  // min_lon, min_lat, max_lon, max_lat
};

struct LoadReport {
    std::size_t rows = 0;
    std::size_t kept = 0;
    std::size_t malformed = 0;
    std::size_t outside_window = 0;
    std::size_t outside_bounds = 0;
};

struct LoadedEvents {
    EventSet events;
    LoadReport report;
};

/// Splits one CSV line honouring double-quoted fields.
std::vector<std::string> split_csv_line(std::string_view line);

LoadedEvents load_events(const std::filesystem::path& path, const CsvSchema& schema,
                         const StudyWindow& window, geo::LonLat origin);
LoadedEvents parse_events(std::istream& in, const CsvSchema& schema, const StudyWindow& window,
                          geo::LonLat origin);

using RegionPair = std::pair<int, int>;  // first < second

struct RegionGeometry {
    std::map<int, std::shared_ptr<const geo::PolygonSet>> regions;
    std::vector<RegionPair> adjacency;
    std::map<RegionPair, geo::Polyline> borders;

    [[nodiscard]] std::vector<int> region_ids() const;
    /// Region containing p, if any.
    [[nodiscard]] std::optional<int> region_of(geo::PlanarPoint p) const;
    [[nodiscard]] bool adjacent(int a, int b) const;
};

struct Street {
    int id = 0;
    geo::Polyline centerline;
};

struct AdjacencyOptions {
    double min_shared_length = 50.0;  // feet of common boundary
    double tolerance = 1.0;           // collinearity tolerance, feet
};

struct AdjacencyReport {
    /// Pairs whose shared boundary split into several disjoint chains; the
    /// longest chain is kept as the border.
    std::vector<RegionPair> fragmented_borders;
};

/// Shared-edge detection over all region pairs; fills adjacency and borders.
AdjacencyReport derive_adjacency(RegionGeometry& geometry, const AdjacencyOptions& options = {});

struct GeometryReport {
    std::size_t precinct_features = 0;
    std::vector<std::string> rejected_features;
    std::size_t street_features = 0;
    std::size_t rejected_streets = 0;
    AdjacencyReport adjacency;
};

struct LoadedGeometry {
    RegionGeometry geometry;
    std::vector<Street> streets;
    geo::LonLat origin;
    GeometryReport report;
};

struct GeometryOptions {
    std::string region_id_property = "precinct";
    std::string street_id_property = "id";
    /// When absent the origin is the centre of the precinct lon/lat bounding box.
    std::optional<geo::LonLat> origin;
    AdjacencyOptions adjacency;
};

std::optional<geo::LonLat> parse_origin(const nlohmann::json& precincts);

LoadedGeometry parse_geometry(const nlohmann::json& precincts, const nlohmann::json* streets,
                              const GeometryOptions& options = {});
LoadedGeometry load_geometry(const std::filesystem::path& precincts_path,
                             const std::optional<std::filesystem::path>& streets_path,
                             const GeometryOptions& options = {});

nlohmann::json to_json(const EventSet& events);
EventSet event_set_from_json(const nlohmann::json& j);

/// FNV-1a 64-bit over bytes; stable across platforms and runs.
std::uint64_t content_hash(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t file_hash(const std::filesystem::path& path, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex_hash(std::uint64_t h);

} // namespace geordd::ingest
