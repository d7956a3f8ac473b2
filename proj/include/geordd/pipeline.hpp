#pragma once

// Turning events into per-site side series: a uniform-grid event index,
// border construction from region adjacency, multi-width side counting and
// the site statistic shared by borders and null streets.

#include "geordd/geo.hpp"
#include "geordd/ingest.hpp"
#include "geordd/stats.hpp"

#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geordd::pipeline {

/// How an event is assigned to a side of a border buffer.
enum class Attribution {
    location,       // by where it happened
    source_region,  // by the region recorded on the event (the arresting precinct)
};

/// Which outcome the site statistic is computed from.
enum class Outcome {
    arrest_count,  // monthly arrest count difference
    arrest_rate,   // monthly arrests-per-crime difference
    tree_count,    // total tree count difference (negative control)
};

std::optional<Attribution> parse_attribution(std::string_view s);
std::optional<Outcome> parse_outcome(std::string_view s);
std::string_view to_string(Attribution a);
std::string_view to_string(Outcome o);

/// Uniform grid over all events for fast rectangle queries.
class EventIndex {
public:
    struct Entry {
        geo::PlanarPoint p;
        int month = 0;
        ingest::EventKind kind = ingest::EventKind::arrest;
        int source = -1;
    };

    explicit EventIndex(const ingest::EventSet& events, double cell_size = 1000.0);

    [[nodiscard]] int months() const { return months_; }
    /// Calls `fn` for every event whose position lies in `box`.
    void visit(const geo::BBox& box, const std::function<void(const Entry&)>& fn) const;

private:
    double cell_ = 1000.0;
    int months_ = 0;
    geo::BBox extent_;
    int nx_ = 0;
    int ny_ = 0;
    std::vector<std::vector<Entry>> cells_;
};

struct Border {
    int id = 0;
    ingest::RegionPair regions;  // side1 lies in regions.first
    geo::BorderBuffer buffer;    // membership rule at a nominal width
};

/// One border per adjacent pair in adjacency order, ids 1..M.
std::vector<Border> make_borders(const ingest::RegionGeometry& geometry);

/// Monthly side series for every event kind at several buffer widths.
struct SiteCounts {
    std::vector<double> deltas;
    /// series[d][kind] for delta index d and kind index (arrest, crime, tree).
    std::vector<std::array<stats::SideSeries, 3>> series;
    std::size_t unattributed = 0;  // source-attributed events naming neither side

    [[nodiscard]] const stats::SideSeries& at(std::size_t d, ingest::EventKind kind) const {
        return series[d][static_cast<std::size_t>(kind)];
    }
};

/// Counts events by side for each width in `deltas` (ascending). With
/// source attribution `regions` names the region ids of side1 and side0;
/// events from other sources are dropped and tallied.
SiteCounts count_site(const geo::BorderBuffer& buffer, std::span<const double> deltas, const EventIndex& index,
                      Attribution attribution = Attribution::location,
                      std::optional<ingest::RegionPair> regions = std::nullopt);

/// A site's test statistic with its naive reference p-value.
struct SiteStatistic {
    double value = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    double naive_p = std::numeric_limits<double>::quiet_NaN();
    std::size_t masked_months = 0;
    std::size_t n_eff = 0;
    double total1 = 0.0;
    double total0 = 0.0;
    bool ok = false;
    std::string failure;
};

/// AR(Q) intercept of a difference series; fit failures are returned, not thrown.
SiteStatistic ar_statistic(const stats::DiffSeries& z, int order);

/// Statistic of `outcome` for delta index d.
SiteStatistic site_statistic(const SiteCounts& counts, std::size_t d, Outcome outcome, int order);

/// Total count difference with the exact binomial test as its naive p-value.
SiteStatistic total_statistic(double side1, double side0);

} // namespace geordd::pipeline
