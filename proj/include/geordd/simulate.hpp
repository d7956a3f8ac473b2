#pragma once

// Intensity surfaces over a city, Poisson sampling of monthly counts, a
// synthetic grid city, and the scenario runner that measures rejection
// rates of the naive and corrected tests.

#include "geordd/geo.hpp"
#include "geordd/inference.hpp"
#include "geordd/ingest.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace geordd::simulate {

enum class ScenarioKind { constant, random, spatial, precinct_effect };

std::optional<ScenarioKind> parse_scenario_kind(std::string_view s);
std::string_view to_string(ScenarioKind k);

struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::constant;
    double base_intensity = 0.03;   // lambda_0, events per cell per month
    double noise_scale = 1.0;       // log-scale sd of Random and Spatial surfaces
    double spatial_range = 2000.0;  // feet; sd of the smoothing kernel
    double precinct_spread = 0.5;   // log-scale sd of precinct multipliers
    std::uint64_t seed = 1;

    /// Throws ConfigError on non-positive or non-finite parameters.
    void validate() const;
};

ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScenarioSpec& s);

/// Raster frame: cell (ix, iy) covers [x0 + ix*cell, x0 + (ix+1)*cell) x [...].
struct Grid {
    double x0 = 0.0;
    double y0 = 0.0;
    double cell = 100.0;
    int nx = 0;
    int ny = 0;

    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    [[nodiscard]] geo::PlanarPoint center(int ix, int iy) const {
        return {x0 + (ix + 0.5) * cell, y0 + (iy + 0.5) * cell};
    }
};

/// Cell-aligned frame covering every region.
Grid frame_for(const ingest::RegionGeometry& geometry, double cell = 100.0);

/// Region id of each cell centre, 0 outside every region.
std::vector<int> cell_regions(const ingest::RegionGeometry& geometry, const Grid& grid);

class IntensitySurface {
public:
    IntensitySurface(Grid grid, std::vector<double> values);

    [[nodiscard]] const Grid& grid() const { return grid_; }
    [[nodiscard]] std::span<const double> values() const { return values_; }
    [[nodiscard]] double at(int ix, int iy) const {
        return values_[static_cast<std::size_t>(iy) * static_cast<std::size_t>(grid_.nx) + static_cast<std::size_t>(ix)];
    }
    /// Lambda(R): cell intensities weighted by the fraction of each cell inside R.
    [[nodiscard]] double integrate(const geo::PolygonSet& region) const;

private:
    Grid grid_;
    std::vector<double> values_;
};

IntensitySurface make_surface(const ScenarioSpec& spec, const ingest::RegionGeometry& geometry, double cell = 100.0);
/// Same as above with the frame and cell labels already computed.
IntensitySurface make_surface(const ScenarioSpec& spec, const Grid& grid, std::span<const int> labels);

/// Cells of a region with their covered fractions, estimated on an
/// sub x sub lattice of points per cell.
struct Stencil {
    std::vector<std::uint32_t> cells;
    std::vector<float> weights;
};
Stencil make_stencil(const Grid& grid, const geo::PolygonSet& region, int sub = 4);
double integrate(std::span<const double> values, const Stencil& stencil);

/// T independent Poisson(Lambda(R)) monthly counts.
std::vector<double> sample_counts(const IntensitySurface& surface, const geo::PolygonSet& region, int months,
                                  std::uint64_t seed);

/// Both sides of a buffer at several widths, laid out for fast integration.
/// Entries are grouped by (width ring, side): a cell appears in the ring of
/// the smallest width that already covers it.
class SiteStencil {
public:
    SiteStencil(const Grid& grid, const geo::BorderBuffer& buffer, std::span<const double> deltas, int sub = 4);

    [[nodiscard]] std::size_t widths() const { return widths_; }
    /// Lambda of side1 and side0 at every width: out[2*d] side1, out[2*d+1] side0.
    void integrate(std::span<const double> values, std::ptrdiff_t offset, std::span<double> out) const;
    /// Covered area in cells, same layout as integrate().
    void areas(std::span<double> out) const;
    [[nodiscard]] std::size_t entries() const { return cells_.size(); }

private:
    std::size_t widths_ = 0;
    std::vector<std::uint32_t> cells_;
    std::vector<float> weights_;
    std::vector<std::uint32_t> group_start_;  // 2 * widths + 1
};

struct StreetLayout {
    /// Clearance tiers: candidates at tier d keep d feet from the precinct edge.
    std::vector<double> tiers{400, 600, 800, 1000, 1200, 1400};
    double street_length = 6000.0;
};

struct GridCity {
    int n = 0;
    double precinct_size = 0.0;
    ingest::RegionGeometry geometry;
    std::vector<ingest::Street> streets;
};

/// n x n square precincts of side `precinct_size` feet, ids 1..n*n row-major
/// from the south-west, with Z- and S-shaped interior streets whose two sides
/// have equal areas at every width.
GridCity make_grid_city(int n, double precinct_size = 6000.0, const StreetLayout& layout = {});

struct SimulationOptions {
    std::size_t datasets = 200;
    std::vector<double> deltas{300, 500, 700, 900, 1100, 1300};
    double alpha = 0.05;
    std::size_t b = 250;
    int order = 1;
    int months = 108;
    double crime_multiplier = 2.0;  // crime intensity relative to the outcome
    double cell = 100.0;
    double margin = 100.0;
    double min_length = 300.0;
    std::uint64_t master_seed = 20240601;
    int threads = 0;  // 0: OpenMP default
    bool keep_pvalues = false;
};

struct RateRow {
    double delta = 0.0;
    std::size_t tests = 0;              // individual tests run
    std::size_t failed = 0;             // border fits that failed
    double individual_corrected = 0.0;  // add-one p <= alpha
    double individual_quantile = 0.0;   // |theta| > Q(1 - alpha)
    double individual_naive = 0.0;      // normal-theory AR p
    double individual_binomial = 0.0;   // exact binomial on totals
    double global_corrected = 0.0;
    double global_naive = 0.0;          // Sidak-combined naive p
    std::size_t global_tests = 0;
};

struct DatasetPValues {
    std::size_t dataset = 0;
    double delta = 0.0;
    std::vector<double> corrected;
    std::vector<double> naive;
    std::vector<double> binomial;
    double global = 1.0;
};

struct ScenarioResult {
    ScenarioSpec spec;
    SimulationOptions options;
    std::vector<RateRow> rows;  // one per width
    std::vector<DatasetPValues> pvalues;
    std::size_t candidates = 0;
    std::size_t borders = 0;
};

/// Sites shared across datasets: borders, null-street candidates and their
/// stencils. Build once per (geometry, options).
class ScenarioContext {
public:
    ScenarioContext(const ingest::RegionGeometry& geometry, std::span<const ingest::Street> streets,
                    const SimulationOptions& options);
    ~ScenarioContext();
    ScenarioContext(ScenarioContext&&) noexcept;
    ScenarioContext& operator=(ScenarioContext&&) noexcept;

    [[nodiscard]] std::size_t borders() const;
    [[nodiscard]] std::size_t candidates() const;
    /// Candidates valid at width index d.
    [[nodiscard]] std::size_t pool_size(std::size_t d) const;

    struct Impl;
    [[nodiscard]] const Impl& impl() const { return *impl_; }

private:
    std::unique_ptr<Impl> impl_;
};

ScenarioResult run_scenario(const ScenarioSpec& spec, const ScenarioContext& context);
ScenarioResult run_scenario(const ScenarioSpec& spec, const ingest::RegionGeometry& geometry,
                            std::span<const ingest::Street> streets, const SimulationOptions& options);

/// Rates CSV: one row per (test, procedure, width), one rejection-rate
/// column per scenario.
std::string rates_csv(std::span<const ScenarioResult> results, const std::string& config_hash);

/// One synthetic dataset as point events (arrests, crimes, trees), for
/// exercising the event-based pipeline end to end.
ingest::EventSet synthetic_events(const ScenarioSpec& spec, const ingest::RegionGeometry& geometry, int months,
                                  double crime_multiplier, double tree_intensity, std::uint64_t seed,
                                  double cell = 100.0);

} // namespace geordd::simulate
