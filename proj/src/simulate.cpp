#include "geordd/simulate.hpp"

#include "geordd/error.hpp"
#include "geordd/nullstreets.hpp"
#include "geordd/pipeline.hpp"
#include "geordd/random.hpp"
#include "geordd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace geordd::simulate {

std::optional<ScenarioKind> parse_scenario_kind(std::string_view s) {
    if (s == "constant") return ScenarioKind::constant;
    if (s == "random") return ScenarioKind::random;
    if (s == "spatial") return ScenarioKind::spatial;
    if (s == "precinct_effect" || s == "precinct-effect" || s == "precinct") return ScenarioKind::precinct_effect;
    return std::nullopt;
}

std::string_view to_string(ScenarioKind k) {
    switch (k) {
    case ScenarioKind::constant: return "constant";
    case ScenarioKind::random: return "random";
    case ScenarioKind::spatial: return "spatial";
    case ScenarioKind::precinct_effect: return "precinct_effect";
    }
    return "constant";
}

void ScenarioSpec::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("scenario: ") + name + " must be positive");
    };
    positive(base_intensity, "base_intensity");
    if (kind == ScenarioKind::random || kind == ScenarioKind::spatial) positive(noise_scale, "noise_scale");
    if (kind == ScenarioKind::spatial) positive(spatial_range, "spatial_range");
    if (kind == ScenarioKind::precinct_effect) positive(precinct_spread, "precinct_spread");
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
    ScenarioSpec s;
    for (const auto& [key, value] : j.items()) {
        static const std::set<std::string> known{"kind", "base_intensity", "noise_scale", "spatial_range",
                                                 "precinct_spread", "seed"};
        if (!known.count(key)) throw ConfigError("unknown scenario key '" + key + "'");
    }
    try {
        if (j.contains("kind")) {
            const auto k = parse_scenario_kind(j.at("kind").get<std::string>());
            if (!k) throw ConfigError("unknown scenario kind '" + j.at("kind").get<std::string>() + "'");
            s.kind = *k;
        }
        s.base_intensity = j.value("base_intensity", s.base_intensity);
        s.noise_scale = j.value("noise_scale", s.noise_scale);
        s.spatial_range = j.value("spatial_range", s.spatial_range);
        s.precinct_spread = j.value("precinct_spread", s.precinct_spread);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const ScenarioSpec& s) {
    return {{"kind", std::string(to_string(s.kind))},
            {"base_intensity", s.base_intensity},
            {"noise_scale", s.noise_scale},
            {"spatial_range", s.spatial_range},
            {"precinct_spread", s.precinct_spread},
            {"seed", s.seed}};
}

Grid frame_for(const ingest::RegionGeometry& geometry, double cell) {
    if (!(cell > 0.0)) throw InvalidArgument("frame_for: cell size must be positive");
    geo::BBox box;
    for (const auto& [id, set] : geometry.regions) box.expand(geo::bbox(*set));
    if (box.empty()) throw InvalidArgument("frame_for: geometry has no regions");
    Grid g;
    g.cell = cell;
    g.x0 = std::floor(box.min_x / cell) * cell;
    g.y0 = std::floor(box.min_y / cell) * cell;
    g.nx = std::max(1, static_cast<int>(std::ceil((box.max_x - g.x0) / cell - 1e-9)));
    g.ny = std::max(1, static_cast<int>(std::ceil((box.max_y - g.y0) / cell - 1e-9)));
    return g;
}

namespace {

struct CellRange {
    int x0, y0, x1, y1;  // inclusive
    [[nodiscard]] bool empty() const { return x0 > x1 || y0 > y1; }
};

CellRange cells_over(const Grid& g, const geo::BBox& box) {
    CellRange r;
    r.x0 = std::max(0, static_cast<int>(std::floor((box.min_x - g.x0) / g.cell)));
    r.y0 = std::max(0, static_cast<int>(std::floor((box.min_y - g.y0) / g.cell)));
    r.x1 = std::min(g.nx - 1, static_cast<int>(std::floor((box.max_x - g.x0) / g.cell)));
    r.y1 = std::min(g.ny - 1, static_cast<int>(std::floor((box.max_y - g.y0) / g.cell)));
    return r;
}

bool inside_frame(const Grid& g, const geo::BBox& box) {
    return box.min_x >= g.x0 && box.min_y >= g.y0 && box.max_x < g.x0 + g.nx * g.cell &&
           box.max_y < g.y0 + g.ny * g.cell;
}

std::size_t cell_index(const Grid& g, int ix, int iy) {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(g.nx) + static_cast<std::size_t>(ix);
}

void rescale_to_median(std::vector<double>& v, double target) {
    std::vector<double> tmp = v;
    const auto mid = tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2);
    std::nth_element(tmp.begin(), mid, tmp.end());
    const double med = *mid;
    for (double& x : v) x *= target / med;
}

// Separable Gaussian smoothing of an (nx x ny) field with zero padding.
std::vector<double> smooth(const std::vector<double>& in, int nx, int ny, double sd_cells) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sd_cells)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i) k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sd_cells * sd_cells));
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            double acc = 0.0;
            for (int i = std::max(-radius, -x); i <= std::min(radius, nx - 1 - x); ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * in[static_cast<std::size_t>(y) * nx + x + i];
            }
            tmp[static_cast<std::size_t>(y) * nx + x] = acc;
        }
    }
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            double acc = 0.0;
            for (int i = std::max(-radius, -y); i <= std::min(radius, ny - 1 - y); ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(y + i) * nx + x];
            }
            out[static_cast<std::size_t>(y) * nx + x] = acc;
        }
    }
    return out;
}

int draw_poisson(std::mt19937_64& rng, double mean) {
    if (!(mean > 0.0)) return 0;
    std::poisson_distribution<int> d(mean);
    return d(rng);
}

// Repeated Poisson(mean) draws by inversion of the CDF with one uniform each;
// cheaper than the library sampler for the small means of buffer rings.
class PoissonSampler {
public:
    explicit PoissonSampler(double mean) : mean_(std::max(0.0, mean)), p0_(std::exp(-mean_)) {}

    int operator()(std::mt19937_64& rng) const {
        if (mean_ == 0.0) return 0;
        if (mean_ > 30.0) return draw_poisson(rng, mean_);
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        int k = 0;
        double p = p0_, f = p0_;
        while (u > f && k < 200) {
            ++k;
            p *= mean_ / k;
            f += p;
        }
        return k;
    }

private:
    double mean_;
    double p0_;
};

} // namespace

std::vector<int> cell_regions(const ingest::RegionGeometry& geometry, const Grid& grid) {
    std::vector<int> labels(grid.size(), 0);
    for (const auto& [id, set] : geometry.regions) {
        for (const auto& poly : *set) {
            const CellRange r = cells_over(grid, poly.bbox());
            for (int iy = r.y0; iy <= r.y1; ++iy) {
                for (int ix = r.x0; ix <= r.x1; ++ix) {
                    int& label = labels[cell_index(grid, ix, iy)];
                    if (label == 0 && poly.contains(grid.center(ix, iy))) label = id;
                }
            }
        }
    }
    return labels;
}

IntensitySurface::IntensitySurface(Grid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) throw InvalidArgument("IntensitySurface: value count does not match the grid");
    for (double v : values_) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("IntensitySurface: intensities must be finite and >= 0");
    }
}

double IntensitySurface::integrate(const geo::PolygonSet& region) const {
    return simulate::integrate(values_, make_stencil(grid_, region));
}

IntensitySurface make_surface(const ScenarioSpec& spec, const Grid& grid, std::span<const int> labels) {
    spec.validate();
    if (labels.size() != grid.size()) throw InvalidArgument("make_surface: labels do not match the grid");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(grid.size(), spec.base_intensity);

    switch (spec.kind) {
    case ScenarioKind::constant: break;
    case ScenarioKind::random:
        for (double& x : v) x = std::exp(spec.noise_scale * n01(rng));
        rescale_to_median(v, spec.base_intensity);
        break;
    case ScenarioKind::spatial: {
        // Generate on a padded frame so the edges are as smooth as the interior.
        const double sd = spec.spatial_range / grid.cell;
        const int pad = static_cast<int>(std::ceil(3.0 * sd));
        const int px = grid.nx + 2 * pad;
        const int py = grid.ny + 2 * pad;
        std::vector<double> noise(static_cast<std::size_t>(px) * static_cast<std::size_t>(py));
        for (double& x : noise) x = n01(rng);
        const std::vector<double> field = smooth(noise, px, py, sd);
        double sum = 0.0, sum2 = 0.0;
        for (int iy = 0; iy < grid.ny; ++iy) {
            for (int ix = 0; ix < grid.nx; ++ix) {
                const double g = field[static_cast<std::size_t>(iy + pad) * px + ix + pad];
                v[cell_index(grid, ix, iy)] = g;
                sum += g;
                sum2 += g * g;
            }
        }
        const double n = static_cast<double>(v.size());
        const double mean = sum / n;
        const double sdv = std::sqrt(std::max(1e-300, sum2 / n - mean * mean));
        for (double& x : v) x = std::exp(spec.noise_scale * (x - mean) / sdv);
        rescale_to_median(v, spec.base_intensity);
        break;
    }
    case ScenarioKind::precinct_effect: {
        std::vector<int> ids(labels.begin(), labels.end());
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        std::map<int, double> mult;
        for (int id : ids) {
            if (id != 0) mult[id] = std::exp(spec.precinct_spread * n01(rng));
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (labels[i] != 0) v[i] = spec.base_intensity * mult[labels[i]];
        }
        break;
    }
    }
    return IntensitySurface(grid, std::move(v));
}

IntensitySurface make_surface(const ScenarioSpec& spec, const ingest::RegionGeometry& geometry, double cell) {
    const Grid grid = frame_for(geometry, cell);
    const std::vector<int> labels = cell_regions(geometry, grid);
    return make_surface(spec, grid, labels);
}

Stencil make_stencil(const Grid& grid, const geo::PolygonSet& region, int sub) {
    if (sub < 1) throw InvalidArgument("make_stencil: subsampling must be at least 1");
    Stencil s;
    const CellRange r = cells_over(grid, geo::bbox(region));
    const double step = grid.cell / sub;
    for (int iy = r.y0; iy <= r.y1; ++iy) {
        for (int ix = r.x0; ix <= r.x1; ++ix) {
            int hits = 0;
            for (int a = 0; a < sub; ++a) {
                for (int b = 0; b < sub; ++b) {
                    const geo::PlanarPoint p{grid.x0 + ix * grid.cell + (a + 0.5) * step,
                                             grid.y0 + iy * grid.cell + (b + 0.5) * step};
                    hits += geo::contains(region, p);
                }
            }
            if (hits > 0) {
                s.cells.push_back(static_cast<std::uint32_t>(cell_index(grid, ix, iy)));
                s.weights.push_back(static_cast<float>(hits) / static_cast<float>(sub * sub));
            }
        }
    }
    return s;
}

double integrate(std::span<const double> values, const Stencil& stencil) {
    double acc = 0.0;
    for (std::size_t i = 0; i < stencil.cells.size(); ++i) acc += stencil.weights[i] * values[stencil.cells[i]];
    return acc;
}

std::vector<double> sample_counts(const IntensitySurface& surface, const geo::PolygonSet& region, int months,
                                  std::uint64_t seed) {
    if (months < 0) throw InvalidArgument("sample_counts: negative month count");
    const double lambda = surface.integrate(region);
    std::mt19937_64 rng(seed);
    std::vector<double> out(static_cast<std::size_t>(months), 0.0);
    for (double& v : out) v = draw_poisson(rng, lambda);
    return out;
}

SiteStencil::SiteStencil(const Grid& grid, const geo::BorderBuffer& buffer, std::span<const double> deltas, int sub)
    : widths_(deltas.size()) {
    if (deltas.empty()) throw InvalidArgument("SiteStencil: no widths");
    if (!std::is_sorted(deltas.begin(), deltas.end())) throw InvalidArgument("SiteStencil: widths must ascend");
    const geo::BorderBuffer widest = buffer.with_delta(deltas.back());
    const geo::Polyline& line = widest.boundary();
    const std::size_t groups = 2 * widths_;

    // Class of a point: 2 * ring + side, or -1 outside the widest buffer.
    auto classify = [&](geo::PlanarPoint p) -> int {
        const geo::BoundaryProximity prox = geo::locate(p, line);
        const geo::Side side = widest.classify(p, prox);
        if (side == geo::Side::outside) return -1;
        std::size_t ring = 0;
        while (!(prox.cap_distance < deltas[ring])) ++ring;
        return static_cast<int>(2 * ring + (side == geo::Side::side1 ? 0 : 1));
    };

    std::vector<std::vector<std::pair<std::uint32_t, float>>> by_group(groups);
    const CellRange r = cells_over(grid, line.bbox().inflated(deltas.back()));
    const double step = grid.cell / sub;
    std::vector<int> hits(groups);
    for (int iy = r.y0; iy <= r.y1; ++iy) {
        for (int ix = r.x0; ix <= r.x1; ++ix) {
            const double cx = grid.x0 + ix * grid.cell;
            const double cy = grid.y0 + iy * grid.cell;
            const auto idx = static_cast<std::uint32_t>(cell_index(grid, ix, iy));
            const int c0 = classify({cx + 0.5 * grid.cell, cy + 0.5 * grid.cell});
            const bool uniform = classify({cx + 0.5 * step, cy + 0.5 * step}) == c0 &&
                                 classify({cx + grid.cell - 0.5 * step, cy + 0.5 * step}) == c0 &&
                                 classify({cx + 0.5 * step, cy + grid.cell - 0.5 * step}) == c0 &&
                                 classify({cx + grid.cell - 0.5 * step, cy + grid.cell - 0.5 * step}) == c0;
            if (uniform) {
                if (c0 >= 0) by_group[static_cast<std::size_t>(c0)].emplace_back(idx, 1.0f);
                continue;
            }
            std::fill(hits.begin(), hits.end(), 0);
            for (int a = 0; a < sub; ++a) {
                for (int b = 0; b < sub; ++b) {
                    const int c = classify({cx + (a + 0.5) * step, cy + (b + 0.5) * step});
                    if (c >= 0) ++hits[static_cast<std::size_t>(c)];
                }
            }
            for (std::size_t g = 0; g < groups; ++g) {
                if (hits[g] > 0) by_group[g].emplace_back(idx, static_cast<float>(hits[g]) / static_cast<float>(sub * sub));
            }
        }
    }
    group_start_.push_back(0);
    for (const auto& g : by_group) {
        for (const auto& [c, w] : g) {
            cells_.push_back(c);
            weights_.push_back(w);
        }
        group_start_.push_back(static_cast<std::uint32_t>(cells_.size()));
    }
}

void SiteStencil::integrate(std::span<const double> values, std::ptrdiff_t offset, std::span<double> out) const {
    double run[2] = {0.0, 0.0};
    for (std::size_t d = 0; d < widths_; ++d) {
        for (int s = 0; s < 2; ++s) {
            const std::size_t g = 2 * d + static_cast<std::size_t>(s);
            double acc = 0.0;
            for (std::uint32_t i = group_start_[g]; i < group_start_[g + 1]; ++i) {
                acc += weights_[i] * values[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(cells_[i]) + offset)];
            }
            run[s] += acc;
            out[g] = run[s];
        }
    }
}

void SiteStencil::areas(std::span<double> out) const {
    double run[2] = {0.0, 0.0};
    for (std::size_t d = 0; d < widths_; ++d) {
        for (int s = 0; s < 2; ++s) {
            const std::size_t g = 2 * d + static_cast<std::size_t>(s);
            double acc = 0.0;
            for (std::uint32_t i = group_start_[g]; i < group_start_[g + 1]; ++i) acc += weights_[i];
            run[s] += acc;
            out[g] = run[s];
        }
    }
}

GridCity make_grid_city(int n, double precinct_size, const StreetLayout& layout) {
    if (n < 1) throw InvalidArgument("make_grid_city: need at least one precinct");
    if (!(precinct_size > 0.0)) throw InvalidArgument("make_grid_city: precinct size must be positive");
    GridCity city;
    city.n = n;
    city.precinct_size = precinct_size;
    const double p = precinct_size;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const double x = c * p, y = r * p;
            geo::PolygonSet set{geo::Polygon({{x, y}, {x + p, y}, {x + p, y + p}, {x, y + p}})};
            city.geometry.regions.emplace(r * n + c + 1, std::make_shared<const geo::PolygonSet>(std::move(set)));
        }
    }
    ingest::derive_adjacency(city.geometry);

    int next_id = 1;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const geo::PlanarPoint o{c * p, r * p};
            for (double d : layout.tiers) {
                const double inner = p - 2.0 * d;
                const double h = layout.street_length - inner;
                if (!(inner > 0.0) || !(h > 0.0) || h > inner) continue;
                // Equal outer legs make each shape symmetric under a half turn,
                // which swaps its sides, so the two sides balance exactly.
                const double a = 0.5 * inner;
                for (double frac : {0.0, 0.5, 1.0}) {
                    const double y0 = d + frac * (inner - h);
                    // Z: east, north, east. S mirrors it top to bottom.
                    const std::vector<geo::PlanarPoint> z{{d, y0}, {d + a, y0}, {d + a, y0 + h}, {p - d, y0 + h}};
                    const std::vector<geo::PlanarPoint> s{{d, y0 + h}, {d + a, y0 + h}, {d + a, y0}, {p - d, y0}};
                    for (const auto* shape : {&z, &s}) {
                        for (bool transpose : {false, true}) {
                            std::vector<geo::PlanarPoint> v;
                            for (const auto& q : *shape) {
                                v.push_back(o + (transpose ? geo::PlanarPoint{q.y, q.x} : q));
                            }
                            city.streets.push_back({next_id++, geo::Polyline(std::move(v))});
                        }
                    }
                }
            }
        }
    }
    return city;
}

// ---------------------------------------------------------------------------
// Scenario runner

struct ScenarioContext::Impl {
    SimulationOptions options;
    Grid grid;
    std::vector<int> labels;
    std::vector<pipeline::Border> borders;
    std::vector<std::shared_ptr<const SiteStencil>> border_stencils;
    std::vector<nullstreets::NullStreet> candidates;
    std::vector<std::shared_ptr<const SiteStencil>> cand_stencils;
    std::vector<std::ptrdiff_t> cand_offsets;
    std::vector<std::size_t> cand_widths;  // number of valid widths
    std::vector<std::vector<std::size_t>> pools;  // per width: candidate indices
    std::vector<std::vector<double>> border_areas;
    std::vector<std::vector<double>> cand_areas;
};

ScenarioContext::ScenarioContext(const ingest::RegionGeometry& geometry, std::span<const ingest::Street> streets,
                                 const SimulationOptions& options)
    : impl_(std::make_unique<Impl>()) {
    Impl& m = *impl_;
    m.options = options;
    const auto& deltas = options.deltas;
    if (deltas.empty() || !std::is_sorted(deltas.begin(), deltas.end()) || !(deltas.front() > 0.0)) {
        throw ConfigError("simulation buffers must be positive and ascending");
    }
    if (options.b == 0) throw ConfigError("simulation B must be at least 1");
    if (options.months < 3) throw ConfigError("simulation needs at least three months");
    m.grid = frame_for(geometry, options.cell);
    m.labels = cell_regions(geometry, m.grid);

    m.borders = pipeline::make_borders(geometry);
    if (m.borders.empty()) throw DataError("geometry has no adjacent regions");
    for (const auto& b : m.borders) {
        auto st = std::make_shared<const SiteStencil>(m.grid, b.buffer, deltas);
        std::vector<double> a(2 * deltas.size());
        st->areas(a);
        m.border_areas.push_back(std::move(a));
        m.border_stencils.push_back(std::move(st));
    }

    nullstreets::CandidateOptions copt;
    copt.margin = options.margin;
    copt.min_length = options.min_length;
    m.candidates = nullstreets::extract_candidates(streets, geometry, deltas.front(), copt);

    // Streets that are translated copies of each other on the cell lattice
    // share one stencil.
    std::map<std::vector<double>, std::pair<std::shared_ptr<const SiteStencil>, std::ptrdiff_t>> templates;
    m.pools.resize(deltas.size());
    for (std::size_t i = 0; i < m.candidates.size(); ++i) {
        const auto& c = m.candidates[i];
        std::size_t nv = 0;
        while (nv < deltas.size() && c.valid_at(deltas[nv])) ++nv;
        const std::span<const double> valid(deltas.data(), nv);
        const geo::BBox box = c.centerline.bbox().inflated(deltas[nv - 1]);
        const double sx = std::floor((c.centerline.bbox().min_x - m.grid.x0) / m.grid.cell);
        const double sy = std::floor((c.centerline.bbox().min_y - m.grid.y0) / m.grid.cell);
        std::vector<double> key{static_cast<double>(nv)};
        for (const auto& v : c.centerline.vertices()) {
            key.push_back(v.x - (m.grid.x0 + sx * m.grid.cell));
            key.push_back(v.y - (m.grid.y0 + sy * m.grid.cell));
        }
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(sy) * m.grid.nx + static_cast<std::ptrdiff_t>(sx);
        std::shared_ptr<const SiteStencil> st;
        std::ptrdiff_t offset = 0;
        const bool translatable = inside_frame(m.grid, box);
        const auto it = translatable ? templates.find(key) : templates.end();
        if (it != templates.end()) {
            st = it->second.first;
            offset = base - it->second.second;
        } else {
            st = std::make_shared<const SiteStencil>(m.grid, c.buffer(valid.back()), valid);
            if (translatable) templates.emplace(std::move(key), std::make_pair(st, base));
        }
        std::vector<double> a(2 * nv);
        st->areas(a);
        m.cand_areas.push_back(std::move(a));
        m.cand_stencils.push_back(std::move(st));
        m.cand_offsets.push_back(offset);
        m.cand_widths.push_back(nv);
        for (std::size_t d = 0; d < nv; ++d) m.pools[d].push_back(i);
    }
}

ScenarioContext::~ScenarioContext() = default;
ScenarioContext::ScenarioContext(ScenarioContext&&) noexcept = default;
ScenarioContext& ScenarioContext::operator=(ScenarioContext&&) noexcept = default;

std::size_t ScenarioContext::borders() const { return impl_->borders.size(); }
std::size_t ScenarioContext::candidates() const { return impl_->candidates.size(); }
std::size_t ScenarioContext::pool_size(std::size_t d) const { return impl_->pools.at(d).size(); }

namespace {

struct SiteDraw {
    std::vector<pipeline::SiteStatistic> stat;        // per valid width
    std::vector<nullstreets::MatchCovariates> crime;  // per valid width
    std::vector<double> binomial_p;                    // per valid width
};

SiteDraw draw_site(const SiteStencil& stencil, std::ptrdiff_t offset, const std::vector<double>& areas,
                   const IntensitySurface& surface, const ScenarioSpec& spec, const SimulationOptions& opt,
                   std::mt19937_64& rng, bool binomial) {
    const std::size_t nw = stencil.widths();
    std::vector<double> lambda(2 * nw);
    stencil.integrate(surface.values(), offset, lambda);
    SiteDraw out;
    out.stat.reserve(nw);
    const auto months = static_cast<std::size_t>(opt.months);
    std::vector<double> y1(months, 0.0), y0(months, 0.0);
    // Wider buffers contain the narrower ones, so each width adds a draw for
    // its ring to the counts of the previous width.
    for (std::size_t d = 0; d < nw; ++d) {
        const PoissonSampler p1(lambda[2 * d] - (d > 0 ? lambda[2 * d - 2] : 0.0));
        const PoissonSampler p0(lambda[2 * d + 1] - (d > 0 ? lambda[2 * d - 1] : 0.0));
        double t1 = 0.0, t0 = 0.0;
        for (std::size_t t = 0; t < months; ++t) {
            y1[t] += p1(rng);
            y0[t] += p0(rng);
            t1 += y1[t];
            t0 += y0[t];
        }
        pipeline::SiteStatistic s = pipeline::ar_statistic(stats::diff_series(y1, y0), opt.order);
        s.total1 = t1;
        s.total0 = t0;
        out.stat.push_back(std::move(s));
        out.binomial_p.push_back(binomial && t1 + t0 > 0.0 ? stats::binom_test(static_cast<std::uint64_t>(t1),
                                                                   static_cast<std::uint64_t>(t0))
                                               : std::numeric_limits<double>::quiet_NaN());

        // Crime follows the outcome surface, except that a precinct effect
        // acts on the outcome only.
        const double scale = opt.crime_multiplier * static_cast<double>(months);
        const double c1 = spec.kind == ScenarioKind::precinct_effect ? spec.base_intensity * areas[2 * d] : lambda[2 * d];
        const double c0 =
            spec.kind == ScenarioKind::precinct_effect ? spec.base_intensity * areas[2 * d + 1] : lambda[2 * d + 1];
        out.crime.push_back(nullstreets::make_covariates(draw_poisson(rng, scale * c1), draw_poisson(rng, scale * c0)));
    }
    return out;
}

struct DatasetOutcome {
    // per width
    std::vector<std::size_t> tests, failed, corrected, quantile, naive, binomial;
    std::vector<int> global_reject, global_naive_reject, global_ran;
    std::vector<DatasetPValues> pvalues;
};

DatasetOutcome run_dataset(const ScenarioSpec& spec, const ScenarioContext::Impl& m, std::size_t index) {
    const SimulationOptions& opt = m.options;
    const std::size_t nw = opt.deltas.size();
    const std::uint64_t seed = derive_seed(opt.master_seed, {static_cast<std::uint64_t>(spec.kind), spec.seed, index});
    ScenarioSpec surface_spec = spec;
    surface_spec.seed = derive_seed(seed, {0});
    const IntensitySurface surface = make_surface(surface_spec, m.grid, m.labels);
    std::mt19937_64 rng(derive_seed(seed, {1}));

    std::vector<SiteDraw> borders, cands;
    borders.reserve(m.borders.size());
    for (std::size_t b = 0; b < m.borders.size(); ++b) {
        borders.push_back(draw_site(*m.border_stencils[b], 0, m.border_areas[b], surface, spec, opt, rng, true));
    }
    cands.reserve(m.candidates.size());
    for (std::size_t c = 0; c < m.candidates.size(); ++c) {
        cands.push_back(draw_site(*m.cand_stencils[c], m.cand_offsets[c], m.cand_areas[c], surface, spec, opt, rng, false));
    }

    DatasetOutcome out;
    for (auto* v : {&out.tests, &out.failed, &out.corrected, &out.quantile, &out.naive, &out.binomial}) v->assign(nw, 0);
    out.global_reject.assign(nw, 0);
    out.global_naive_reject.assign(nw, 0);
    out.global_ran.assign(nw, 0);

    for (std::size_t d = 0; d < nw; ++d) {
        const auto& pool_idx = m.pools[d];
        std::vector<nullstreets::Candidate> pool;
        pool.reserve(pool_idx.size());
        for (std::size_t c : pool_idx) pool.push_back({static_cast<int>(c), cands[c].crime[d], nullptr});
        const std::size_t b_use = std::min(opt.b, pool.size());
        if (b_use == 0) throw DataError("no null-street candidates at width " + std::to_string(opt.deltas[d]));
        const nullstreets::MatchPool matcher(pool);

        DatasetPValues pv;
        pv.dataset = index;
        pv.delta = opt.deltas[d];
        std::vector<double> observed, naive_ps;
        std::vector<std::vector<double>> null_by_rank;
        bool global_ok = true;
        for (std::size_t bi = 0; bi < m.borders.size(); ++bi) {
            const SiteDraw& bd = borders[bi];
            const pipeline::SiteStatistic& obs = bd.stat[d];
            const nullstreets::MatchCovariates& target = bd.crime[d];
            if (!obs.ok || !(target.total > 0.0)) {
                ++out.failed[d];
                global_ok = false;
                continue;
            }
            const nullstreets::MatchSet ms = matcher.match(target, b_use);
            std::vector<pipeline::SiteStatistic> nulls;
            nulls.reserve(ms.size());
            std::vector<double> ranked;
            for (int id : ms.street_ids) {
                const auto& s = cands[static_cast<std::size_t>(id)].stat[d];
                nulls.push_back(s);
                ranked.push_back(s.ok ? s.value : std::numeric_limits<double>::quiet_NaN());
            }
            const inference::TestResult r = inference::test_against_null(m.borders[bi].id, opt.deltas[d], obs, nulls, opt.alpha);
            ++out.tests[d];
            out.corrected[d] += r.reject;
            out.quantile[d] += r.reject_quantile;
            out.naive[d] += r.naive_reject;
            out.binomial[d] += std::isfinite(bd.binomial_p[d]) && bd.binomial_p[d] <= opt.alpha;
            observed.push_back(obs.value);
            naive_ps.push_back(obs.naive_p);
            null_by_rank.push_back(std::move(ranked));
            if (opt.keep_pvalues) {
                pv.corrected.push_back(r.p_value);
                pv.naive.push_back(r.naive_p);
                pv.binomial.push_back(bd.binomial_p[d]);
            }
        }
        if (global_ok && !observed.empty()) {
            const inference::GlobalResult g = inference::global_test(observed, null_by_rank, opt.alpha, naive_ps);
            out.global_ran[d] = 1;
            out.global_reject[d] = g.reject;
            out.global_naive_reject[d] = g.naive_reject;
            pv.global = g.p_value;
        }
        if (opt.keep_pvalues) out.pvalues.push_back(std::move(pv));
    }
    return out;
}

} // namespace

ScenarioResult run_scenario(const ScenarioSpec& spec, const ScenarioContext& context) {
    spec.validate();
    const ScenarioContext::Impl& m = context.impl();
    const SimulationOptions& opt = m.options;
    if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
    const std::size_t n = opt.datasets;
    std::vector<DatasetOutcome> outcomes(n);
    std::vector<std::string> errors(n);

#ifdef _OPENMP
    const int threads = opt.threads > 0 ? opt.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            outcomes[static_cast<std::size_t>(i)] = run_dataset(spec, m, static_cast<std::size_t>(i));
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i].empty()) throw Error("dataset " + std::to_string(i) + ": " + errors[i]);
    }

    ScenarioResult res;
    res.spec = spec;
    res.options = opt;
    res.borders = m.borders.size();
    res.candidates = m.candidates.size();
    for (std::size_t d = 0; d < opt.deltas.size(); ++d) {
        RateRow row;
        row.delta = opt.deltas[d];
        std::size_t c = 0, q = 0, nv = 0, bn = 0, g = 0, gn = 0;
        for (const auto& o : outcomes) {
            row.tests += o.tests[d];
            row.failed += o.failed[d];
            c += o.corrected[d];
            q += o.quantile[d];
            nv += o.naive[d];
            bn += o.binomial[d];
            row.global_tests += static_cast<std::size_t>(o.global_ran[d]);
            g += static_cast<std::size_t>(o.global_reject[d]);
            gn += static_cast<std::size_t>(o.global_naive_reject[d]);
        }
        const double nt = std::max<double>(1.0, static_cast<double>(row.tests));
        const double ng = std::max<double>(1.0, static_cast<double>(row.global_tests));
        row.individual_corrected = static_cast<double>(c) / nt;
        row.individual_quantile = static_cast<double>(q) / nt;
        row.individual_naive = static_cast<double>(nv) / nt;
        row.individual_binomial = static_cast<double>(bn) / nt;
        row.global_corrected = static_cast<double>(g) / ng;
        row.global_naive = static_cast<double>(gn) / ng;
        res.rows.push_back(row);
    }
    if (opt.keep_pvalues) {
        for (auto& o : outcomes) {
            for (auto& p : o.pvalues) res.pvalues.push_back(std::move(p));
        }
    }
    return res;
}

ScenarioResult run_scenario(const ScenarioSpec& spec, const ingest::RegionGeometry& geometry,
                            std::span<const ingest::Street> streets, const SimulationOptions& options) {
    const ScenarioContext ctx(geometry, streets, options);
    return run_scenario(spec, ctx);
}

std::string rates_csv(std::span<const ScenarioResult> results, const std::string& config_hash) {
    std::ostringstream out;
    out << "config_hash,test,procedure,delta";
    for (const auto& r : results) out << ',' << to_string(r.spec.kind);
    out << '\n';
    if (results.empty()) return out.str();
    struct Column {
        const char* test;
        const char* procedure;
        double RateRow::*field;
    };
    const Column columns[] = {
        {"individual", "corrected", &RateRow::individual_corrected},
        {"individual", "quantile", &RateRow::individual_quantile},
        {"individual", "naive_ar", &RateRow::individual_naive},
        {"individual", "naive_binomial", &RateRow::individual_binomial},
        {"global", "corrected", &RateRow::global_corrected},
        {"global", "naive_sidak", &RateRow::global_naive},
    };
    out.setf(std::ios::fixed);
    out.precision(4);
    for (const auto& col : columns) {
        for (std::size_t d = 0; d < results.front().rows.size(); ++d) {
            out << config_hash << ',' << col.test << ',' << col.procedure << ',' << results.front().rows[d].delta;
            for (const auto& r : results) out << ',' << r.rows.at(d).*col.field;
            out << '\n';
        }
    }
    return out.str();
}

ingest::EventSet synthetic_events(const ScenarioSpec& spec, const ingest::RegionGeometry& geometry, int months,
                                  double crime_multiplier, double tree_intensity, std::uint64_t seed, double cell) {
    const Grid grid = frame_for(geometry, cell);
    const std::vector<int> labels = cell_regions(geometry, grid);
    ScenarioSpec s = spec;
    s.seed = derive_seed(seed, {0});
    const IntensitySurface surface = make_surface(s, grid, labels);
    std::mt19937_64 rng(derive_seed(seed, {1}));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> month_of(1, months);
    ingest::EventSet ev(months);
    auto place = [&](int ix, int iy) {
        return geo::PlanarPoint{grid.x0 + (ix + u01(rng)) * grid.cell, grid.y0 + (iy + u01(rng)) * grid.cell};
    };
    for (int iy = 0; iy < grid.ny; ++iy) {
        for (int ix = 0; ix < grid.nx; ++ix) {
            const std::size_t i = cell_index(grid, ix, iy);
            if (labels[i] == 0) continue;
            const double lam = surface.values()[i];
            const double crime = crime_multiplier * (spec.kind == ScenarioKind::precinct_effect ? spec.base_intensity : lam);
            // Trees share the surface shape but never a precinct effect.
            const double tree = tree_intensity * (spec.kind == ScenarioKind::precinct_effect ? 1.0 : lam / spec.base_intensity);
            for (int t = 1; t <= months; ++t) {
                for (int k = draw_poisson(rng, lam); k > 0; --k) {
                    const geo::PlanarPoint p = place(ix, iy);
                    ev.add(t, p, ingest::EventKind::arrest, labels[i]);
                }
                for (int k = draw_poisson(rng, crime); k > 0; --k) ev.add(t, place(ix, iy), ingest::EventKind::crime, std::nullopt);
            }
            for (int k = draw_poisson(rng, tree); k > 0; --k) {
                ev.add(month_of(rng), place(ix, iy), ingest::EventKind::tree, std::nullopt);
            }
        }
    }
    return ev;
}

} // namespace geordd::simulate
