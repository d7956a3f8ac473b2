#include "geordd/error.hpp"
#include "geordd/nullstreets.hpp"
#include "geordd/pipeline.hpp"
#include "geordd/simulate.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

using namespace geordd;
using namespace geordd::simulate;

namespace {

std::shared_ptr<const geo::PolygonSet> square(double x0, double y0, double x1, double y1) {
    return std::make_shared<const geo::PolygonSet>(
        geo::PolygonSet{geo::Polygon(geo::Ring{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}})});
}

ScenarioSpec spec_of(ScenarioKind k, std::uint64_t seed = 1) {
    ScenarioSpec s;
    s.kind = k;
    s.seed = seed;
    return s;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double variance(const std::vector<double>& v) {
    const double m = mean(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / double(v.size() - 1);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = mean(a), mb = mean(b);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Sample correlation of log intensity between cells `lag` apart along x.
double correlogram(const IntensitySurface& s, int lag) {
    std::vector<double> a, b;
    const auto& g = s.grid();
    for (int iy = 0; iy < g.ny; iy += 3) {
        for (int ix = 0; ix + lag < g.nx; ix += 3) {
            a.push_back(std::log(s.at(ix, iy)));
            b.push_back(std::log(s.at(ix + lag, iy)));
        }
    }
    return correlation(a, b);
}

bool all_equal(std::span<const double> a, std::span<const double> b) { return std::equal(a.begin(), a.end(), b.begin(), b.end()); }

} // namespace

TEST_CASE("scenario names and validation") {
    for (auto k : {ScenarioKind::constant, ScenarioKind::random, ScenarioKind::spatial, ScenarioKind::precinct_effect}) {
        CHECK(parse_scenario_kind(to_string(k)) == k);
    }
    CHECK(parse_scenario_kind("precinct-effect") == ScenarioKind::precinct_effect);
    CHECK_FALSE(parse_scenario_kind("hotspot"));
    ScenarioSpec bad;
    bad.base_intensity = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = spec_of(ScenarioKind::spatial);
    bad.spatial_range = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.kind = ScenarioKind::constant;  // the range only matters to Spatial
    CHECK_NOTHROW(bad.validate());
    const auto s = spec_of(ScenarioKind::spatial, 42);
    const auto back = scenario_from_json(to_json(s));
    CHECK(back.kind == s.kind);
    CHECK(back.seed == 42);
    CHECK(back.spatial_range == s.spatial_range);
    CHECK_THROWS_AS(scenario_from_json({{"kind", "constant"}, {"bogus", 1}}), ConfigError);
}

TEST_CASE("constant and precinct-effect surfaces") {
    const auto city = make_grid_city(2, 6000);
    ScenarioSpec c = spec_of(ScenarioKind::constant);
    c.base_intensity = 2.0;
    const auto s = make_surface(c, city.geometry);
    for (double v : s.values()) CHECK(v == 2.0);

    const auto grid = frame_for(city.geometry);
    const auto labels = cell_regions(city.geometry, grid);
    const auto pe = make_surface(spec_of(ScenarioKind::precinct_effect, 5), grid, labels);
    std::map<int, std::set<double>> per_region;
    for (std::size_t i = 0; i < labels.size(); ++i) per_region[labels[i]].insert(pe.values()[i]);
    for (const auto& [id, values] : per_region) {
        if (id != 0) CHECK(values.size() == 1);
    }
    CHECK(per_region.size() >= 4);
}

TEST_CASE("surfaces are deterministic in their seed") {
    const auto city = make_grid_city(2, 6000);
    for (auto k : {ScenarioKind::random, ScenarioKind::spatial, ScenarioKind::precinct_effect}) {
        const auto a = make_surface(spec_of(k, 3), city.geometry);
        const auto b = make_surface(spec_of(k, 3), city.geometry);
        const auto c = make_surface(spec_of(k, 4), city.geometry);
        CHECK(all_equal(a.values(), b.values()));
        CHECK_FALSE(all_equal(a.values(), c.values()));
        for (double v : a.values()) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0);
        }
    }
}

TEST_CASE("null surfaces ignore precinct labels") {
    const auto city = make_grid_city(3, 6000);
    const auto grid = frame_for(city.geometry);
    auto labels = cell_regions(city.geometry, grid);
    auto permuted = labels;
    for (int& l : permuted) {
        if (l != 0) l = 10 - l;
    }
    for (auto k : {ScenarioKind::constant, ScenarioKind::random, ScenarioKind::spatial}) {
        CHECK(all_equal(make_surface(spec_of(k, 8), grid, labels).values(),
                        make_surface(spec_of(k, 8), grid, permuted).values()));
    }
}

TEST_CASE("random surface has median lambda0 and no spatial correlation") {
    const auto city = make_grid_city(3, 6000);
    const auto s = make_surface(spec_of(ScenarioKind::random, 2), city.geometry);
    std::vector<double> v(s.values().begin(), s.values().end());
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    CHECK(v[v.size() / 2] == doctest::Approx(0.03));
    CHECK(std::abs(correlogram(s, 1)) < 0.05);
}

TEST_CASE("spatial surface correlation decays with lag") {
    const auto city = make_grid_city(6, 6000);
    ScenarioSpec sp = spec_of(ScenarioKind::spatial, 6);
    sp.spatial_range = 2000;
    const auto s = make_surface(sp, city.geometry);
    const double near = correlogram(s, 5);   // 500 ft
    const double far = correlogram(s, 50);   // 5000 ft
    CHECK(near > far);
    CHECK(near > 0.8);
    CHECK(std::abs(far) < 0.3);
}

TEST_CASE("integration: area weighting and additivity") {
    const auto city = make_grid_city(2, 6000);
    ScenarioSpec c = spec_of(ScenarioKind::constant);
    c.base_intensity = 0.5;
    const auto s = make_surface(c, city.geometry);
    // 1000 x 1000 ft = 100 cells; a cell-unaligned square covers partial cells.
    CHECK(s.integrate(*square(1000, 1000, 2000, 2000)) == doctest::Approx(50.0));
    CHECK(s.integrate(*square(1050, 1030, 2050, 2030)) == doctest::Approx(50.0));

    const auto r = make_surface(spec_of(ScenarioKind::random, 9), city.geometry);
    const double whole = r.integrate(*square(1234, 987, 4321, 3210));
    const double left = r.integrate(*square(1234, 987, 2777, 3210));
    const double right = r.integrate(*square(2777, 987, 4321, 3210));
    CHECK(whole == doctest::Approx(left + right).epsilon(1e-9));

    const auto stencil = make_stencil(r.grid(), *square(1000, 1000, 2000, 2000));
    CHECK(integrate(r.values(), stencil) == doctest::Approx(r.integrate(*square(1000, 1000, 2000, 2000))));
}

TEST_CASE("sample_counts: Poisson moments, zero mean and independence") {
    const auto city = make_grid_city(2, 6000);
    ScenarioSpec c = spec_of(ScenarioKind::constant);
    c.base_intensity = 0.1;
    const auto s = make_surface(c, city.geometry);
    const auto region = square(1000, 1000, 2000, 2000);  // Lambda = 10
    const auto a = sample_counts(s, *region, 10000, 1);
    CHECK(std::abs(mean(a) - 10.0) < 3 * std::sqrt(10.0 / 10000));
    CHECK(std::abs(variance(a) / mean(a) - 1.0) < 0.1);
    const auto b = sample_counts(s, *square(7000, 7000, 8000, 8000), 10000, 2);
    CHECK(std::abs(correlation(a, b)) < 0.05);
    CHECK(sample_counts(s, *region, 50, 1) == sample_counts(s, *region, 50, 1));

    const IntensitySurface zero(s.grid(), std::vector<double>(s.grid().size(), 0.0));
    for (double v : sample_counts(zero, *region, 100, 3)) CHECK(v == 0.0);
}

TEST_CASE("site stencils are cumulative and agree with explicit side polygons") {
    const auto city = make_grid_city(2, 6000);
    const auto r = make_surface(spec_of(ScenarioKind::random, 10), city.geometry);
    const auto borders = pipeline::make_borders(city.geometry);
    const std::vector<double> deltas{300, 700, 1100};
    const SiteStencil st(r.grid(), borders[0].buffer, deltas);
    std::vector<double> lam(6), area(6);
    st.integrate(r.values(), 0, lam);
    st.areas(area);
    for (std::size_t d = 0; d < deltas.size(); ++d) {
        const auto bb = borders[0].buffer.with_delta(deltas[d]);
        const double s1 = r.integrate(geo::side_region(bb, geo::Side::side1));
        const double s0 = r.integrate(geo::side_region(bb, geo::Side::side0));
        CHECK(lam[2 * d] == doctest::Approx(s1).epsilon(0.01));
        CHECK(lam[2 * d + 1] == doctest::Approx(s0).epsilon(0.01));
        // A straight 6000 ft border: each side is delta x 6000 ft.
        CHECK(area[2 * d] == doctest::Approx(deltas[d] * 6000 / 1e4).epsilon(1e-3));
        if (d > 0) CHECK(lam[2 * d] > lam[2 * d - 2]);
    }
}

TEST_CASE("grid-city null streets have equal side areas wherever they are valid") {
    const auto city = make_grid_city(2, 6000);
    const auto grid = frame_for(city.geometry);
    const std::vector<double> deltas{300, 500, 700, 900, 1100, 1300};
    const auto cands = nullstreets::extract_candidates(city.streets, city.geometry, deltas.front());
    REQUIRE(cands.size() == city.streets.size());
    std::size_t checked = 0;
    for (std::size_t i = 0; i < cands.size(); i += 5) {
        const auto& c = cands[i];
        std::size_t nv = 0;
        while (nv < deltas.size() && c.valid_at(deltas[nv])) ++nv;
        REQUIRE(nv > 0);
        const SiteStencil st(grid, c.buffer(deltas[nv - 1]), std::span(deltas.data(), nv));
        std::vector<double> area(2 * nv);
        st.areas(area);
        for (std::size_t d = 0; d < nv; ++d) CHECK(area[2 * d] == doctest::Approx(area[2 * d + 1]).epsilon(1e-9));
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("grid city layout") {
    const auto city = make_grid_city(3, 6000);
    CHECK(city.geometry.regions.size() == 9);
    CHECK(city.geometry.adjacency.size() == 12);
    const auto nine = make_grid_city(9, 6000);
    CHECK(nine.geometry.adjacency.size() == 144);
    CHECK_THROWS_AS(make_grid_city(0, 6000), InvalidArgument);
}

TEST_CASE("run_scenario is reproducible and shaped like the rate table") {
    const auto city = make_grid_city(3, 6000);
    SimulationOptions opt;
    opt.datasets = 3;
    opt.deltas = {500, 900};
    opt.b = 40;
    opt.months = 36;
    opt.keep_pvalues = true;
    const ScenarioContext ctx(city.geometry, city.streets, opt);
    CHECK(ctx.borders() == 12);
    const auto a = run_scenario(spec_of(ScenarioKind::random, 3), ctx);
    const auto b = run_scenario(spec_of(ScenarioKind::random, 3), ctx);
    REQUIRE(a.rows.size() == 2);
    CHECK(a.rows[0].tests == 36);
    CHECK(a.pvalues.size() == 6);
    for (std::size_t i = 0; i < a.pvalues.size(); ++i) CHECK(a.pvalues[i].corrected == b.pvalues[i].corrected);
    CHECK(a.rows[1].individual_corrected == b.rows[1].individual_corrected);
    for (const auto& p : a.pvalues) {
        for (double v : p.corrected) {
            CHECK(v >= 1.0 / 41.0);
            CHECK(v <= 1.0);
        }
    }
    const auto c = run_scenario(spec_of(ScenarioKind::random, 4), ctx);
    CHECK(c.pvalues[0].corrected != a.pvalues[0].corrected);

    const ScenarioResult both[] = {a, c};
    const auto csv = rates_csv(both, "abc");
    CHECK(csv.rfind("config_hash,test,procedure,delta,random,random", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 6);
}

TEST_CASE("synthetic events follow the surface") {
    const auto city = make_grid_city(2, 6000);
    ScenarioSpec c = spec_of(ScenarioKind::constant);
    c.base_intensity = 0.02;
    const auto ev = synthetic_events(c, city.geometry, 12, 2.0, 0.01, 5);
    const double cells = 120.0 * 120.0;
    const auto count = [&](ingest::EventKind k) { return ev.filtered(k).total(); };
    const double arrests = 0.02 * cells * 12;
    CHECK(std::abs(double(count(ingest::EventKind::arrest)) - arrests) < 4 * std::sqrt(arrests));
    CHECK(std::abs(double(count(ingest::EventKind::crime)) - 2 * arrests) < 4 * std::sqrt(2 * arrests));
    // Tree intensity is per cell over the whole window.
    CHECK(std::abs(double(count(ingest::EventKind::tree)) - 0.01 * cells) < 4 * std::sqrt(0.01 * cells));
    const auto again = synthetic_events(c, city.geometry, 12, 2.0, 0.01, 5);
    CHECK(again.total() == ev.total());
    // Arrests carry the precinct they happened in.
    for (int t = 1; t <= 12; ++t) {
        const auto p = ev.positions(t);
        const auto k = ev.kinds(t);
        const auto src = ev.sources(t);
        for (std::size_t i = 0; i < p.size(); i += 97) {
            if (k[i] == ingest::EventKind::arrest) CHECK(city.geometry.region_of(p[i]) == src[i]);
        }
    }
}
