#include "geordd/error.hpp"
#include "geordd/nullstreets.hpp"
#include "geordd/simulate.hpp"
#include "geordd/stats.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

using namespace geordd;
using namespace geordd::nullstreets;
using geo::PlanarPoint;

namespace {

std::shared_ptr<const geo::PolygonSet> square(double x0, double y0, double x1, double y1) {
    return std::make_shared<const geo::PolygonSet>(
        geo::PolygonSet{geo::Polygon(geo::Ring{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}})});
}

ingest::RegionGeometry two_precincts() {
    ingest::RegionGeometry g;
    g.regions[1] = square(0, 0, 2000, 2000);
    g.regions[2] = square(2000, 0, 4000, 2000);
    ingest::derive_adjacency(g);
    return g;
}

Candidate cand(int id, double log_total, double log_ratio) {
    return {id, {std::exp(log_total), std::exp(log_ratio)}, nullptr};
}

// Brute-force matcher: full covariance of the finite-ratio pool, explicit
// inverse, every distance computed, then a sort by (distance, id). Candidates
// at infinite distance order by their log-total gap first.
std::vector<int> exhaustive_match(const MatchCovariates& target, const std::vector<Candidate>& pool, std::size_t b) {
    std::vector<Eigen::Vector2d> xs;
    for (const auto& c : pool) {
        if (c.covariates.total > 0 && std::isfinite(c.covariates.ratio)) {
            xs.emplace_back(std::log(c.covariates.total), std::log(c.covariates.ratio));
        }
    }
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& x : xs) cov += (x - mean) * (x - mean).transpose();
    cov /= static_cast<double>(xs.size() - 1);
    const Eigen::Matrix2d inv = cov.inverse();
    const Eigen::Vector2d t(std::log(target.total), std::log(target.ratio));

    std::vector<std::tuple<double, double, int>> d;
    for (const auto& c : pool) {
        if (!(c.covariates.total > 0)) {
            d.emplace_back(INFINITY, INFINITY, c.id);
        } else if (!std::isfinite(c.covariates.ratio)) {
            d.emplace_back(INFINITY, std::abs(std::log(c.covariates.total) - t(0)), c.id);
        } else {
            const Eigen::Vector2d x(std::log(c.covariates.total), std::log(c.covariates.ratio));
            d.emplace_back((x - t).dot(inv * (x - t)), 0.0, c.id);
        }
    }
    std::sort(d.begin(), d.end());
    std::vector<int> ids;
    for (std::size_t i = 0; i < b; ++i) ids.push_back(std::get<2>(d[i]));
    return ids;
}

// Segment-to-segment distance for segments that do not cross.
double segment_gap(PlanarPoint a, PlanarPoint b, PlanarPoint c, PlanarPoint d) {
    return std::min({geo::segment_distance(a, c, d), geo::segment_distance(b, c, d), geo::segment_distance(c, a, b),
                     geo::segment_distance(d, a, b)});
}

} // namespace

TEST_CASE("make_covariates examples") {
    const auto even = make_covariates(50, 50);
    CHECK(even.total == 100);
    CHECK(even.ratio == 1.0);
    const auto skew = make_covariates(80, 20);
    CHECK(skew.total == 100);
    CHECK(skew.ratio == 4.0);
    CHECK(make_covariates(20, 80).ratio == 4.0);
    CHECK_FALSE(make_covariates(7, 0).finite_ratio());
    CHECK_FALSE(make_covariates(0, 0).finite_ratio());
    CHECK_THROWS_AS(make_covariates(-1, 3), InvalidArgument);
}

TEST_CASE("covariates count crime by side over every month") {
    const auto bb = geo::BorderBuffer::left_right(geo::Polyline({{0, 0}, {1000, 0}}), 200);
    ingest::EventSet crimes(3);
    // Left of the eastward line is side1: 3 events. Right: 1. Outside: 2.
    crimes.add(1, {100, 50}, ingest::EventKind::crime, std::nullopt);
    crimes.add(2, {500, 150}, ingest::EventKind::crime, std::nullopt);
    crimes.add(3, {900, 10}, ingest::EventKind::crime, std::nullopt);
    crimes.add(3, {400, -120}, ingest::EventKind::crime, std::nullopt);
    crimes.add(1, {400, 260}, ingest::EventKind::crime, std::nullopt);
    crimes.add(2, {1100, 0}, ingest::EventKind::crime, std::nullopt);
    const auto c = covariates(bb, crimes);
    CHECK(c.total == 4);
    CHECK(c.ratio == 3.0);
}

TEST_CASE("extract_candidates: centred street kept, border crossing dropped") {
    const auto g = two_precincts();
    const std::vector<ingest::Street> streets{
        {1, geo::Polyline({{700, 1000}, {1300, 1000}})},   // centre of precinct 1
        {2, geo::Polyline({{1500, 1000}, {2500, 1000}})},  // crosses x = 2000
        {3, geo::Polyline({{2900, 1000}, {3100, 1000}})},  // too short
        {4, geo::Polyline({{2600, 300}, {3400, 300}})},    // 300 ft from the edge
    };
    const auto c = extract_candidates(streets, g, 500);
    REQUIRE(c.size() == 1);
    CHECK(c[0].id == 1);
    CHECK(c[0].host_region == 1);
    CHECK(c[0].max_valid_delta == doctest::Approx(600.0));  // 700 ft clearance less the 100 ft margin
    const auto wide = extract_candidates(streets, g, 150);
    REQUIRE(wide.size() == 2);
    CHECK(wide[1].id == 4);
    CHECK(wide[1].max_valid_delta == doctest::Approx(200.0));
    CHECK_THROWS_AS(extract_candidates(streets, g, 0), InvalidArgument);
}

TEST_CASE("extract_candidates on the grid city equals a brute-force containment check") {
    const auto city = simulate::make_grid_city(3, 6000);
    // Add a few streets that straddle borders or hug them.
    auto streets = city.streets;
    streets.push_back({90001, geo::Polyline({{5000, 3000}, {7000, 3000}})});
    streets.push_back({90002, geo::Polyline({{5850, 1000}, {5850, 4000}})});
    streets.push_back({90003, geo::Polyline({{3000, 6050}, {3000, 6100}, {4000, 6100}})});

    // Region edges as explicit segments.
    std::vector<std::pair<PlanarPoint, PlanarPoint>> edges;
    for (const auto& [id, set] : city.geometry.regions) {
        const auto& ring = set->front().outer();
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) edges.emplace_back(ring[i], ring[i + 1]);
    }
    const CandidateOptions opt;
    for (double delta : {300.0, 700.0, 1100.0}) {
        std::set<int> expected;
        for (const auto& s : streets) {
            const auto& v = s.centerline.vertices();
            if (s.centerline.length() < opt.min_length) continue;
            std::set<int> hosts;
            for (const auto& p : v) {
                for (const auto& [id, set] : city.geometry.regions) {
                    const auto& r = set->front().outer();
                    if (p.x > r[0].x && p.x < r[2].x && p.y > r[0].y && p.y < r[2].y) hosts.insert(id);
                }
            }
            if (hosts.size() != 1) continue;
            double clearance = INFINITY;
            for (std::size_t i = 0; i + 1 < v.size(); ++i) {
                for (const auto& [a, b] : edges) clearance = std::min(clearance, segment_gap(v[i], v[i + 1], a, b));
            }
            if (clearance >= delta + opt.margin) expected.insert(s.id);
        }
        std::set<int> got;
        for (const auto& c : extract_candidates(streets, city.geometry, delta, opt)) got.insert(c.id);
        CHECK(got == expected);
        CHECK_FALSE(got.count(90001));
        CHECK_FALSE(got.count(90002));
    }
}

TEST_CASE("every candidate buffer lies inside its host precinct") {
    const auto city = simulate::make_grid_city(3, 6000);
    const auto cands = extract_candidates(city.streets, city.geometry, 300);
    REQUIRE(cands.size() > 100);
    for (std::size_t i = 0; i < cands.size(); i += 7) {
        const auto& c = cands[i];
        const auto& host = *city.geometry.regions.at(c.host_region);
        for (double delta : {300.0, c.max_valid_delta}) {
            const auto buf = geo::buffer_polyline(c.centerline, delta);
            for (const auto& poly : buf) {
                for (const auto& p : poly.outer()) CHECK(geo::contains(host, p));
            }
        }
    }
}

TEST_CASE("Mahalanobis with a diag(4, 1) pool covariance matches hand values") {
    // Log coordinates chosen so that the sample covariance is exactly diag(4, 1).
    const double h = std::sqrt(5.0) / 2.0;
    const double r = std::sqrt(2.0);
    const std::vector<Candidate> pool{cand(1, 7, 2 + h),  cand(2, 3, 2 + h), cand(3, 7, 2 - h),
                                      cand(4, 3, 2 - h),  cand(5, 5 + r, 2), cand(6, 5 - r, 2)};
    const MatchCovariates target{std::exp(5.5), std::exp(2.3)};
    const auto d = mahalanobis_distances(target, pool);
    CHECK_FALSE(d.diagonal_fallback);
    // (du^2 / 4 + dv^2) worked by hand.
    const std::vector<double> hand{1.2316, 2.2316, 2.5732, 3.5732, 0.2989, 1.0060};
    for (std::size_t i = 0; i < pool.size(); ++i) CHECK(d.d2[i] == doctest::Approx(hand[i]).epsilon(1e-3));
    const auto m = match(target, pool, 6);
    CHECK(m.street_ids == std::vector<int>{5, 6, 1, 2, 3, 4});
    CHECK(m.distances.front() == doctest::Approx(std::sqrt(0.2989)).epsilon(1e-3));
}

TEST_CASE("identity covariance reduces to Euclidean nearest neighbours") {
    // (+-1, +-1) corners: sample covariance 4/3 I, proportional to the identity.
    const std::vector<Candidate> pool{cand(1, 6, 2), cand(2, 4, 2), cand(3, 6, 4), cand(4, 4, 4)};
    const MatchCovariates target{std::exp(5.8), std::exp(3.3)};
    const auto m = match(target, pool, 4);
    CHECK(m.street_ids == std::vector<int>{3, 1, 4, 2});
}

TEST_CASE("match equals an exhaustive Mahalanobis sort") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<Candidate> pool;
        const int size = 40 + rep * 9;
        for (int i = 0; i < size; ++i) {
            const double lt = 6 + n01(rng);
            const double lr = std::abs(0.3 * n01(rng) + 0.2 * (lt - 6));
            Candidate c = cand(1000 - 3 * i, lt, lr);
            if (i % 13 == 5) c.covariates.ratio = INFINITY;
            pool.push_back(c);
        }
        const MatchCovariates target{std::exp(6 + n01(rng)), std::exp(std::abs(0.4 * n01(rng)))};
        for (std::size_t b : {std::size_t{1}, std::size_t{10}, pool.size() / 2, pool.size()}) {
            const auto m = match(target, pool, b);
            CHECK(m.street_ids == exhaustive_match(target, pool, b));
            CHECK(std::is_sorted(m.distances.begin(), m.distances.end()));
            CHECK(std::set<int>(m.street_ids.begin(), m.street_ids.end()).size() == b);
        }
    }
}

TEST_CASE("nested match sets and the B-th distance grow with B") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    std::vector<Candidate> pool;
    for (int i = 0; i < 200; ++i) pool.push_back(cand(i, 5 + n01(rng), std::abs(n01(rng))));
    const MatchCovariates target{std::exp(5.2), std::exp(0.4)};
    const MatchPool mp(pool);
    double last = 0.0;
    std::vector<int> prev;
    for (std::size_t b = 1; b <= 200; b += 11) {
        const auto m = mp.match(target, b);
        CHECK(m.distances.back() >= last);
        last = m.distances.back();
        CHECK(std::equal(prev.begin(), prev.end(), m.street_ids.begin()));
        prev = m.street_ids;
    }
}

TEST_CASE("rescaling a covariate leaves the selection unchanged") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n01;
    std::vector<Candidate> pool, scaled_total, squared_ratio;
    for (int i = 0; i < 120; ++i) {
        const double lt = 5 + n01(rng), lr = std::abs(0.5 * n01(rng) + 0.1 * lt);
        pool.push_back(cand(i, lt, lr));
        scaled_total.push_back(cand(i, lt + std::log(37.0), lr));
        squared_ratio.push_back(cand(i, lt, 2 * lr));
    }
    const MatchCovariates t{std::exp(5.5), std::exp(0.9)};
    const auto base = match(t, pool, 30).street_ids;
    CHECK(match({t.total * 37.0, t.ratio}, scaled_total, 30).street_ids == base);
    CHECK(match({t.total, t.ratio * t.ratio}, squared_ratio, 30).street_ids == base);
}

TEST_CASE("ties are broken by street id") {
    const std::vector<Candidate> pool{cand(9, 5, 1), cand(3, 5, 1), cand(7, 6, 2), cand(1, 4, 0.5), cand(5, 5, 1)};
    const auto m = match({std::exp(5), std::exp(1)}, pool, 3);
    CHECK(m.street_ids == std::vector<int>{3, 5, 9});
}

TEST_CASE("pool smaller than B is an explicit error") {
    const std::vector<Candidate> pool{cand(1, 5, 1), cand(2, 6, 2), cand(3, 4, 0.5)};
    try {
        (void)match({std::exp(5), std::exp(1)}, pool, 4);
        FAIL("expected PoolTooSmallError");
    } catch (const PoolTooSmallError& e) {
        CHECK(e.available() == 3);
    }
}

TEST_CASE("infinite ratios: candidates go last, targets match on total alone") {
    std::vector<Candidate> pool{cand(1, 5, 1), cand(2, 6, 2), cand(3, 4, 0.5), cand(4, 5.1, 0.7)};
    pool.push_back({5, {std::exp(5.0), INFINITY}, nullptr});
    pool.push_back({6, {0.0, INFINITY}, nullptr});
    const auto m = match({std::exp(5), std::exp(1)}, pool, 6);
    CHECK(m.street_ids[4] == 5);
    CHECK(m.street_ids[5] == 6);
    CHECK(std::isinf(m.distances[4]));

    const auto inf_target = match({std::exp(5.0), INFINITY}, pool, 3);
    CHECK(inf_target.street_ids == std::vector<int>{1, 5, 4});
}

TEST_CASE("singular covariance falls back to diagonal scaling with a warning") {
    const std::vector<Candidate> pool{cand(1, 5, 1), cand(2, 6, 1), cand(3, 4, 1), cand(4, 7, 1)};
    const auto m = match({std::exp(5.4), std::exp(1)}, pool, 2);
    CHECK(m.diagonal_fallback);
    CHECK_FALSE(m.warning.empty());
    CHECK(m.street_ids == std::vector<int>{1, 2});
}

TEST_CASE("non-overlap filter skips streets whose buffers would touch a selected one") {
    // Streets 1 and 2 run 100 ft apart; the rest are far from everything.
    const geo::Polyline a({{0, 0}, {1000, 0}}), b({{0, 100}, {1000, 100}});
    const geo::Polyline c({{0, 5000}, {1000, 5000}}), d({{0, 9000}, {1000, 9000}}), e({{5000, 0}, {5000, 1000}});
    const std::vector<Candidate> pool{{1, {100, 1.0}, &a}, {2, {100, 1.0}, &b}, {3, {140, 1.5}, &c},
                                      {4, {60, 2.0}, &d}, {5, {30, 1.2}, &e}};
    const MatchCovariates target{100, 1.0};
    const auto plain = match(target, pool, 5);
    REQUIRE(plain.street_ids[0] == 1);
    REQUIRE(plain.street_ids[1] == 2);

    MatchOptions opt;
    opt.non_overlapping = true;
    opt.delta = 300;
    const auto m = match(target, pool, 2, opt);
    CHECK(m.street_ids == std::vector<int>{1, plain.street_ids[2]});
    CHECK(match(target, pool, 4, opt).size() == 4);
    CHECK_THROWS_AS(match(target, pool, 5, opt), PoolTooSmallError);
    opt.delta = 40;  // 2 * 40 < 100, so the buffers no longer meet
    CHECK(match(target, pool, 5, opt).street_ids == plain.street_ids);
}

TEST_CASE("association diagnostic") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;

    SUBCASE("strong association") {
        std::vector<double> x, y;
        for (int i = 0; i < 100; ++i) {
            x.push_back(n01(rng));
            y.push_back(x.back() + 0.01 * n01(rng));
        }
        CHECK(association_diagnostic(y, x).p_value < 1e-6);
    }
    SUBCASE("cubic truth: the spline beats the intercept") {
        std::vector<double> x, y;
        for (int i = 0; i < 60; ++i) {
            x.push_back(-2 + 4.0 * i / 59);
            y.push_back(x.back() * x.back() * x.back() - x.back() + 0.1 * n01(rng));
        }
        const auto r = association_diagnostic(y, x);
        CHECK(r.rss_full < r.rss_null);
        CHECK(r.coefficients.size() == 5);
        CHECK(r.df2 == 55);
    }
    SUBCASE("independence gives uniform p-values") {
        std::vector<double> ps;
        for (int rep = 0; rep < 400; ++rep) {
            std::vector<double> x, y;
            for (int i = 0; i < 60; ++i) {
                x.push_back(n01(rng));
                y.push_back(n01(rng));
            }
            ps.push_back(association_diagnostic(y, x).p_value);
        }
        const double d = stats::ks_uniform_distance(ps);
        CHECK(stats::ks_uniform_pvalue(d, ps.size()) > 0.001);
    }
    SUBCASE("errors") {
        std::vector<double> x(40, 1.0), y(40, 0.0);
        CHECK_THROWS_AS(association_diagnostic(y, x), UndefinedTestError);
        std::vector<double> small(10, 0.0);
        CHECK_THROWS_AS(association_diagnostic(small, small), InvalidArgument);
    }
}
