#include "geordd/calibration.hpp"
#include "geordd/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace geordd::inference;

namespace {

double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi); }

CalibrationReport small_report() {
    CalibrationSpec s;
    s.offsets = {0.0, 0.05};
    s.b_grid = {40, 80};
    s.replicates = 6000;
    s.seed = 99;
    return calibrate_empirical_null(s);
}

} // namespace

TEST_CASE("calibration cells are laid out offsets outer, B inner") {
    const auto r = small_report();
    REQUIRE(r.cells.size() == 4);
    CHECK(r.cells[1].offset == 0.0);
    CHECK(r.cells[1].b == 80);
    CHECK(r.at(0.05, 40).b == 40);
    CHECK_THROWS_AS((void)r.at(0.3, 40), geordd::InvalidArgument);
    for (const auto& c : r.cells) CHECK(c.true_f == doctest::Approx(0.95).epsilon(1e-6));
}

TEST_CASE("zero offset is unbiased, a small offset follows the first-order term") {
    const auto r = small_report();
    for (std::size_t b : {40, 80}) {
        const auto& z = r.at(0.0, b);
        CHECK(std::abs(z.bias) <= 3 * z.se_mean);
        CHECK(z.exact_bias == 0.0);
        const auto& m = r.at(0.05, b);
        // F(x, t) = Phi(t - x), so dF/dx = -phi(q - x).
        CHECK(m.first_order_bias == doctest::Approx(-phi(r.spec.q - r.spec.x) * 0.05));
        CHECK(m.exact_bias == doctest::Approx(std::erfc(-(r.spec.q - 0.05) / std::numbers::sqrt2) / 2 - 0.95));
        CHECK(std::abs(m.bias - m.first_order_bias) <= 3 * m.se_mean);
        CHECK(std::abs(m.bias - m.exact_bias) <= 3 * m.se_mean);
    }
}

TEST_CASE("variance of the CDF estimate halves when B doubles") {
    const auto r = small_report();
    for (double off : {0.0, 0.05}) {
        const double ratio = r.at(off, 40).var_fhat / r.at(off, 80).var_fhat;
        CHECK(ratio == doctest::Approx(2.0).epsilon(0.15));
    }
}

TEST_CASE("realized type I error tracks its conditional prediction") {
    const auto r = small_report();
    for (const auto& c : r.cells) CHECK(std::abs(c.type1_realized - c.type1_predicted) <= 3 * c.type1_se);
}

TEST_CASE("calibration is deterministic in its seed") {
    CalibrationSpec s;
    s.b_grid = {20};
    s.replicates = 500;
    const auto a = calibrate_empirical_null(s);
    const auto b = calibrate_empirical_null(s);
    CHECK(a.cells[0].mean_fhat == b.cells[0].mean_fhat);
    s.seed = 2;
    CHECK(calibrate_empirical_null(s).cells[0].mean_fhat != a.cells[0].mean_fhat);
}

TEST_CASE("B-sweep with drifting matches is U-shaped") {
    BSweepSpec s;
    s.replicates = 4000;
    const auto pts = b_sweep(s);
    REQUIRE(pts.size() == s.b_grid.size());
    const auto low = std::min_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.type1 < b.type1; });
    CHECK(low != pts.begin());
    CHECK(low != pts.end() - 1);
    CHECK(pts.front().type1 - low->type1 > 3 * (pts.front().se + low->se));
    CHECK(pts.back().type1 - low->type1 > 3 * (pts.back().se + low->se));
}
