#pragma once

// Monte Carlo checks of the empirical-null estimator on a synthetic family
// with a known CDF: statistics are Normal(X, 1) given the covariate X, so
// F(x, t) = Phi(t - x).

#include <cstddef>
#include <cstdint>
#include <vector>

namespace geordd::inference {

struct CalibrationSpec {
    double x = 0.0;                      // covariate at the border
    double q = 1.6448536269514722;       // evaluation point of F-hat(x, q)
    std::vector<double> offsets{0.0, 0.1};  // mean of X^(b) - x
    double offset_spread = 0.0;          // sd of X^(b) around x + offset
    std::vector<std::size_t> b_grid{50, 100, 200};
    std::size_t replicates = 20000;
    double alpha = 0.05;
    std::uint64_t seed = 1;
};

struct CalibrationCell {
    double offset = 0.0;
    std::size_t b = 0;
    double true_f = 0.0;              // F(x, q)
    double mean_fhat = 0.0;           // Monte Carlo E[F-hat(x, q)]
    double se_mean = 0.0;
    double var_fhat = 0.0;            // Monte Carlo Var[F-hat(x, q)]
    double se_var = 0.0;
    double bias = 0.0;                // mean_fhat - true_f
    double first_order_bias = 0.0;    // dF/dx * offset
    double exact_bias = 0.0;          // closed form under the Normal family
    double type1_realized = 0.0;      // P(theta > Q-hat(1 - alpha))
    double type1_predicted = 0.0;     // 1 - E[F(x, Q-hat(1 - alpha))]
    double type1_se = 0.0;
};

struct CalibrationReport {
    CalibrationSpec spec;
    std::vector<CalibrationCell> cells;  // offsets outer, B inner

    [[nodiscard]] const CalibrationCell& at(double offset, std::size_t b) const;
};

CalibrationReport calibrate_empirical_null(const CalibrationSpec& spec);

/// Type I error of the quantile-threshold rule when the b-th ranked null
/// street's covariate drifts away from the border's as x - drift * b.
struct BSweepSpec {
    double x = 0.0;
    double drift = 0.001;
    std::vector<std::size_t> b_grid{20, 40, 60, 100, 200, 400, 800};
    std::size_t replicates = 20000;
    double alpha = 0.05;
    std::uint64_t seed = 2;
};

struct BSweepPoint {
    std::size_t b = 0;
    double type1 = 0.0;  // Monte Carlo mean of 1 - F(x, Q-hat)
    double se = 0.0;
};

std::vector<BSweepPoint> b_sweep(const BSweepSpec& spec);

} // namespace geordd::inference
