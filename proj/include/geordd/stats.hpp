#pragma once

// Border-level statistics: monthly difference series, the AR(Q) intercept
// fit, the naive normal-theory p-value and the exact binomial test.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace geordd::stats {

enum class DiffMode { count_difference, rate_difference };

enum class MaskReason : std::uint8_t { none, zero_denominator };

struct DiffSeries {
    std::vector<double> z;
    DiffMode mode = DiffMode::count_difference;
    std::vector<MaskReason> mask;  // same length as z

    [[nodiscard]] std::size_t size() const { return z.size(); }
    [[nodiscard]] bool valid(std::size_t t) const { return mask[t] == MaskReason::none; }
    [[nodiscard]] std::size_t valid_count() const;
    [[nodiscard]] std::size_t masked_count() const { return size() - valid_count(); }
};

/// Monthly outcome counts on the two sides of one buffer.
struct SideSeries {
    std::vector<double> side1;
    std::vector<double> side0;
    std::size_t on_boundary = 0;  // events resolved to side1 by the boundary tie-break

    [[nodiscard]] double total1() const;
    [[nodiscard]] double total0() const;
};

DiffSeries diff_series(std::span<const double> side1, std::span<const double> side0);
inline DiffSeries diff_series(const SideSeries& s) { return diff_series(s.side1, s.side0); }

/// Difference of arrest rates (arrests / crimes); months with zero crimes on
/// either side are masked.
DiffSeries rate_diff_series(std::span<const double> arrests1, std::span<const double> crimes1,
                            std::span<const double> arrests0, std::span<const double> crimes0);

struct ArFit {
    double c_hat = 0.0;
    std::vector<double> rho;
    double se_c = 0.0;
    int order = 0;
    std::size_t n_eff = 0;
    double sigma2 = 0.0;  // residual variance estimate
};

/// Conditional least squares for z_t = c + sum_q rho_q z_{t-q} + e_t.
/// Only months whose Q predecessors are all valid contribute rows.
/// Throws InsufficientDataError when fewer than Q + 2 rows remain, and
/// DegenerateFitError (naming the collinear columns) for a rank-deficient design
/// or a zero residual variance.
ArFit fit_ar(const DiffSeries& z, int order);

double normal_cdf(double x);

/// Two-sided 2 * (1 - Phi(|c_hat| / se_c)).
double naive_p(const ArFit& fit);

/// Exact two-sided test of y1 ~ Binomial(y1 + y0, 1/2). Throws UndefinedTestError if y1 + y0 = 0.
double binom_test(std::uint64_t y1, std::uint64_t y0);

/// One-sample Kolmogorov-Smirnov distance of `sample` from Uniform(0, 1).
double ks_uniform_distance(std::span<const double> sample);
/// Asymptotic p-value of the KS statistic for sample size n (Stephens' correction).
double ks_uniform_pvalue(double distance, std::size_t n);

} // namespace geordd::stats
