#include "geordd/stats.hpp"

#include "geordd/error.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace geordd::stats {

std::size_t DiffSeries::valid_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), MaskReason::none));
}

double SideSeries::total1() const { return std::accumulate(side1.begin(), side1.end(), 0.0); }
double SideSeries::total0() const { return std::accumulate(side0.begin(), side0.end(), 0.0); }

DiffSeries diff_series(std::span<const double> side1, std::span<const double> side0) {
    if (side1.size() != side0.size()) throw InvalidArgument("diff_series: side series differ in length");
    DiffSeries out;
    out.mode = DiffMode::count_difference;
    out.z.resize(side1.size());
    out.mask.assign(side1.size(), MaskReason::none);
    for (std::size_t t = 0; t < side1.size(); ++t) out.z[t] = side1[t] - side0[t];
    return out;
}

DiffSeries rate_diff_series(std::span<const double> arrests1, std::span<const double> crimes1,
                            std::span<const double> arrests0, std::span<const double> crimes0) {
    const std::size_t n = arrests1.size();
    if (crimes1.size() != n || arrests0.size() != n || crimes0.size() != n) {
        throw InvalidArgument("rate_diff_series: series differ in length");
    }
    DiffSeries out;
    out.mode = DiffMode::rate_difference;
    out.z.assign(n, 0.0);
    out.mask.assign(n, MaskReason::none);
    for (std::size_t t = 0; t < n; ++t) {
        if (arrests1[t] < 0 || crimes1[t] < 0 || arrests0[t] < 0 || crimes0[t] < 0) {
            throw InvalidArgument("rate_diff_series: negative count");
        }
        if (crimes1[t] == 0.0 || crimes0[t] == 0.0) {
            out.mask[t] = MaskReason::zero_denominator;
            continue;
        }
        out.z[t] = arrests1[t] / crimes1[t] - arrests0[t] / crimes0[t];
    }
    return out;
}

ArFit fit_ar(const DiffSeries& series, int order) {
    if (order < 0) throw InvalidArgument("fit_ar: negative order");
    const auto q = static_cast<std::size_t>(order);
    const std::size_t p = q + 1;
    const std::size_t n = series.size();

    std::vector<std::size_t> rows;
    for (std::size_t t = q; t < n; ++t) {
        bool ok = series.valid(t);
        for (std::size_t l = 1; ok && l <= q; ++l) ok = series.valid(t - l);
        if (ok) rows.push_back(t);
    }
    if (rows.size() < q + 2) {
        throw InsufficientDataError("fit_ar: " + std::to_string(rows.size()) + " usable rows for order " +
                                    std::to_string(order) + " (need " + std::to_string(q + 2) + ")");
    }

    Eigen::MatrixXd x(rows.size(), p);
    Eigen::VectorXd y(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t t = rows[r];
        x(r, 0) = 1.0;
        for (std::size_t l = 1; l <= q; ++l) x(r, l) = series.z[t - l];
        y(r) = series.z[t];
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (static_cast<std::size_t>(qr.rank()) < p) {
        std::string names;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < static_cast<Eigen::Index>(p); ++k) {
            const int col = perm(k);
            if (!names.empty()) names += ", ";
            names += col == 0 ? std::string("intercept") : "lag" + std::to_string(col);
        }
        throw DegenerateFitError("fit_ar: rank-deficient design; collinear column(s): " + names);
    }

    const Eigen::VectorXd beta = qr.solve(y);
    const Eigen::VectorXd resid = y - x * beta;
    const double dof = static_cast<double>(rows.size() - p);

    ArFit fit;
    fit.order = order;
    fit.n_eff = rows.size();
    fit.c_hat = beta(0);
    fit.rho.assign(beta.data() + 1, beta.data() + p);
    fit.sigma2 = resid.squaredNorm() / dof;

    const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
    const double var_c = fit.sigma2 * xtx_inv(0, 0);
    fit.se_c = var_c > 0.0 ? std::sqrt(var_c) : 0.0;
    if (!(fit.se_c > 0.0) || !std::isfinite(fit.se_c)) {
        throw DegenerateFitError("fit_ar: zero residual variance; intercept standard error undefined");
    }
    return fit;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double naive_p(const ArFit& fit) {
    if (!(fit.se_c > 0.0)) throw DegenerateFitError("naive_p: standard error is zero");
    const double z = std::abs(fit.c_hat) / fit.se_c;
    return std::erfc(z / std::numbers::sqrt2);
}

double binom_test(std::uint64_t y1, std::uint64_t y0) {
    const std::uint64_t n = y1 + y0;
    if (n == 0) throw UndefinedTestError("binom_test: no events on either side");
    if (y1 == y0) return 1.0;
    // Outcomes no more likely than the observed one form the two tails k <= m
    // and k >= n - m of the symmetric Binomial(n, 1/2).
    const std::uint64_t m = std::min(y1, y0);
    const boost::math::binomial_distribution<double> dist(static_cast<double>(n), 0.5);
    return std::min(1.0, 2.0 * boost::math::cdf(dist, static_cast<double>(m)));
}

double ks_uniform_distance(std::span<const double> sample) {
    if (sample.empty()) throw InvalidArgument("ks_uniform_distance: empty sample");
    std::vector<double> s(sample.begin(), sample.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double u = std::clamp(s[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - u, u - static_cast<double>(i) / n});
    }
    return d;
}

double ks_uniform_pvalue(double distance, std::size_t n) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * distance;
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-12) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

} // namespace geordd::stats
