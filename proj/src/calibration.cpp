#include "geordd/calibration.hpp"

#include "geordd/error.hpp"
#include "geordd/inference.hpp"
#include "geordd/random.hpp"
#include "geordd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace geordd::inference {

namespace {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

struct Moments {
    double n = 0, sum = 0, sum2 = 0;
    void add(double v) {
        n += 1;
        sum += v;
        sum2 += v * v;
    }
    [[nodiscard]] double mean() const { return sum / n; }
    [[nodiscard]] double var() const { return (sum2 - sum * sum / n) / (n - 1); }
    [[nodiscard]] double se() const { return std::sqrt(var() / n); }
};

} // namespace

const CalibrationCell& CalibrationReport::at(double offset, std::size_t b) const {
    for (const auto& c : cells) {
        if (c.offset == offset && c.b == b) return c;
    }
    throw InvalidArgument("calibration report has no such cell");
}

CalibrationReport calibrate_empirical_null(const CalibrationSpec& spec) {
    if (spec.replicates < 2) throw InvalidArgument("calibration needs at least two replicates");
    if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) throw InvalidArgument("alpha must be in (0, 1)");
    if (spec.offset_spread < 0.0) throw InvalidArgument("offset spread must be non-negative");
    CalibrationReport report;
    report.spec = spec;
    const double f_true = stats::normal_cdf(spec.q - spec.x);

    for (std::size_t oi = 0; oi < spec.offsets.size(); ++oi) {
        const double m = spec.offsets[oi];
        for (std::size_t bi = 0; bi < spec.b_grid.size(); ++bi) {
            const std::size_t b = spec.b_grid[bi];
            if (b == 0) throw InvalidArgument("calibration B must be positive");
            std::mt19937_64 rng(derive_seed(spec.seed, {oi, bi}));
            std::normal_distribution<double> n01(0.0, 1.0);

            Moments fhat, realized, predicted;
            std::vector<double> fs;
            fs.reserve(spec.replicates);
            std::vector<double> null(b);
            for (std::size_t r = 0; r < spec.replicates; ++r) {
                std::size_t below = 0;
                for (std::size_t k = 0; k < b; ++k) {
                    const double xb = spec.x + m + spec.offset_spread * n01(rng);
                    null[k] = xb + n01(rng);
                    below += null[k] < spec.q;
                }
                const double f = static_cast<double>(below) / static_cast<double>(b);
                fhat.add(f);
                fs.push_back(f);

                const double qhat = null_quantile(EmpiricalNull(null), 1.0 - spec.alpha);
                const double theta = spec.x + n01(rng);
                realized.add(theta > qhat ? 1.0 : 0.0);
                predicted.add(1.0 - stats::normal_cdf(qhat - spec.x));
            }

            CalibrationCell c;
            c.offset = m;
            c.b = b;
            c.true_f = f_true;
            c.mean_fhat = fhat.mean();
            c.se_mean = fhat.se();
            c.var_fhat = fhat.var();
            // Standard error of the sample variance from the fourth central moment.
            const double n = fhat.n;
            double central4 = 0.0;
            for (double f : fs) central4 += std::pow(f - c.mean_fhat, 4);
            central4 /= n;
            c.se_var = std::sqrt(std::max(0.0, central4 - c.var_fhat * c.var_fhat) / n);
            c.bias = c.mean_fhat - f_true;
            c.first_order_bias = -normal_pdf(spec.q - spec.x) * m;
            c.exact_bias = stats::normal_cdf((spec.q - spec.x - m) / std::sqrt(1.0 + spec.offset_spread * spec.offset_spread)) - f_true;
            c.type1_realized = realized.mean();
            c.type1_predicted = predicted.mean();
            c.type1_se = std::sqrt(c.type1_realized * (1.0 - c.type1_realized) / n);
            report.cells.push_back(c);
        }
    }
    return report;
}

std::vector<BSweepPoint> b_sweep(const BSweepSpec& spec) {
    if (spec.replicates < 2) throw InvalidArgument("b_sweep needs at least two replicates");
    std::vector<BSweepPoint> out;
    for (std::size_t bi = 0; bi < spec.b_grid.size(); ++bi) {
        const std::size_t b = spec.b_grid[bi];
        if (b == 0) throw InvalidArgument("b_sweep B must be positive");
        std::mt19937_64 rng(derive_seed(spec.seed, {bi}));
        std::normal_distribution<double> n01(0.0, 1.0);
        Moments err;
        std::vector<double> null(b);
        for (std::size_t r = 0; r < spec.replicates; ++r) {
            for (std::size_t k = 0; k < b; ++k) {
                null[k] = spec.x - spec.drift * static_cast<double>(k + 1) + n01(rng);
            }
            const double qhat = null_quantile(EmpiricalNull(null), 1.0 - spec.alpha);
            err.add(1.0 - stats::normal_cdf(qhat - spec.x));
        }
        out.push_back({b, err.mean(), err.se()});
    }
    return out;
}

} // namespace geordd::inference
