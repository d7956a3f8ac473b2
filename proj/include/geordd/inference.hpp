#pragma once

// Empirical null distributions from matched null streets, per-border and
// global max-statistic tests.

#include "geordd/nullstreets.hpp"
#include "geordd/pipeline.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace geordd::inference {

enum class Sidedness { two_sided, greater, less };

/// Per-border rejection rule.
enum class DecisionRule {
    add_one_p_value,     // reject when (1 + #exceeding) / (B + 1) <= alpha
    quantile_threshold,  // reject when |observed| > Q(1 - alpha) of |null|
};

/// B resampled statistics for one border and width. Non-finite statistics are
/// dropped on construction and counted as failed.
class EmpiricalNull {
public:
    explicit EmpiricalNull(std::vector<double> stats, int border_id = 0, double delta = 0.0, std::size_t failed = 0);

    [[nodiscard]] std::span<const double> stats() const { return stats_; }
    [[nodiscard]] std::span<const double> sorted() const { return sorted_; }
    [[nodiscard]] std::size_t size() const { return stats_.size(); }
    [[nodiscard]] std::size_t failed() const { return failed_; }
    [[nodiscard]] int border_id() const { return border_id_; }
    [[nodiscard]] double delta() const { return delta_; }

    /// The null of |theta^b|, used for two-sided thresholds.
    [[nodiscard]] EmpiricalNull absolute() const;

private:
    std::vector<double> stats_;
    std::vector<double> sorted_;
    int border_id_ = 0;
    double delta_ = 0.0;
    std::size_t failed_ = 0;
};

/// Fraction of null statistics strictly below a.
double empirical_cdf(const EmpiricalNull& null, double a);
/// Fraction of null statistics at or below a (the right-continuous version).
double empirical_cdf_inclusive(const EmpiricalNull& null, double a);

/// Smallest order statistic q with empirical_cdf_inclusive(q) >= level.
double null_quantile(const EmpiricalNull& null, double level);

/// Add-one p-value (1 + #{b : stat^b at least as extreme}) / (B + 1).
double p_value(double observed, const EmpiricalNull& null, Sidedness sidedness = Sidedness::two_sided);

/// Silverman's rule-of-thumb bandwidth 0.9 min(sd, IQR / 1.34) B^(-1/5).
double silverman_bandwidth(const EmpiricalNull& null);
/// Gaussian-kernel smoothed CDF of the null; bandwidth <= 0 selects Silverman's rule.
double smoothed_cdf(const EmpiricalNull& null, double a, double bandwidth = 0.0);

struct TestResult {
    int border_id = 0;
    double delta = 0.0;
    double observed = 0.0;
    double se = 0.0;
    double p_value = 1.0;
    double naive_p = 1.0;
    double quantile = 0.0;  // Q(1 - alpha) of |null|
    bool reject = false;           // by the configured rule
    bool reject_quantile = false;  // |observed| > quantile
    bool naive_reject = false;
    std::size_t b_used = 0;
    std::size_t masked_months = 0;
    std::size_t failed_fits = 0;
    bool low_confidence = false;  // more than 10% of null fits failed
};

/// Test an observed site statistic against the statistics of its matched
/// null streets. Throws DegenerateFitError when the observed fit failed and
/// UndefinedTestError when no null statistic is usable.
TestResult test_against_null(int border_id, double delta, const pipeline::SiteStatistic& observed,
                             std::span<const pipeline::SiteStatistic> nulls, double alpha,
                             DecisionRule rule = DecisionRule::add_one_p_value);

struct StatisticOptions {
    pipeline::Outcome outcome = pipeline::Outcome::arrest_count;
    int order = 1;
    pipeline::Attribution attribution = pipeline::Attribution::location;
    DecisionRule rule = DecisionRule::add_one_p_value;
};

/// Two-step test at one border: the border statistic, the same statistic
/// at each matched null street, and the resulting empirical p-value.
/// `streets` must contain every matched id.
TestResult border_test(const pipeline::Border& border, const pipeline::EventIndex& events, double delta,
                       const nullstreets::MatchSet& matches, std::span<const nullstreets::NullStreet> streets,
                       double alpha, const StatisticOptions& options = {});

struct GlobalResult {
    double delta = 0.0;
    double observed = 0.0;  // max over borders of |theta_m|
    double p_value = 1.0;
    bool reject = false;
    std::size_t replicates = 0;
    std::size_t dropped = 0;  // replicates missing some border's b-th match
    double naive_p = 1.0;     // Sidak-combined minimum naive p-value
    bool naive_reject = false;
};

/// Max-statistic test over M borders. `null_by_rank[m][b]` is border m's
/// statistic at its b-th match; NaN marks a missing or failed match.
/// Replicate b pairs the b-th matches of all borders.
GlobalResult global_test(std::span<const double> observed, const std::vector<std::vector<double>>& null_by_rank,
                         double alpha, std::span<const double> naive_p = {});

} // namespace geordd::inference
