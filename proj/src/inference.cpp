#include "geordd/inference.hpp"

#include "geordd/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace geordd::inference {

EmpiricalNull::EmpiricalNull(std::vector<double> stats, int border_id, double delta, std::size_t failed)
    : border_id_(border_id), delta_(delta), failed_(failed) {
    stats_.reserve(stats.size());
    for (double s : stats) {
        if (std::isfinite(s)) {
            stats_.push_back(s);
        } else {
            ++failed_;
        }
    }
    if (stats_.empty()) throw UndefinedTestError("empirical null has no finite statistics");
    sorted_ = stats_;
    std::sort(sorted_.begin(), sorted_.end());
}

EmpiricalNull EmpiricalNull::absolute() const {
    std::vector<double> a(stats_.size());
    std::transform(stats_.begin(), stats_.end(), a.begin(), [](double v) { return std::abs(v); });
    return EmpiricalNull(std::move(a), border_id_, delta_, failed_);
}

double empirical_cdf(const EmpiricalNull& null, double a) {
    const auto s = null.sorted();
    const auto below = std::lower_bound(s.begin(), s.end(), a) - s.begin();
    return static_cast<double>(below) / static_cast<double>(s.size());
}

double empirical_cdf_inclusive(const EmpiricalNull& null, double a) {
    const auto s = null.sorted();
    const auto upto = std::upper_bound(s.begin(), s.end(), a) - s.begin();
    return static_cast<double>(upto) / static_cast<double>(s.size());
}

double null_quantile(const EmpiricalNull& null, double level) {
    if (!(level > 0.0) || level > 1.0) throw InvalidArgument("null_quantile: level must be in (0, 1]");
    const auto s = null.sorted();
    const double b = static_cast<double>(s.size());
    // k/B >= level at the k-th order statistic; guard against level*B landing
    // a rounding error above an integer.
    auto k = static_cast<std::size_t>(std::ceil(level * b - 1e-9 * b));
    k = std::clamp<std::size_t>(k, 1, s.size());
    return s[k - 1];
}

double p_value(double observed, const EmpiricalNull& null, Sidedness sidedness) {
    if (!std::isfinite(observed)) throw InvalidArgument("p_value: observed statistic is not finite");
    std::size_t extreme = 0;
    for (double v : null.stats()) {
        switch (sidedness) {
        case Sidedness::two_sided: extreme += std::abs(v) >= std::abs(observed); break;
        case Sidedness::greater: extreme += v >= observed; break;
        case Sidedness::less: extreme += v <= observed; break;
        }
    }
    return (1.0 + static_cast<double>(extreme)) / (static_cast<double>(null.size()) + 1.0);
}

double silverman_bandwidth(const EmpiricalNull& null) {
    const auto s = null.sorted();
    const double n = static_cast<double>(s.size());
    if (s.size() < 2) return 1.0;
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : s) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    auto at = [&](double q) {
        const double pos = q * (n - 1.0);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, s.size() - 1);
        return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
    };
    const double iqr = at(0.75) - at(0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) return 1.0;
    return 0.9 * spread * std::pow(n, -0.2);
}

double smoothed_cdf(const EmpiricalNull& null, double a, double bandwidth) {
    const double h = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(null);
    double acc = 0.0;
    for (double v : null.stats()) acc += 0.5 * std::erfc(-(a - v) / (h * std::numbers::sqrt2));
    return acc / static_cast<double>(null.size());
}

TestResult test_against_null(int border_id, double delta, const pipeline::SiteStatistic& observed,
                             std::span<const pipeline::SiteStatistic> nulls, double alpha, DecisionRule rule) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0, 1)");
    if (!observed.ok) {
        throw DegenerateFitError("border " + std::to_string(border_id) + ": " + observed.failure);
    }
    std::vector<double> values;
    std::size_t failed = 0;
    for (const auto& s : nulls) {
        if (s.ok && std::isfinite(s.value)) {
            values.push_back(s.value);
        } else {
            ++failed;
        }
    }
    if (values.empty()) {
        throw UndefinedTestError("border " + std::to_string(border_id) + ": every null-street statistic failed");
    }
    const EmpiricalNull null(std::move(values), border_id, delta, failed);

    TestResult r;
    r.border_id = border_id;
    r.delta = delta;
    r.observed = observed.value;
    r.se = observed.se;
    r.p_value = p_value(observed.value, null);
    r.naive_p = observed.naive_p;
    r.quantile = null_quantile(null.absolute(), 1.0 - alpha);
    r.reject_quantile = std::abs(observed.value) > r.quantile;
    r.reject = rule == DecisionRule::add_one_p_value ? r.p_value <= alpha : r.reject_quantile;
    r.naive_reject = std::isfinite(observed.naive_p) && observed.naive_p <= alpha;
    r.b_used = null.size();
    r.masked_months = observed.masked_months;
    r.failed_fits = null.failed();
    r.low_confidence = static_cast<double>(null.failed()) > 0.1 * static_cast<double>(nulls.size());
    return r;
}

TestResult border_test(const pipeline::Border& border, const pipeline::EventIndex& events, double delta,
                       const nullstreets::MatchSet& matches, std::span<const nullstreets::NullStreet> streets,
                       double alpha, const StatisticOptions& options) {
    const double widths[] = {delta};
    const auto counts = pipeline::count_site(border.buffer, widths, events, options.attribution, border.regions);
    const auto observed = pipeline::site_statistic(counts, 0, options.outcome, options.order);

    std::map<int, const nullstreets::NullStreet*> by_id;
    for (const auto& s : streets) by_id.emplace(s.id, &s);
    std::vector<pipeline::SiteStatistic> nulls;
    nulls.reserve(matches.size());
    for (int id : matches.street_ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw InvalidArgument("border_test: matched street " + std::to_string(id) + " not supplied");
        const auto c = pipeline::count_site(it->second->buffer(delta), widths, events);
        nulls.push_back(pipeline::site_statistic(c, 0, options.outcome, options.order));
    }
    return test_against_null(border.id, delta, observed, nulls, alpha, options.rule);
}

namespace {

struct GlobalSetup {
    GlobalResult result;
    std::size_t b_max = 0;
};

GlobalSetup global_setup(std::span<const double> observed, const std::vector<std::vector<double>>& null_by_rank,
                         double alpha) {
    if (observed.empty()) throw InvalidArgument("global_test: no borders");
    if (null_by_rank.size() != observed.size()) throw InvalidArgument("global_test: one null list per border required");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0, 1)");
    GlobalSetup g;
    for (double v : observed) {
        if (!std::isfinite(v)) throw DegenerateFitError("global_test: a border statistic is not finite");
        g.result.observed = std::max(g.result.observed, std::abs(v));
    }
    for (const auto& v : null_by_rank) g.b_max = std::max(g.b_max, v.size());
    return g;
}

void global_finish(GlobalResult& r, std::size_t exceed, double alpha, std::span<const double> naive_p) {
    if (r.replicates == 0) throw UndefinedTestError("global_test: no complete null replicate");
    r.p_value = (1.0 + static_cast<double>(exceed)) / (static_cast<double>(r.replicates) + 1.0);
    r.reject = r.p_value <= alpha;

    double p_min = 1.0;
    std::size_t m = 0;
    for (double p : naive_p) {
        if (!std::isfinite(p)) continue;
        p_min = std::min(p_min, p);
        ++m;
    }
    if (m > 0) {
        r.naive_p = -std::expm1(static_cast<double>(m) * std::log1p(-p_min));
        r.naive_reject = r.naive_p <= alpha;
    }
}

} // namespace

GlobalResult global_test(std::span<const double> observed, const std::vector<std::vector<double>>& null_by_rank,
                         double alpha, std::span<const double> naive_p) {
    GlobalSetup g = global_setup(observed, null_by_rank, alpha);
    GlobalResult& r = g.result;
    std::size_t exceed = 0;
    for (std::size_t b = 0; b < g.b_max; ++b) {
        double t = 0.0;
        bool complete = true;
        for (const auto& v : null_by_rank) {
            if (b >= v.size() || !std::isfinite(v[b])) {
                complete = false;
                break;
            }
            t = std::max(t, std::abs(v[b]));
        }
        if (!complete) {
            ++r.dropped;
            continue;
        }
        ++r.replicates;
        exceed += t >= r.observed;
    }
    global_finish(r, exceed, alpha, naive_p);
    return r;
}

} // namespace geordd::inference
