#include "geordd/nullstreets.hpp"

#include "geordd/error.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geordd::nullstreets {

namespace {

using geo::PlanarPoint;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int orientation(PlanarPoint a, PlanarPoint b, PlanarPoint c) {
    const double v = geo::cross(b - a, c - a);
    return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
}

bool segments_cross(PlanarPoint p1, PlanarPoint p2, PlanarPoint q1, PlanarPoint q2) {
    const int o1 = orientation(p1, p2, q1);
    const int o2 = orientation(p1, p2, q2);
    const int o3 = orientation(q1, q2, p1);
    const int o4 = orientation(q1, q2, p2);
    return o1 * o2 < 0 && o3 * o4 < 0;
}

double segment_segment_distance(PlanarPoint p1, PlanarPoint p2, PlanarPoint q1, PlanarPoint q2) {
    if (segments_cross(p1, p2, q1, q2)) return 0.0;
    return std::min({geo::segment_distance(p1, q1, q2), geo::segment_distance(p2, q1, q2),
                     geo::segment_distance(q1, p1, p2), geo::segment_distance(q2, p1, p2)});
}

double ring_line_distance(const geo::Ring& ring, const geo::Polyline& line, double best) {
    const geo::BBox lb = line.bbox();
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const PlanarPoint a = ring[i];
        const PlanarPoint b = ring[i + 1];
        // Skip edges whose box is already farther than the best distance.
        const double dx = std::max({0.0, std::min(a.x, b.x) - lb.max_x, lb.min_x - std::max(a.x, b.x)});
        const double dy = std::max({0.0, std::min(a.y, b.y) - lb.max_y, lb.min_y - std::max(a.y, b.y)});
        if (std::hypot(dx, dy) >= best) continue;
        for (std::size_t s = 0; s < line.segment_count(); ++s) {
            const auto [p, q] = line.segment(s);
            best = std::min(best, segment_segment_distance(p, q, a, b));
            if (best == 0.0) return 0.0;
        }
    }
    return best;
}

double polyline_distance(const geo::Polyline& a, const geo::Polyline& b) {
    double best = kInf;
    for (std::size_t i = 0; i < a.segment_count(); ++i) {
        const auto [p, q] = a.segment(i);
        for (std::size_t j = 0; j < b.segment_count(); ++j) {
            const auto [r, s] = b.segment(j);
            best = std::min(best, segment_segment_distance(p, q, r, s));
        }
    }
    return best;
}

double box_gap(const geo::BBox& a, const geo::BBox& b) {
    const double dx = std::max({0.0, a.min_x - b.max_x, b.min_x - a.max_x});
    const double dy = std::max({0.0, a.min_y - b.max_y, b.min_y - a.max_y});
    return std::hypot(dx, dy);
}

} // namespace

double distance_to_boundary(const geo::Polyline& line, const geo::Polygon& polygon) {
    double best = ring_line_distance(polygon.outer(), line, kInf);
    for (const auto& h : polygon.holes()) best = ring_line_distance(h, line, best);
    return best;
}

std::vector<NullStreet> extract_candidates(std::span<const ingest::Street> streets,
                                           const ingest::RegionGeometry& geometry, double delta,
                                           const CandidateOptions& options) {
    if (!(delta > 0.0)) throw InvalidArgument("extract_candidates: delta must be positive");
    std::vector<NullStreet> out;
    for (const auto& street : streets) {
        const geo::Polyline& line = street.centerline;
        if (line.length() < options.min_length) continue;
        const auto host = geometry.region_of(line.vertices().front());
        if (!host) continue;
        const geo::PolygonSet& host_set = *geometry.regions.at(*host);
        const bool inside = std::all_of(line.vertices().begin(), line.vertices().end(),
                                        [&](PlanarPoint p) { return geo::contains(host_set, p); });
        if (!inside) continue;

        double clearance = kInf;
        for (const auto& poly : host_set) clearance = std::min(clearance, distance_to_boundary(line, poly));
        for (const auto& [id, set] : geometry.regions) {
            if (id == *host) continue;
            for (const auto& poly : *set) {
                if (box_gap(poly.bbox(), line.bbox()) >= clearance) continue;
                clearance = std::min(clearance, distance_to_boundary(line, poly));
            }
        }
        NullStreet candidate{street.id, line, *host, clearance - options.margin};
        if (!candidate.valid_at(delta)) continue;
        out.push_back(std::move(candidate));
    }
    std::sort(out.begin(), out.end(), [](const NullStreet& a, const NullStreet& b) { return a.id < b.id; });
    return out;
}

MatchCovariates make_covariates(double side1, double side0) {
    if (side1 < 0.0 || side0 < 0.0) throw InvalidArgument("make_covariates: negative count");
    MatchCovariates c;
    c.total = side1 + side0;
    const double lo = std::min(side1, side0);
    c.ratio = lo > 0.0 ? std::max(side1, side0) / lo : kInf;
    return c;
}

MatchCovariates covariates(const geo::BorderBuffer& buffer, const ingest::EventSet& crimes) {
    double s1 = 0.0, s0 = 0.0;
    for (int t = 1; t <= crimes.months(); ++t) {
        const geo::SideCount c = geo::count_sides(crimes.positions(t), buffer);
        s1 += static_cast<double>(c.side1);
        s0 += static_cast<double>(c.side0);
    }
    return make_covariates(s1, s0);
}

MatchPool::MatchPool(std::span<const Candidate> pool)
    : pool_(pool), log_total_(pool.size(), kNaN), log_ratio_(pool.size(), kNaN) {
    std::vector<std::size_t> finite;
    double lt_sum = 0.0;
    std::size_t lt_n = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& c = pool[i].covariates;
        if (!(c.total > 0.0)) continue;
        log_total_[i] = std::log(c.total);
        lt_sum += log_total_[i];
        ++lt_n;
        if (c.finite_ratio()) {
            log_ratio_[i] = std::log(c.ratio);
            finite.push_back(i);
        }
    }
    if (lt_n >= 2) {
        const double m = lt_sum / static_cast<double>(lt_n);
        double ss = 0.0;
        for (double v : log_total_) {
            if (!std::isnan(v)) ss += (v - m) * (v - m);
        }
        var_total_ = ss / static_cast<double>(lt_n - 1);
        if (!(var_total_ > 0.0)) var_total_ = 1.0;
    }

    const double n = static_cast<double>(finite.size());
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i : finite) {
        m0 += log_total_[i];
        m1 += log_ratio_[i];
    }
    if (!finite.empty()) {
        m0 /= n;
        m1 /= n;
    }
    double s00 = 0.0, s11 = 0.0, s01 = 0.0;
    for (std::size_t i : finite) {
        const double a = log_total_[i] - m0;
        const double b = log_ratio_[i] - m1;
        s00 += a * a;
        s11 += b * b;
        s01 += a * b;
    }
    if (finite.size() >= 2) {
        s00 /= n - 1.0;
        s11 /= n - 1.0;
        s01 /= n - 1.0;
    }
    const double det = s00 * s11 - s01 * s01;
    if (finite.size() >= 3 && s00 > 0.0 && s11 > 0.0 && det > 1e-10 * s00 * s11) {
        i00_ = s11 / det;
        i11_ = s00 / det;
        i01_ = -s01 / det;
    } else {
        diagonal_fallback_ = true;
        i00_ = s00 > 0.0 ? 1.0 / s00 : 1.0;
        i11_ = s11 > 0.0 ? 1.0 / s11 : 1.0;
        i01_ = 0.0;
    }
}

Distances MatchPool::distances(const MatchCovariates& target) const {
    Distances out;
    out.d2.assign(pool_.size(), kInf);
    if (!(target.total > 0.0)) throw InvalidArgument("mahalanobis_distances: target has no crime");
    const double t0 = std::log(target.total);
    if (!target.finite_ratio()) {
        for (std::size_t i = 0; i < pool_.size(); ++i) {
            if (!std::isnan(log_total_[i])) out.d2[i] = (log_total_[i] - t0) * (log_total_[i] - t0) / var_total_;
        }
        return out;
    }
    out.diagonal_fallback = diagonal_fallback_;
    const double t1 = std::log(target.ratio);
    for (std::size_t i = 0; i < pool_.size(); ++i) {
        if (std::isnan(log_ratio_[i])) continue;
        const double a = log_total_[i] - t0;
        const double b = log_ratio_[i] - t1;
        out.d2[i] = a * a * i00_ + 2.0 * a * b * i01_ + b * b * i11_;
    }
    return out;
}

MatchSet MatchPool::match(const MatchCovariates& target, std::size_t b, const MatchOptions& options) const {
    if (b == 0) throw InvalidArgument("match: B must be at least 1");
    if (pool_.size() < b) {
        throw PoolTooSmallError("match: pool of " + std::to_string(pool_.size()) + " candidates is smaller than B = " +
                                    std::to_string(b),
                                pool_.size());
    }
    const auto& pool = pool_;
    const Distances dist = distances(target);
    // Infinite-distance candidates are still ordered among themselves by how
    // far their total is from the target's.
    std::vector<double> secondary(pool.size(), kInf);
    const double lt = std::log(target.total);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!std::isnan(log_total_[i])) secondary[i] = std::abs(log_total_[i] - lt);
    }
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto closer = [&](std::size_t x, std::size_t y) {
        if (dist.d2[x] != dist.d2[y]) return dist.d2[x] < dist.d2[y];
        if (dist.d2[x] == kInf && secondary[x] != secondary[y]) return secondary[x] < secondary[y];
        return pool[x].id < pool[y].id;
    };
    // The order is total, so only the filtered path needs more than the first b.
    if (options.non_overlapping) {
        std::sort(order.begin(), order.end(), closer);
    } else {
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b), order.end(), closer);
    }

    MatchSet out;
    out.diagonal_fallback = dist.diagonal_fallback;
    if (dist.diagonal_fallback) out.warning = "singular covariate covariance; using diagonal scaling";
    std::vector<const geo::Polyline*> chosen;
    for (std::size_t i : order) {
        if (out.size() == b) break;
        if (options.non_overlapping) {
            const geo::Polyline* line = pool[i].centerline;
            if (line == nullptr) throw InvalidArgument("match: non-overlap filter needs candidate centerlines");
            const bool overlaps = std::any_of(chosen.begin(), chosen.end(), [&](const geo::Polyline* c) {
                return box_gap(c->bbox(), line->bbox()) < 2.0 * options.delta &&
                       polyline_distance(*c, *line) < 2.0 * options.delta;
            });
            if (overlaps) continue;
            chosen.push_back(line);
        }
        out.street_ids.push_back(pool[i].id);
        out.distances.push_back(std::sqrt(dist.d2[i]));
    }
    if (out.size() < b) {
        throw PoolTooSmallError("match: only " + std::to_string(out.size()) +
                                    " non-overlapping candidates for B = " + std::to_string(b),
                                out.size());
    }
    return out;
}

Distances mahalanobis_distances(const MatchCovariates& target, std::span<const Candidate> pool) {
    return MatchPool(pool).distances(target);
}

MatchSet match(const MatchCovariates& target, std::span<const Candidate> pool, std::size_t b,
               const MatchOptions& options) {
    return MatchPool(pool).match(target, b, options);
}

AssociationResult association_diagnostic(std::span<const double> statistic, std::span<const double> covariate) {
    const std::size_t n = statistic.size();
    if (covariate.size() != n) throw InvalidArgument("association_diagnostic: length mismatch");
    if (n < 30) throw InvalidArgument("association_diagnostic: needs at least 30 candidates");

    const double mean = std::accumulate(covariate.begin(), covariate.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : covariate) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw UndefinedTestError("association_diagnostic: covariate is constant");

    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = (covariate[i] - mean) / sd;
    std::vector<double> sorted = u;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
    const double knot = sorted[n / 2];

    Eigen::MatrixXd x(n, 5);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = u[i];
        const double h = std::max(0.0, v - knot);
        x(i, 0) = 1.0;
        x(i, 1) = v;
        x(i, 2) = v * v;
        x(i, 3) = v * v * v;
        x(i, 4) = h * h * h;
        y(i) = statistic[i];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < 5) throw UndefinedTestError("association_diagnostic: covariate has too few distinct values");
    const Eigen::VectorXd beta = qr.solve(y);

    AssociationResult r;
    r.coefficients.assign(beta.data(), beta.data() + 5);
    r.rss_full = (y - x * beta).squaredNorm();
    r.rss_null = (y.array() - y.mean()).matrix().squaredNorm();
    r.df2 = static_cast<int>(n) - 5;
    if (r.rss_full <= 0.0) {
        r.f_statistic = kInf;
        r.p_value = 0.0;
        return r;
    }
    r.f_statistic = ((r.rss_null - r.rss_full) / r.df1) / (r.rss_full / r.df2);
    const boost::math::fisher_f dist(r.df1, r.df2);
    r.p_value = boost::math::cdf(boost::math::complement(dist, std::max(0.0, r.f_statistic)));
    return r;
}

} // namespace geordd::nullstreets
