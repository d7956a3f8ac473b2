#pragma once

// Null streets: street segments whose buffers stay inside one precinct, the
// crime covariates used to match them to a border, Mahalanobis matching, and
// a spline diagnostic for covariate/statistic association.

#include "geordd/geo.hpp"
#include "geordd/ingest.hpp"

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geordd::nullstreets {

struct NullStreet {
    int id = 0;
    geo::Polyline centerline;
    int host_region = 0;
    /// Largest buffer width whose buffer still lies inside the host region
    /// with the exclusion margin to spare.
    double max_valid_delta = 0.0;

    /// Allows a micro-foot of rounding, e.g. from a lon/lat round trip.
    [[nodiscard]] bool valid_at(double delta) const { return delta <= max_valid_delta + 1e-6; }
    [[nodiscard]] geo::BorderBuffer buffer(double delta) const {
        return geo::BorderBuffer::left_right(centerline, delta);
    }
};

struct CandidateOptions {
    double min_length = 300.0;  // feet
    double margin = 100.0;      // extra clearance beyond delta to every region boundary
};

/// Shortest distance between a polyline and a polygon's rings; 0 when they cross.
double distance_to_boundary(const geo::Polyline& line, const geo::Polygon& polygon);

/// Streets at least `min_length` long whose delta-buffer lies inside a
/// single region. Sorted by street id.
std::vector<NullStreet> extract_candidates(std::span<const ingest::Street> streets,
                                           const ingest::RegionGeometry& geometry, double delta,
                                           const CandidateOptions& options = {});

struct MatchCovariates {
    double total = 0.0;
    /// Larger side over smaller side; infinite when a side is empty.
    double ratio = std::numeric_limits<double>::infinity();

    [[nodiscard]] bool finite_ratio() const { return ratio < std::numeric_limits<double>::infinity(); }
};

MatchCovariates make_covariates(double side1, double side0);

/// Crime counted over every month on the two sides of the buffer.
MatchCovariates covariates(const geo::BorderBuffer& buffer, const ingest::EventSet& crimes);

struct Candidate {
    int id = 0;
    MatchCovariates covariates;
    /// Needed only by the non-overlap filter.
    const geo::Polyline* centerline = nullptr;
};

struct MatchOptions {
    /// Skip candidates whose buffer would overlap an already selected one.
    bool non_overlapping = false;
    double delta = 0.0;  // buffer width for the overlap test
};

struct MatchSet {
    int border_id = 0;
    double delta = 0.0;
    std::vector<int> street_ids;
    std::vector<double> distances;  // ascending; infinite for infinite-ratio candidates
    bool diagonal_fallback = false;
    std::string warning;

    [[nodiscard]] std::size_t size() const { return street_ids.size(); }
};

/// Squared Mahalanobis distances of every pool member from the target on
/// (log total, log ratio). Infinite-ratio members get +inf; a target with an
/// infinite ratio is matched on log total alone.
struct Distances {
    std::vector<double> d2;
    bool diagonal_fallback = false;
};
Distances mahalanobis_distances(const MatchCovariates& target, std::span<const Candidate> pool);

/// The B nearest candidates, ties broken by id. Throws PoolTooSmallError when
/// fewer than B candidates are available.
MatchSet match(const MatchCovariates& target, std::span<const Candidate> pool, std::size_t b,
               const MatchOptions& options = {});

/// A pool with its log covariates and covariance computed once, for matching
/// many targets against the same candidates. Does not own the candidates.
class MatchPool {
public:
    explicit MatchPool(std::span<const Candidate> pool);

    [[nodiscard]] Distances distances(const MatchCovariates& target) const;
    [[nodiscard]] MatchSet match(const MatchCovariates& target, std::size_t b, const MatchOptions& options = {}) const;
    [[nodiscard]] std::size_t size() const { return pool_.size(); }

private:
    std::span<const Candidate> pool_;
    std::vector<double> log_total_;  // NaN when the candidate has no crime
    std::vector<double> log_ratio_;  // NaN when the ratio is infinite
    double var_total_ = 1.0;         // for infinite-ratio targets
    double i00_ = 1.0, i01_ = 0.0, i11_ = 1.0;
    bool diagonal_fallback_ = false;
};

struct AssociationResult {
    std::vector<double> coefficients;  // intercept then four basis terms
    double rss_full = 0.0;
    double rss_null = 0.0;
    double f_statistic = 0.0;
    int df1 = 4;
    int df2 = 0;
    double p_value = 1.0;
};

/// Least-squares fit of `statistic` on a cubic spline in `covariate` with one
/// interior knot at the median (4 degrees of freedom), F-tested against the
/// intercept-only model. Needs at least 30 points.
AssociationResult association_diagnostic(std::span<const double> statistic, std::span<const double> covariate);

} // namespace geordd::nullstreets
