#include "geordd/pipeline.hpp"

#include "geordd/error.hpp"

#include <algorithm>
#include <cmath>

namespace geordd::pipeline {

std::optional<Attribution> parse_attribution(std::string_view s) {
    if (s == "location") return Attribution::location;
    if (s == "source" || s == "source_region") return Attribution::source_region;
    return std::nullopt;
}

std::optional<Outcome> parse_outcome(std::string_view s) {
    if (s == "count" || s == "arrest_count") return Outcome::arrest_count;
    if (s == "rate" || s == "arrest_rate") return Outcome::arrest_rate;
    if (s == "tree" || s == "tree_count") return Outcome::tree_count;
    return std::nullopt;
}

std::string_view to_string(Attribution a) {
    return a == Attribution::location ? "location" : "source_region";
}

std::string_view to_string(Outcome o) {
    switch (o) {
    case Outcome::arrest_count: return "count";
    case Outcome::arrest_rate: return "rate";
    case Outcome::tree_count: return "tree";
    }
    return "count";
}

EventIndex::EventIndex(const ingest::EventSet& events, double cell_size) : cell_(cell_size), months_(events.months()) {
    if (!(cell_size > 0.0)) throw InvalidArgument("EventIndex: cell size must be positive");
    for (int t = 1; t <= months_; ++t) {
        for (const auto& p : events.positions(t)) extent_.expand(p);
    }
    if (extent_.empty()) return;
    auto dims = [&] {
        nx_ = static_cast<int>(std::floor((extent_.max_x - extent_.min_x) / cell_)) + 1;
        ny_ = static_cast<int>(std::floor((extent_.max_y - extent_.min_y) / cell_)) + 1;
    };
    dims();
    while (static_cast<double>(nx_) * ny_ > 4e6) {
        cell_ *= 2.0;
        dims();
    }
    cells_.resize(static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_));
    for (int t = 1; t <= months_; ++t) {
        const auto pos = events.positions(t);
        const auto kinds = events.kinds(t);
        const auto src = events.sources(t);
        for (std::size_t i = 0; i < pos.size(); ++i) {
            const int cx = static_cast<int>((pos[i].x - extent_.min_x) / cell_);
            const int cy = static_cast<int>((pos[i].y - extent_.min_y) / cell_);
            cells_[static_cast<std::size_t>(cy) * nx_ + cx].push_back({pos[i], t, kinds[i], src[i]});
        }
    }
}

void EventIndex::visit(const geo::BBox& box, const std::function<void(const Entry&)>& fn) const {
    if (cells_.empty() || !box.intersects(extent_)) return;
    const int x0 = std::max(0, static_cast<int>(std::floor((box.min_x - extent_.min_x) / cell_)));
    const int y0 = std::max(0, static_cast<int>(std::floor((box.min_y - extent_.min_y) / cell_)));
    const int x1 = std::min(nx_ - 1, static_cast<int>(std::floor((box.max_x - extent_.min_x) / cell_)));
    const int y1 = std::min(ny_ - 1, static_cast<int>(std::floor((box.max_y - extent_.min_y) / cell_)));
    for (int cy = y0; cy <= y1; ++cy) {
        for (int cx = x0; cx <= x1; ++cx) {
            for (const auto& e : cells_[static_cast<std::size_t>(cy) * nx_ + cx]) {
                if (box.contains(e.p)) fn(e);
            }
        }
    }
}

std::vector<Border> make_borders(const ingest::RegionGeometry& geometry) {
    std::vector<Border> out;
    int id = 0;
    for (const auto& pair : geometry.adjacency) {
        const auto it = geometry.borders.find(pair);
        if (it == geometry.borders.end()) continue;
        out.push_back({++id, pair,
                       geo::BorderBuffer::precinct_membership(it->second, 1.0, geometry.regions.at(pair.first),
                                                              geometry.regions.at(pair.second))});
    }
    return out;
}

SiteCounts count_site(const geo::BorderBuffer& buffer, std::span<const double> deltas, const EventIndex& index,
                      Attribution attribution, std::optional<ingest::RegionPair> regions) {
    if (deltas.empty()) throw InvalidArgument("count_site: no buffer widths");
    if (!std::is_sorted(deltas.begin(), deltas.end()) || !(deltas.front() > 0.0)) {
        throw InvalidArgument("count_site: widths must be positive and ascending");
    }
    if (attribution == Attribution::source_region && !regions) {
        throw InvalidArgument("count_site: source attribution needs the region pair");
    }
    const auto months = static_cast<std::size_t>(index.months());
    SiteCounts out;
    out.deltas.assign(deltas.begin(), deltas.end());
    out.series.resize(deltas.size());
    for (auto& per_kind : out.series) {
        for (auto& s : per_kind) {
            s.side1.assign(months, 0.0);
            s.side0.assign(months, 0.0);
        }
    }
    const geo::BorderBuffer widest = buffer.with_delta(deltas.back());
    const geo::Polyline& line = widest.boundary();

    index.visit(line.bbox().inflated(deltas.back()), [&](const EventIndex::Entry& e) {
        const geo::BoundaryProximity prox = geo::locate(e.p, line);
        geo::Side side = widest.classify(e.p, prox);
        if (side == geo::Side::outside) return;
        bool tie = prox.on_boundary;
        if (attribution == Attribution::source_region && e.kind == ingest::EventKind::arrest) {
            tie = false;
            if (e.source == regions->first) {
                side = geo::Side::side1;
            } else if (e.source == regions->second) {
                side = geo::Side::side0;
            } else {
                ++out.unattributed;
                return;
            }
        }
        const auto k = static_cast<std::size_t>(e.kind);
        const auto t = static_cast<std::size_t>(e.month - 1);
        for (std::size_t d = deltas.size(); d-- > 0;) {
            if (!(prox.cap_distance < deltas[d])) break;
            auto& s = out.series[d][k];
            if (side == geo::Side::side1) {
                s.side1[t] += 1.0;
                if (tie) ++s.on_boundary;
            } else {
                s.side0[t] += 1.0;
            }
        }
    });
    return out;
}

SiteStatistic ar_statistic(const stats::DiffSeries& z, int order) {
    SiteStatistic s;
    s.masked_months = z.masked_count();
    try {
        const stats::ArFit fit = stats::fit_ar(z, order);
        s.value = fit.c_hat;
        s.se = fit.se_c;
        s.naive_p = stats::naive_p(fit);
        s.n_eff = fit.n_eff;
        s.ok = true;
    } catch (const DegenerateFitError& e) {
        s.failure = e.what();
    }
    return s;
}

SiteStatistic total_statistic(double side1, double side0) {
    SiteStatistic s;
    s.value = side1 - side0;
    s.total1 = side1;
    s.total0 = side0;
    s.ok = true;
    if (side1 + side0 > 0.0) {
        s.naive_p = stats::binom_test(static_cast<std::uint64_t>(std::llround(side1)),
                                      static_cast<std::uint64_t>(std::llround(side0)));
    }
    return s;
}

SiteStatistic site_statistic(const SiteCounts& counts, std::size_t d, Outcome outcome, int order) {
    using ingest::EventKind;
    switch (outcome) {
    case Outcome::arrest_count: {
        const auto& a = counts.at(d, EventKind::arrest);
        SiteStatistic s = ar_statistic(stats::diff_series(a), order);
        s.total1 = a.total1();
        s.total0 = a.total0();
        return s;
    }
    case Outcome::arrest_rate: {
        const auto& a = counts.at(d, EventKind::arrest);
        const auto& c = counts.at(d, EventKind::crime);
        SiteStatistic s = ar_statistic(stats::rate_diff_series(a.side1, c.side1, a.side0, c.side0), order);
        s.total1 = a.total1();
        s.total0 = a.total0();
        return s;
    }
    case Outcome::tree_count: {
        const auto& tr = counts.at(d, EventKind::tree);
        return total_statistic(tr.total1(), tr.total0());
    }
    }
    throw InvalidArgument("site_statistic: unknown outcome");
}

} // namespace geordd::pipeline
