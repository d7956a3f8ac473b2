#include "geordd/cli.hpp"

#include "geordd/error.hpp"
#include "geordd/random.hpp"
#include "geordd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace geordd::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "" : (v > 0 ? "inf" : "-inf");
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

nlohmann::json json_num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_or(const nlohmann::json& j, double fallback) { return j.is_number() ? j.get<double>() : fallback; }

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    // Write to a sibling and rename so readers never see a partial file.
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write " + path.string());
        out << text;
        if (!out) throw DataError("failed writing " + path.string());
    }
    fs::rename(tmp, path);
}

std::uint64_t hash_file_if(const std::string& path, std::uint64_t seed) {
    if (path.empty()) return ingest::content_hash("-", seed);
    return ingest::file_hash(path, seed);
}

/// Appends every event of `from` to `to`.
void merge_into(ingest::EventSet& to, const ingest::EventSet& from) {
    for (int t = 1; t <= from.months(); ++t) {
        const auto p = from.positions(t);
        const auto k = from.kinds(t);
        const auto s = from.sources(t);
        for (std::size_t i = 0; i < p.size(); ++i) {
            to.add(t, p[i], k[i], s[i] >= 0 ? std::optional<int>(s[i]) : std::nullopt);
        }
    }
}

void log_load(std::ostream& log, const std::string& what, const ingest::LoadReport& r) {
    log << what << ": " << r.kept << " of " << r.rows << " rows kept";
    if (r.malformed) log << ", " << r.malformed << " malformed";
    if (r.outside_window) log << ", " << r.outside_window << " outside the window";
    if (r.outside_bounds) log << ", " << r.outside_bounds << " outside the bounds";
    log << '\n';
}

ingest::LoadedGeometry load_geometry_for(const RunConfig& c) {
    if (c.paths.precincts.empty()) throw ConfigError("paths.precincts is required");
    ingest::GeometryOptions g;
    g.region_id_property = c.region_id_property;
    g.street_id_property = c.street_id_property;
    std::optional<fs::path> streets;
    if (!c.paths.streets.empty()) streets = c.paths.streets;
    return ingest::load_geometry(c.paths.precincts, streets, g);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] int column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    }
};

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) return t;
    t.header = ingest::split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        t.rows.push_back(ingest::split_csv_line(line));
    }
    return t;
}

double cell_number(const std::vector<std::string>& row, int col) {
    if (col < 0 || static_cast<std::size_t>(col) >= row.size() || row[static_cast<std::size_t>(col)].empty()) return kNaN;
    try {
        return std::stod(row[static_cast<std::size_t>(col)]);
    } catch (const std::exception&) {
        return kNaN;
    }
}

std::string cell_text(const std::vector<std::string>& row, int col) {
    if (col < 0 || static_cast<std::size_t>(col) >= row.size()) return "";
    return row[static_cast<std::size_t>(col)];
}

} // namespace

Inputs load_inputs(const RunConfig& config, std::ostream& log) {
    Inputs in;
    in.geometry = load_geometry_for(config);
    const auto& rep = in.geometry.report;
    log << "geometry: " << in.geometry.geometry.regions.size() << " regions, " << in.geometry.geometry.adjacency.size()
        << " adjacent pairs, " << in.geometry.streets.size() << " streets\n";
    for (const auto& r : rep.rejected_features) log << "warning: rejected precinct feature: " << r << '\n';
    if (rep.rejected_streets) log << "warning: " << rep.rejected_streets << " street features rejected\n";

    in.events = ingest::EventSet(config.window.months());
    if (config.paths.events.empty()) throw ConfigError("paths.events is required");
    auto ev = ingest::load_events(config.paths.events, config.csv, config.window, in.geometry.origin);
    log_load(log, "events", ev.report);
    merge_into(in.events, ev.events);
    for (const auto& [path, kind] : {std::pair{config.paths.crimes, ingest::EventKind::crime},
                                     std::pair{config.paths.trees, ingest::EventKind::tree}}) {
        if (path.empty()) continue;
        ingest::CsvSchema schema = config.csv;
        schema.kind_column.clear();
        schema.source_region_column.clear();
        schema.default_kind = kind;
        auto extra = ingest::load_events(path, schema, config.window, in.geometry.origin);
        log_load(log, std::string(ingest::to_string(kind)) + "s", extra.report);
        merge_into(in.events, extra.events);
    }

    std::uint64_t h = ingest::file_hash(config.paths.precincts);
    h = hash_file_if(config.paths.streets, h);
    h = hash_file_if(config.paths.events, h);
    h = hash_file_if(config.paths.crimes, h);
    h = hash_file_if(config.paths.trees, h);
    in.hash = ingest::hex_hash(h);
    return in;
}

fs::path cache_root(const RunConfig& config) {
    if (const char* env = std::getenv("GEORDD_CACHE_DIR"); env != nullptr && *env != '\0') return env;
    return config.paths.cache_dir;
}

std::string match_cache_key(const RunConfig& config, const std::string& input_hash) {
    const nlohmann::json j = {
        {"inputs", input_hash},
        {"window", {ingest::format_date(config.window.start), ingest::format_date(config.window.end)}},
        {"buffers", config.buffers},
        {"b", config.b},
        {"csv", to_json(config)["csv"]},
        {"geometry", to_json(config)["geometry"]},
        {"candidates", to_json(config)["candidates"]},
    };
    return ingest::hex_hash(ingest::content_hash(j.dump()));
}

fs::path match_cache_path(const RunConfig& config, const std::string& key) {
    return cache_root(config) / ("matches-" + key + ".json");
}

void save_match_cache(const MatchCache& cache, const fs::path& path) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : cache.records) {
        nlohmann::json d = nlohmann::json::array();
        for (double v : r.set.distances) d.push_back(json_num(v));
        records.push_back({{"border_id", r.border_id},
                           {"regions", {r.regions.first, r.regions.second}},
                           {"delta", r.set.delta},
                           {"b_requested", r.b_requested},
                           {"b_used", r.b_used},
                           {"street_ids", r.set.street_ids},
                           {"distances", d},
                           {"diagonal_fallback", r.set.diagonal_fallback},
                           {"warning", r.set.warning}});
    }
    write_file(path, nlohmann::json{{"key", cache.key}, {"records", records}}.dump(1) + "\n");
}

MatchCache load_match_cache(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open match cache " + path.string());
    MatchCache cache;
    try {
        nlohmann::json j;
        in >> j;
        cache.key = j.at("key").get<std::string>();
        for (const auto& r : j.at("records")) {
            MatchRecord m;
            m.border_id = r.at("border_id").get<int>();
            m.regions = {r.at("regions").at(0).get<int>(), r.at("regions").at(1).get<int>()};
            m.b_requested = r.at("b_requested").get<std::size_t>();
            m.b_used = r.at("b_used").get<std::size_t>();
            m.set.border_id = m.border_id;
            m.set.delta = r.at("delta").get<double>();
            m.set.street_ids = r.at("street_ids").get<std::vector<int>>();
            for (const auto& d : r.at("distances")) m.set.distances.push_back(number_or(d, INFINITY));
            m.set.diagonal_fallback = r.at("diagonal_fallback").get<bool>();
            m.set.warning = r.at("warning").get<std::string>();
            cache.records.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt match cache " + path.string() + ": " + e.what());
    }
    return cache;
}

// ---------------------------------------------------------------------------
// simulate / export

int cmd_simulate(const RunConfig& config, std::span<const simulate::ScenarioKind> scenarios, const fs::path& out_dir,
                 std::ostream& log) {
    config.validate();
    if (scenarios.empty()) throw ConfigError("no scenario selected");
    const auto& sim = config.simulation;
    const std::string hash = config_hash(config);
    const simulate::GridCity city = simulate::make_grid_city(sim.grid, sim.precinct_size);

    simulate::SimulationOptions opt;
    opt.datasets = sim.datasets;
    opt.deltas = sim.buffers;
    opt.alpha = config.alpha;
    opt.b = config.b;
    opt.order = config.order;
    opt.months = sim.months;
    opt.crime_multiplier = sim.crime_multiplier;
    opt.cell = sim.cell;
    opt.margin = config.candidates.margin;
    opt.min_length = config.candidates.min_length;
    opt.master_seed = config.seed;
    opt.threads = config.threads;
    opt.keep_pvalues = true;
    const simulate::ScenarioContext ctx(city.geometry, city.streets, opt);
    log << "grid city " << sim.grid << "x" << sim.grid << ": " << ctx.borders() << " borders, " << ctx.candidates()
        << " null-street candidates\n";
    for (std::size_t d = 0; d < opt.deltas.size(); ++d) {
        if (ctx.pool_size(d) < opt.b) {
            log << "warning: " << ctx.pool_size(d) << " candidates at " << opt.deltas[d]
                << " ft, fewer than B; matches are clamped to the pool\n";
        }
    }

    std::vector<simulate::ScenarioResult> results;
    for (const auto kind : scenarios) {
        simulate::ScenarioSpec spec = sim.scenario;
        spec.kind = kind;
        log << "scenario " << simulate::to_string(kind) << ": " << sim.datasets << " datasets\n";
        results.push_back(simulate::run_scenario(spec, ctx));
    }
    write_file(out_dir / "rates.csv", simulate::rates_csv(results, hash));

    std::ostringstream pv;
    pv << "config_hash,scenario,dataset,delta,test,index,p_value,naive_p,binomial_p\n";
    for (const auto& r : results) {
        const std::string name(simulate::to_string(r.spec.kind));
        for (const auto& d : r.pvalues) {
            for (std::size_t i = 0; i < d.corrected.size(); ++i) {
                pv << hash << ',' << name << ',' << d.dataset << ',' << num(d.delta) << ",individual," << i << ','
                   << num(d.corrected[i]) << ',' << num(d.naive[i]) << ',' << num(d.binomial[i]) << '\n';
            }
            pv << hash << ',' << name << ',' << d.dataset << ',' << num(d.delta) << ",global,0," << num(d.global)
               << ",,\n";
        }
    }
    write_file(out_dir / "pvalues.csv", pv.str());
    log << "wrote " << (out_dir / "rates.csv").string() << " and " << (out_dir / "pvalues.csv").string() << '\n';
    return kExitOk;
}

int cmd_export(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
    config.validate();
    const auto& sim = config.simulation;
    const simulate::GridCity city = simulate::make_grid_city(sim.grid, sim.precinct_size);
    const int months = config.window.months();
    const ingest::EventSet events = simulate::synthetic_events(sim.scenario, city.geometry, months, sim.crime_multiplier,
                                                               sim.tree_intensity, config.seed, sim.cell);

    // Centre the city on the origin so that re-reading the files recovers it.
    const geo::LonLat origin{-73.95, 40.70};
    const double half = 0.5 * sim.grid * sim.precinct_size;
    auto lonlat = [&](geo::PlanarPoint p) {
        const geo::LonLat ll = geo::unproject({p.x - half, p.y - half}, origin);
        return nlohmann::json::array({ll.lon, ll.lat});
    };

    nlohmann::json precincts = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
    for (const auto& [id, set] : city.geometry.regions) {
        nlohmann::json ring = nlohmann::json::array();
        for (const auto& v : set->front().outer()) ring.push_back(lonlat(v));
        precincts["features"].push_back({{"type", "Feature"},
                                         {"properties", {{config.region_id_property, id}}},
                                         {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}}});
    }
    nlohmann::json streets = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
    for (const auto& s : city.streets) {
        nlohmann::json coords = nlohmann::json::array();
        for (const auto& v : s.centerline.vertices()) coords.push_back(lonlat(v));
        streets["features"].push_back({{"type", "Feature"},
                                       {"properties", {{config.street_id_property, s.id}}},
                                       {"geometry", {{"type", "LineString"}, {"coordinates", coords}}}});
    }

    std::ostringstream csv;
    csv << std::setprecision(12);
    csv << "date,longitude,latitude,kind,precinct\n";
    for (int t = 1; t <= months; ++t) {
        const int m0 = config.window.start.month - 1 + (t - 1);
        const ingest::Date date{config.window.start.year + m0 / 12, m0 % 12 + 1, 15};
        const auto p = events.positions(t);
        const auto k = events.kinds(t);
        const auto src = events.sources(t);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const geo::LonLat ll = geo::unproject({p[i].x - half, p[i].y - half}, origin);
            csv << ingest::format_date(date) << ',' << ll.lon << ',' << ll.lat << ',' << ingest::to_string(k[i]) << ',';
            if (src[i] >= 0) csv << src[i];
            csv << '\n';
        }
    }

    fs::create_directories(out_dir);
    const fs::path dir = fs::absolute(out_dir);
    write_file(dir / "precincts.geojson", precincts.dump() + "\n");
    write_file(dir / "streets.geojson", streets.dump() + "\n");
    write_file(dir / "events.csv", csv.str());

    RunConfig next = config;
    next.paths.precincts = (dir / "precincts.geojson").string();
    next.paths.streets = (dir / "streets.geojson").string();
    next.paths.events = (dir / "events.csv").string();
    next.paths.crimes.clear();
    next.paths.trees.clear();
    next.csv.date_column = "date";
    next.csv.longitude_column = "longitude";
    next.csv.latitude_column = "latitude";
    next.csv.kind_column = "kind";
    next.csv.source_region_column = "precinct";
    write_file(dir / "config.json", to_json(next).dump(2) + "\n");
    log << "exported " << events.total() << " events over " << months << " months to " << dir.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// match

namespace {

/// Crime covariates at every configured width; widths a site cannot use stay empty.
struct SiteCrime {
    std::vector<std::optional<nullstreets::MatchCovariates>> at;
};

SiteCrime crime_covariates(const geo::BorderBuffer& buffer, std::span<const double> widths, std::size_t total_widths,
                           const pipeline::EventIndex& index, std::optional<ingest::RegionPair> regions) {
    SiteCrime out;
    out.at.resize(total_widths);
    if (widths.empty()) return out;
    const auto counts = pipeline::count_site(buffer, widths, index, pipeline::Attribution::location, regions);
    for (std::size_t d = 0; d < widths.size(); ++d) {
        const auto& c = counts.at(d, ingest::EventKind::crime);
        out.at[d] = nullstreets::make_covariates(c.total1(), c.total0());
    }
    return out;
}

std::size_t valid_widths(const nullstreets::NullStreet& s, std::span<const double> buffers) {
    std::size_t n = 0;
    while (n < buffers.size() && s.valid_at(buffers[n])) ++n;
    return n;
}

} // namespace

int cmd_match(const RunConfig& config, std::ostream& log) {
    config.validate();
    const Inputs in = load_inputs(config, log);
    const std::string key = match_cache_key(config, in.hash);
    const fs::path path = match_cache_path(config, key);
    if (fs::exists(path)) {
        const MatchCache cached = load_match_cache(path);
        if (cached.key == key) {
            log << "cache hit: " << path.string() << '\n';
            return kExitOk;
        }
    }

    const auto& geometry = in.geometry.geometry;
    const auto borders = pipeline::make_borders(geometry);
    if (borders.empty()) throw DataError("geometry has no adjacent regions");
    const auto candidates =
        nullstreets::extract_candidates(in.geometry.streets, geometry, config.buffers.front(), config.candidates);
    log << borders.size() << " borders, " << candidates.size() << " null-street candidates\n";

    const pipeline::EventIndex index(in.events.filtered(ingest::EventKind::crime));
    const std::size_t nb = config.buffers.size();
    std::vector<SiteCrime> border_crime(borders.size()), cand_crime(candidates.size());
    std::vector<std::string> errors(borders.size() + candidates.size());
    const auto total = static_cast<std::ptrdiff_t>(borders.size() + candidates.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(config.threads > 0 ? config.threads : omp_get_max_threads())
#endif
    for (std::ptrdiff_t i = 0; i < total; ++i) {
        const auto k = static_cast<std::size_t>(i);
        try {
            if (k < borders.size()) {
                border_crime[k] = crime_covariates(borders[k].buffer, config.buffers, nb, index, borders[k].regions);
            } else {
                const auto& c = candidates[k - borders.size()];
                const std::size_t nv = valid_widths(c, config.buffers);
                cand_crime[k - borders.size()] = crime_covariates(c.buffer(config.buffers[nv - 1]),
                                                                  std::span(config.buffers.data(), nv), nb, index,
                                                                  std::nullopt);
            }
        } catch (const std::exception& e) {
            errors[k] = e.what();
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) throw DataError("crime covariates: " + e);
    }

    MatchCache cache;
    cache.key = key;
    for (std::size_t d = 0; d < nb; ++d) {
        const double delta = config.buffers[d];
        std::vector<nullstreets::Candidate> pool;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            if (cand_crime[c].at[d]) pool.push_back({candidates[c].id, *cand_crime[c].at[d], &candidates[c].centerline});
        }
        const nullstreets::MatchPool matcher(pool);
        nullstreets::MatchOptions mopt;
        mopt.non_overlapping = config.non_overlapping;
        mopt.delta = delta;
        for (std::size_t bi = 0; bi < borders.size(); ++bi) {
            MatchRecord rec;
            rec.border_id = borders[bi].id;
            rec.regions = borders[bi].regions;
            rec.b_requested = config.b;
            rec.set.border_id = rec.border_id;
            rec.set.delta = delta;
            const auto& target = *border_crime[bi].at[d];
            std::size_t b = std::min(config.b, pool.size());
            if (!(target.total > 0.0)) {
                rec.set.warning = "no crime in the border buffer; cannot match";
            } else if (b == 0) {
                rec.set.warning = "no null-street candidates at this width";
            } else {
                try {
                    rec.set = matcher.match(target, b, mopt);
                } catch (const PoolTooSmallError& e) {
                    b = e.available();
                    if (b > 0) rec.set = matcher.match(target, b, mopt);
                }
                rec.set.border_id = rec.border_id;
                rec.set.delta = delta;
                if (b < config.b) {
                    rec.set.warning += (rec.set.warning.empty() ? "" : "; ") + std::string("only ") +
                                       std::to_string(b) + " candidates available for B = " +
                                       std::to_string(config.b);
                }
            }
            rec.b_used = rec.set.size();
            if (!rec.set.warning.empty()) {
                log << "warning: border " << rec.border_id << " at " << num(delta) << " ft: " << rec.set.warning << '\n';
            }
            cache.records.push_back(std::move(rec));
        }
    }
    save_match_cache(cache, path);
    log << "wrote " << cache.records.size() << " match sets to " << path.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// test

int cmd_test(const RunConfig& config, TestMode mode, std::optional<int> border, const fs::path& out,
             std::ostream& log) {
    config.validate();
    if (mode == TestMode::border && !border) throw ConfigError("--border needs a border id");
    const Inputs in = load_inputs(config, log);
    const std::string key = match_cache_key(config, in.hash);
    const fs::path cache_path = match_cache_path(config, key);
    if (!fs::exists(cache_path)) {
        throw DataError("no cached matches for this configuration at " + cache_path.string() +
                        "; run `geordd match` with the same configuration first");
    }
    const MatchCache cache = load_match_cache(cache_path);
    const std::string hash = config_hash(config);

    const auto& geometry = in.geometry.geometry;
    const auto borders = pipeline::make_borders(geometry);
    const auto candidates =
        nullstreets::extract_candidates(in.geometry.streets, geometry, config.buffers.front(), config.candidates);
    std::map<int, std::size_t> cand_by_id;
    for (std::size_t i = 0; i < candidates.size(); ++i) cand_by_id.emplace(candidates[i].id, i);
    std::map<int, std::size_t> border_by_id;
    for (std::size_t i = 0; i < borders.size(); ++i) border_by_id.emplace(borders[i].id, i);
    if (border && !border_by_id.count(*border)) throw ConfigError("no border with id " + std::to_string(*border));

    const pipeline::Outcome outcome = mode == TestMode::negative_control ? pipeline::Outcome::tree_count : config.statistic;
    const pipeline::EventIndex index(in.events);
    const std::size_t nb = config.buffers.size();

    // Streets each width needs, so every null statistic is computed once.
    std::vector<std::set<int>> needed(nb);
    for (const auto& r : cache.records) {
        if (border && r.border_id != *border) continue;
        const auto d = static_cast<std::size_t>(
            std::find(config.buffers.begin(), config.buffers.end(), r.set.delta) - config.buffers.begin());
        if (d >= nb) throw DataError("match cache lists a width missing from the configuration");
        for (int id : r.set.street_ids) needed[d].insert(id);
    }
    std::set<int> all_needed;
    for (const auto& s : needed) all_needed.insert(s.begin(), s.end());
    const std::vector<int> street_list(all_needed.begin(), all_needed.end());
    for (int id : street_list) {
        if (!cand_by_id.count(id)) throw DataError("cached street " + std::to_string(id) + " is not a current candidate");
    }

    std::vector<std::vector<pipeline::SiteStatistic>> street_stats(street_list.size());
    std::vector<std::vector<pipeline::SiteStatistic>> border_stats(borders.size());
    const auto total = static_cast<std::ptrdiff_t>(street_list.size() + borders.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(config.threads > 0 ? config.threads : omp_get_max_threads())
#endif
    for (std::ptrdiff_t i = 0; i < total; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (k < borders.size()) {
            if (border && borders[k].id != *border) continue;
            const auto counts =
                pipeline::count_site(borders[k].buffer, config.buffers, index, config.attribution, borders[k].regions);
            for (std::size_t d = 0; d < nb; ++d) {
                border_stats[k].push_back(pipeline::site_statistic(counts, d, outcome, config.order));
            }
        } else {
            const auto& c = candidates[cand_by_id.at(street_list[k - borders.size()])];
            const std::size_t nv = valid_widths(c, config.buffers);
            const auto counts =
                pipeline::count_site(c.buffer(config.buffers[nv - 1]), std::span(config.buffers.data(), nv), index);
            auto& s = street_stats[k - borders.size()];
            for (std::size_t d = 0; d < nv; ++d) s.push_back(pipeline::site_statistic(counts, d, outcome, config.order));
        }
    }
    std::map<int, std::size_t> street_pos;
    for (std::size_t i = 0; i < street_list.size(); ++i) street_pos.emplace(street_list[i], i);
    auto street_stat = [&](int id, std::size_t d) -> const pipeline::SiteStatistic& {
        const auto& s = street_stats[street_pos.at(id)];
        if (d >= s.size()) throw DataError("cached street " + std::to_string(id) + " is not valid at this width");
        return s[d];
    };

    const bool json_out = out.extension() == ".json";
    std::size_t tested = 0, degenerate = 0;

    if (mode == TestMode::global) {
        std::ostringstream csv;
        nlohmann::json rows = nlohmann::json::array();
        csv << "config_hash,delta,observed,p_value,reject,replicates,dropped,naive_p,naive_reject,borders,excluded\n";
        for (std::size_t d = 0; d < nb; ++d) {
            std::vector<double> observed, naive;
            std::vector<std::vector<double>> nulls;
            std::size_t excluded = 0;
            for (const auto& r : cache.records) {
                if (r.set.delta != config.buffers[d]) continue;
                const auto& s = border_stats[border_by_id.at(r.border_id)][d];
                ++tested;
                if (!s.ok || r.set.size() == 0) {
                    ++degenerate;
                    ++excluded;
                    continue;
                }
                observed.push_back(s.value);
                naive.push_back(s.naive_p);
                std::vector<double> v;
                for (int id : r.set.street_ids) {
                    const auto& ns = street_stat(id, d);
                    v.push_back(ns.ok ? ns.value : kNaN);
                }
                nulls.push_back(std::move(v));
            }
            if (excluded) log << "warning: " << excluded << " borders without a statistic at " << num(config.buffers[d]) << " ft\n";
            if (observed.empty()) {
                log << "warning: no usable border at " << num(config.buffers[d]) << " ft\n";
                continue;
            }
            inference::GlobalResult g;
            try {
                g = inference::global_test(observed, nulls, config.alpha, naive);
            } catch (const UndefinedTestError& e) {
                log << "warning: " << e.what() << " at " << num(config.buffers[d]) << " ft\n";
                continue;
            }
            g.delta = config.buffers[d];
            csv << hash << ',' << num(g.delta) << ',' << num(g.observed) << ',' << num(g.p_value) << ',' << g.reject << ','
                << g.replicates << ',' << g.dropped << ',' << num(g.naive_p) << ',' << g.naive_reject << ','
                << observed.size() << ',' << excluded << '\n';
            rows.push_back({{"config_hash", hash},
                            {"delta", g.delta},
                            {"observed", json_num(g.observed)},
                            {"p_value", json_num(g.p_value)},
                            {"reject", g.reject},
                            {"replicates", g.replicates},
                            {"dropped", g.dropped},
                            {"naive_p", json_num(g.naive_p)},
                            {"naive_reject", g.naive_reject},
                            {"borders", observed.size()},
                            {"excluded", excluded}});
        }
        write_file(out, json_out ? rows.dump(2) + "\n" : csv.str());
    } else {
        std::ostringstream csv, nulls_csv;
        nlohmann::json rows = nlohmann::json::array();
        csv << "config_hash,mode,delta,border_id,region_1,region_0,observed,se,p_value,naive_p,quantile,reject,"
               "reject_quantile,naive_reject,b_used,failed_fits,masked_months,low_confidence,status\n";
        nulls_csv << "config_hash,delta,border_id,rank,street_id,value\n";
        const char* mode_name = mode == TestMode::negative_control ? "negative_control" : "border";
        for (const auto& r : cache.records) {
            if (border && r.border_id != *border) continue;
            const auto d = static_cast<std::size_t>(
                std::find(config.buffers.begin(), config.buffers.end(), r.set.delta) - config.buffers.begin());
            const auto& obs = border_stats[border_by_id.at(r.border_id)][d];
            std::vector<pipeline::SiteStatistic> nulls;
            for (std::size_t k = 0; k < r.set.street_ids.size(); ++k) {
                const auto& ns = street_stat(r.set.street_ids[k], d);
                nulls.push_back(ns);
                nulls_csv << hash << ',' << num(r.set.delta) << ',' << r.border_id << ',' << k + 1 << ','
                          << r.set.street_ids[k] << ',' << (ns.ok ? num(ns.value) : "") << '\n';
            }
            ++tested;
            inference::TestResult t;
            t.border_id = r.border_id;
            t.delta = r.set.delta;
            t.observed = obs.value;
            t.se = obs.se;
            t.naive_p = obs.naive_p;
            t.p_value = kNaN;
            t.quantile = kNaN;
            std::string status = "ok";
            if (r.set.size() == 0) {
                status = r.set.warning.empty() ? "no matches" : r.set.warning;
            } else {
                try {
                    t = inference::test_against_null(r.border_id, r.set.delta, obs, nulls, config.alpha, config.rule);
                } catch (const Error& e) {
                    status = e.what();
                }
            }
            if (status != "ok") ++degenerate;
            if (t.low_confidence) log << "warning: border " << r.border_id << " at " << num(t.delta) << " ft: "
                                      << t.failed_fits << " of " << nulls.size() << " null fits failed\n";
            std::replace(status.begin(), status.end(), ',', ';');
            csv << hash << ',' << mode_name << ',' << num(t.delta) << ',' << r.border_id << ',' << r.regions.first << ','
                << r.regions.second << ',' << num(t.observed) << ',' << num(t.se) << ',' << num(t.p_value) << ','
                << num(t.naive_p) << ',' << num(t.quantile) << ',' << t.reject << ',' << t.reject_quantile << ','
                << t.naive_reject << ',' << t.b_used << ',' << t.failed_fits << ',' << t.masked_months << ','
                << t.low_confidence << ',' << status << '\n';
            rows.push_back({{"config_hash", hash},
                            {"mode", mode_name},
                            {"delta", t.delta},
                            {"border_id", r.border_id},
                            {"region_1", r.regions.first},
                            {"region_0", r.regions.second},
                            {"observed", json_num(t.observed)},
                            {"se", json_num(t.se)},
                            {"p_value", json_num(t.p_value)},
                            {"naive_p", json_num(t.naive_p)},
                            {"quantile", json_num(t.quantile)},
                            {"reject", t.reject},
                            {"reject_quantile", t.reject_quantile},
                            {"naive_reject", t.naive_reject},
                            {"b_used", t.b_used},
                            {"failed_fits", t.failed_fits},
                            {"masked_months", t.masked_months},
                            {"low_confidence", t.low_confidence},
                            {"status", status}});
        }
        write_file(out, json_out ? rows.dump(2) + "\n" : csv.str());
        fs::path nulls_path = out;
        nulls_path.replace_extension(".nulls.csv");
        write_file(nulls_path, nulls_csv.str());
    }
    log << "wrote " << out.string() << '\n';

    if (tested > 0 && static_cast<double>(degenerate) > config.degenerate_threshold * static_cast<double>(tested)) {
        log << "error: " << degenerate << " of " << tested << " border tests had no usable statistic (threshold "
            << num(config.degenerate_threshold) << ")\n";
        return kExitDegenerate;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// plotdata

std::vector<std::size_t> histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
    if (bins == 0) throw InvalidArgument("histogram: need at least one bin");
    if (!(hi > lo)) throw InvalidArgument("histogram: empty range");
    std::vector<std::size_t> counts(bins, 0);
    for (double v : values) {
        if (!std::isfinite(v) || v < lo || v > hi) continue;
        auto k = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
        counts[std::min(k, bins - 1)] += 1;
    }
    return counts;
}

int cmd_plotdata(const fs::path& results, const std::optional<fs::path>& nulls, const fs::path& out_dir, double alpha,
                 std::ostream& log) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
    constexpr std::size_t kBins = 20;
    const CsvTable t = read_csv(results);
    const int c_hash = t.column("config_hash"), c_scen = t.column("scenario"), c_delta = t.column("delta");
    const int c_p = t.column("p_value"), c_naive = t.column("naive_p"), c_test = t.column("test");
    const int c_border = t.column("border_id"), c_obs = t.column("observed");
    if (!t.header.empty() && (c_delta < 0 || c_p < 0)) {
        throw DataError(results.string() + " has no delta/p_value columns");
    }

    // Group key: (config hash, scenario, delta). Global rows of a simulation
    // file are kept out of the individual histograms.
    using Key = std::tuple<std::string, std::string, double>;
    std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
    std::map<std::pair<double, int>, double> observed;
    for (const auto& row : t.rows) {
        if (c_test >= 0 && cell_text(row, c_test) != "individual") continue;
        const Key k{cell_text(row, c_hash), cell_text(row, c_scen), cell_number(row, c_delta)};
        auto& g = groups[k];
        g.first.push_back(cell_number(row, c_p));
        g.second.push_back(cell_number(row, c_naive));
        if (c_border >= 0 && c_obs >= 0) {
            observed[{cell_number(row, c_delta), static_cast<int>(cell_number(row, c_border))}] = cell_number(row, c_obs);
        }
    }

    std::ostringstream hist, curve;
    hist << "config_hash,scenario,delta,procedure,bin,lo,hi,count\n";
    curve << "config_hash,scenario,delta,n,corrected,naive\n";
    for (const auto& [k, g] : groups) {
        const auto& [hash, scen, delta] = k;
        for (const auto& [name, values] : {std::pair{"corrected", &g.first}, std::pair{"naive", &g.second}}) {
            const auto counts = histogram(*values, 0.0, 1.0, kBins);
            for (std::size_t b = 0; b < kBins; ++b) {
                hist << hash << ',' << scen << ',' << num(delta) << ',' << name << ',' << b + 1 << ','
                     << num(static_cast<double>(b) / kBins) << ',' << num(static_cast<double>(b + 1) / kBins) << ','
                     << counts[b] << '\n';
            }
        }
        auto rate = [&](const std::vector<double>& v, std::size_t& n) {
            std::size_t r = 0;
            n = 0;
            for (double p : v) {
                if (!std::isfinite(p)) continue;
                ++n;
                r += p <= alpha;
            }
            return n ? static_cast<double>(r) / static_cast<double>(n) : kNaN;
        };
        std::size_t n_c = 0, n_n = 0;
        const double rc = rate(g.first, n_c);
        const double rn = rate(g.second, n_n);
        curve << hash << ',' << scen << ',' << num(delta) << ',' << n_c << ',' << num(rc) << ',' << num(rn) << '\n';
    }
    write_file(out_dir / "pvalue_hist.csv", hist.str());
    write_file(out_dir / "rejection_curve.csv", curve.str());

    if (nulls) {
        const CsvTable n = read_csv(*nulls);
        const int n_hash = n.column("config_hash"), n_delta = n.column("delta"), n_border = n.column("border_id");
        const int n_value = n.column("value");
        std::map<std::tuple<std::string, double, int>, std::vector<double>> by_border;
        for (const auto& row : n.rows) {
            by_border[{cell_text(row, n_hash), cell_number(row, n_delta), static_cast<int>(cell_number(row, n_border))}]
                .push_back(cell_number(row, n_value));
        }
        std::ostringstream nh;
        nh << "config_hash,delta,border_id,bin,lo,hi,count,observed\n";
        for (const auto& [k, values] : by_border) {
            const auto& [hash, delta, id] = k;
            const auto it = observed.find({delta, id});
            const double obs = it == observed.end() ? kNaN : it->second;
            double lo = INFINITY, hi = -INFINITY;
            for (double v : values) {
                if (!std::isfinite(v)) continue;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (std::isfinite(obs)) {
                lo = std::min(lo, obs);
                hi = std::max(hi, obs);
            }
            if (!(lo <= hi)) continue;
            if (!(hi > lo)) {
                lo -= 0.5;
                hi += 0.5;
            }
            const auto counts = histogram(values, lo, hi, kBins);
            const double w = (hi - lo) / kBins;
            for (std::size_t b = 0; b < kBins; ++b) {
                nh << hash << ',' << num(delta) << ',' << id << ',' << b + 1 << ',' << num(lo + w * b) << ','
                   << num(lo + w * (b + 1)) << ',' << counts[b] << ',' << num(obs) << '\n';
            }
        }
        write_file(out_dir / "null_hist.csv", nh.str());
    }
    log << "wrote plot data for " << groups.size() << " groups to " << out_dir.string() << '\n';
    return kExitOk;
}

} // namespace geordd::cli
