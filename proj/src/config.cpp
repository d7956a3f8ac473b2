#include "geordd/config.hpp"

#include "geordd/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>

namespace geordd::cli {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!ok.count(key)) throw ConfigError("unknown configuration key '" + where + "." + key + "'");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ingest::Date read_date(const nlohmann::json& j, const char* key, ingest::Date fallback) {
    if (!j.contains(key)) return fallback;
    const auto s = j.at(key).get<std::string>();
    const auto d = ingest::parse_date(s);
    if (!d) throw ConfigError(std::string("window.") + key + ": cannot parse date '" + s + "'");
    return *d;
}

std::string_view rule_name(inference::DecisionRule r) {
    return r == inference::DecisionRule::add_one_p_value ? "p_value" : "quantile";
}

void validate_buffers(const std::vector<double>& buffers, const std::string& where) {
    if (buffers.empty()) throw ConfigError(where + ": at least one buffer width is required");
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        if (!(buffers[i] > 0.0) || !std::isfinite(buffers[i])) throw ConfigError(where + ": widths must be positive");
        if (i > 0 && !(buffers[i] > buffers[i - 1])) throw ConfigError(where + ": widths must be strictly ascending");
    }
}

double parse_number(std::string_view s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError("cannot parse number '" + std::string(s) + "'");
    return v;
}

} // namespace

void RunConfig::validate() const {
    validate_buffers(buffers, "buffers");
    validate_buffers(simulation.buffers, "simulation.buffers");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
    if (b < 1) throw ConfigError("B must be at least 1");
    if (order < 0) throw ConfigError("order must be non-negative");
    if (window.end < window.start) throw ConfigError("window end precedes its start");
    if (!(degenerate_threshold >= 0.0 && degenerate_threshold <= 1.0)) {
        throw ConfigError("degenerate_threshold must be in [0, 1]");
    }
    if (candidates.margin < 0.0 || candidates.min_length < 0.0) throw ConfigError("candidate options must be non-negative");
    if (threads < 0) throw ConfigError("threads must be non-negative");
    if (simulation.grid < 2) throw ConfigError("simulation.grid must be at least 2");
    if (!(simulation.precinct_size > 0.0)) throw ConfigError("simulation.precinct_size must be positive");
    if (simulation.datasets < 1) throw ConfigError("simulation.datasets must be at least 1");
    if (!(simulation.cell > 0.0)) throw ConfigError("simulation.cell must be positive");
    if (simulation.months < 3) throw ConfigError("simulation.months must be at least 3");
    if (!(simulation.crime_multiplier > 0.0)) throw ConfigError("simulation.crime_multiplier must be positive");
    if (simulation.tree_intensity < 0.0) throw ConfigError("simulation.tree_intensity must be non-negative");
    simulation.scenario.validate();
}

RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    check_keys(j,
               {"paths", "window", "buffers", "order", "b", "alpha", "seed", "attribution", "statistic", "rule", "csv",
                "geometry", "candidates", "degenerate_threshold", "threads", "simulation"},
               "config");
    try {
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            check_keys(p, {"events", "crimes", "trees", "precincts", "streets", "cache_dir"}, "paths");
            read(p, "events", c.paths.events);
            read(p, "crimes", c.paths.crimes);
            read(p, "trees", c.paths.trees);
            read(p, "precincts", c.paths.precincts);
            read(p, "streets", c.paths.streets);
            read(p, "cache_dir", c.paths.cache_dir);
        }
        if (j.contains("window")) {
            const auto& w = j.at("window");
            check_keys(w, {"start", "end"}, "window");
            c.window.start = read_date(w, "start", c.window.start);
            c.window.end = read_date(w, "end", c.window.end);
        }
        read(j, "buffers", c.buffers);
        read(j, "order", c.order);
        read(j, "b", c.b);
        read(j, "alpha", c.alpha);
        read(j, "seed", c.seed);
        if (j.contains("attribution")) {
            const auto s = j.at("attribution").get<std::string>();
            const auto a = pipeline::parse_attribution(s);
            if (!a) throw ConfigError("unknown attribution '" + s + "'");
            c.attribution = *a;
        }
        if (j.contains("statistic")) {
            const auto s = j.at("statistic").get<std::string>();
            const auto o = pipeline::parse_outcome(s);
            if (!o) throw ConfigError("unknown statistic '" + s + "'");
            c.statistic = *o;
        }
        if (j.contains("rule")) {
            const auto s = j.at("rule").get<std::string>();
            if (s == "p_value") {
                c.rule = inference::DecisionRule::add_one_p_value;
            } else if (s == "quantile") {
                c.rule = inference::DecisionRule::quantile_threshold;
            } else {
                throw ConfigError("unknown rule '" + s + "' (expected p_value or quantile)");
            }
        }
        if (j.contains("csv")) {
            const auto& s = j.at("csv");
            check_keys(s, {"date_column", "latitude_column", "longitude_column", "kind_column", "source_region_column"},
                       "csv");
            read(s, "date_column", c.csv.date_column);
            read(s, "latitude_column", c.csv.latitude_column);
            read(s, "longitude_column", c.csv.longitude_column);
            read(s, "kind_column", c.csv.kind_column);
            read(s, "source_region_column", c.csv.source_region_column);
        }
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            check_keys(g, {"region_id_property", "street_id_property"}, "geometry");
            read(g, "region_id_property", c.region_id_property);
            read(g, "street_id_property", c.street_id_property);
        }
        if (j.contains("candidates")) {
            const auto& g = j.at("candidates");
            check_keys(g, {"min_length", "margin", "non_overlapping"}, "candidates");
            read(g, "min_length", c.candidates.min_length);
            read(g, "margin", c.candidates.margin);
            read(g, "non_overlapping", c.non_overlapping);
        }
        read(j, "degenerate_threshold", c.degenerate_threshold);
        read(j, "threads", c.threads);
        if (j.contains("simulation")) {
            const auto& s = j.at("simulation");
            check_keys(s,
                       {"grid", "precinct_size", "datasets", "buffers", "crime_multiplier", "tree_intensity", "cell",
                        "months", "scenario"},
                       "simulation");
            auto& m = c.simulation;
            read(s, "grid", m.grid);
            read(s, "precinct_size", m.precinct_size);
            read(s, "datasets", m.datasets);
            read(s, "buffers", m.buffers);
            read(s, "crime_multiplier", m.crime_multiplier);
            read(s, "tree_intensity", m.tree_intensity);
            read(s, "cell", m.cell);
            read(s, "months", m.months);
            if (s.contains("scenario")) m.scenario = simulate::scenario_from_json(s.at("scenario"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const RunConfig& c) {
    const auto& m = c.simulation;
    return {
        {"paths",
         {{"events", c.paths.events},
          {"crimes", c.paths.crimes},
          {"trees", c.paths.trees},
          {"precincts", c.paths.precincts},
          {"streets", c.paths.streets},
          {"cache_dir", c.paths.cache_dir}}},
        {"window", {{"start", ingest::format_date(c.window.start)}, {"end", ingest::format_date(c.window.end)}}},
        {"buffers", c.buffers},
        {"order", c.order},
        {"b", c.b},
        {"alpha", c.alpha},
        {"seed", c.seed},
        {"attribution", std::string(pipeline::to_string(c.attribution))},
        {"statistic", std::string(pipeline::to_string(c.statistic))},
        {"rule", std::string(rule_name(c.rule))},
        {"csv",
         {{"date_column", c.csv.date_column},
          {"latitude_column", c.csv.latitude_column},
          {"longitude_column", c.csv.longitude_column},
          {"kind_column", c.csv.kind_column},
          {"source_region_column", c.csv.source_region_column}}},
        {"geometry", {{"region_id_property", c.region_id_property}, {"street_id_property", c.street_id_property}}},
        {"candidates",
         {{"min_length", c.candidates.min_length},
          {"margin", c.candidates.margin},
          {"non_overlapping", c.non_overlapping}}},
        {"degenerate_threshold", c.degenerate_threshold},
        {"threads", c.threads},
        {"simulation",
         {{"grid", m.grid},
          {"precinct_size", m.precinct_size},
          {"datasets", m.datasets},
          {"buffers", m.buffers},
          {"crime_multiplier", m.crime_multiplier},
          {"tree_intensity", m.tree_intensity},
          {"cell", m.cell},
          {"months", m.months},
          {"scenario", simulate::to_json(m.scenario)}}},
    };
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("configuration " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
    // Settings that cannot change results stay out of the hash.
    nlohmann::json j = to_json(c);
    j["paths"].erase("cache_dir");
    j.erase("threads");
    return ingest::hex_hash(ingest::content_hash(j.dump()));
}

std::vector<double> parse_buffer_list(std::string_view text) {
    std::vector<double> out;
    if (text.empty()) throw ConfigError("empty buffer list");
    const auto range = text.find("..");
    if (range != std::string_view::npos) {
        const std::string_view lo = text.substr(0, range);
        std::string_view rest = text.substr(range + 2);
        double step = 100.0;
        if (const auto colon = rest.find(':'); colon != std::string_view::npos) {
            step = parse_number(rest.substr(colon + 1));
            rest = rest.substr(0, colon);
        }
        const double a = parse_number(lo), b = parse_number(rest);
        if (!(step > 0.0) || b < a) throw ConfigError("bad buffer range '" + std::string(text) + "'");
        for (int k = 0; a + k * step <= b + 1e-9; ++k) out.push_back(a + k * step);
    } else {
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto comma = text.find(',', start);
            const auto piece = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
            out.push_back(parse_number(piece));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
    }
    validate_buffers(out, "buffers");
    return out;
}

} // namespace geordd::cli
