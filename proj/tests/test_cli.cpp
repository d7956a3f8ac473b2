#include "geordd/cli.hpp"
#include "geordd/error.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

using namespace geordd;
using namespace geordd::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() { return fs::temp_directory_path() / ("geordd-test-cli-" + std::to_string(::getpid())); }

struct RemoveScratch {
    ~RemoveScratch() {
        std::error_code ec;
        fs::remove_all(scratch_root(), ec);
    }
} remove_scratch;

fs::path scratch(const std::string& name) {
    const fs::path p = scratch_root() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// A 3x3 grid city (12 borders) with three years of data, exported once.
RunConfig fixture(simulate::ScenarioKind kind = simulate::ScenarioKind::constant, double spread = 0.5) {
    RunConfig c;
    c.simulation.grid = 3;
    c.simulation.scenario.kind = kind;
    c.simulation.scenario.precinct_spread = spread;
    c.window.end = {2012, 12, 31};
    c.seed = 31;
    const fs::path dir = scratch(std::string("data-") + std::string(simulate::to_string(kind)));
    std::ostringstream log;
    REQUIRE(cmd_export(c, dir, log) == kExitOk);
    RunConfig out = load_config(dir / "config.json");
    out.buffers = {300, 700, 1100};
    out.b = 10;
    out.paths.cache_dir = (dir / "cache").string();
    return out;
}

const RunConfig& constant_fixture() {
    static const RunConfig c = fixture();
    return c;
}

} // namespace

TEST_CASE("config defaults, overrides and validation") {
    const RunConfig d;
    CHECK(d.buffers.size() == 11);
    CHECK(d.buffers.front() == 300);
    CHECK(d.buffers.back() == 1300);
    CHECK(d.b == 250);
    CHECK(d.alpha == 0.05);
    CHECK(d.order == 1);
    CHECK(d.statistic == pipeline::Outcome::arrest_rate);

    const auto c = config_from_json({{"b", 40}, {"alpha", 0.1}, {"window", {{"start", "2011-01-01"}}}});
    CHECK(c.b == 40);
    CHECK(c.alpha == 0.1);
    CHECK(c.window.start.year == 2011);
    CHECK_THROWS_AS(config_from_json({{"bee", 40}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"paths", {{"event", "x"}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"alpha", 1.5}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"b", 0}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"buffers", {500, 300}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"rule", "maybe"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"b", "many"}}), ConfigError);

    const auto back = config_from_json(to_json(c));
    CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("config hash ignores where the cache lives and how many threads run") {
    RunConfig a, b;
    b.paths.cache_dir = "/elsewhere";
    b.threads = 7;
    CHECK(config_hash(a) == config_hash(b));
    b.alpha = 0.01;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a).size() == 16);
}

TEST_CASE("buffer lists") {
    CHECK(parse_buffer_list("300..1300").size() == 11);
    CHECK(parse_buffer_list("300..1300:200") == std::vector<double>{300, 500, 700, 900, 1100, 1300});
    CHECK(parse_buffer_list("300,500,900") == std::vector<double>{300, 500, 900});
    CHECK(parse_buffer_list("450") == std::vector<double>{450});
    CHECK_THROWS_AS(parse_buffer_list(""), ConfigError);
    CHECK_THROWS_AS(parse_buffer_list("500,300"), ConfigError);
    CHECK_THROWS_AS(parse_buffer_list("300..x"), ConfigError);
    CHECK_THROWS_AS(parse_buffer_list("0,300"), ConfigError);
}

TEST_CASE("histogram conserves counts") {
    const std::vector<double> v{0.0, 0.05, 0.5, 0.999, 1.0, -0.1, 1.2, NAN};
    const auto h = histogram(v, 0.0, 1.0, 20);
    CHECK(h.size() == 20);
    CHECK(h[0] == 1);
    CHECK(h[1] == 1);
    CHECK(h[10] == 1);
    CHECK(h[19] == 2);
    CHECK_THROWS_AS(histogram(v, 1.0, 1.0, 20), InvalidArgument);
    CHECK_THROWS_AS(histogram(v, 0.0, 1.0, 0), InvalidArgument);
}

TEST_CASE("export round-trips the grid city through GeoJSON and CSV") {
    const auto& c = constant_fixture();
    std::ostringstream log;
    const Inputs in = load_inputs(c, log);
    CHECK(in.geometry.geometry.regions.size() == 9);
    CHECK(in.geometry.geometry.adjacency.size() == 12);
    CHECK(in.events.months() == 36);
    CHECK(in.events.filtered(ingest::EventKind::crime).total() > in.events.filtered(ingest::EventKind::arrest).total());
    CHECK(in.events.filtered(ingest::EventKind::tree).total() > 0);
    CHECK(in.hash == load_inputs(c, log).hash);
}

TEST_CASE("match writes one set per border and width, then hits the cache") {
    const auto& c = constant_fixture();
    std::ostringstream log;
    REQUIRE(cmd_match(c, log) == kExitOk);
    std::ostringstream log2;
    const Inputs in = load_inputs(c, log2);
    const fs::path path = match_cache_path(c, match_cache_key(c, in.hash));
    REQUIRE(fs::exists(path));
    const auto cache = load_match_cache(path);
    CHECK(cache.records.size() == 12 * c.buffers.size());
    for (const auto& r : cache.records) {
        CHECK(r.b_used == 10);
        CHECK(r.set.size() == 10);
        CHECK(std::is_sorted(r.set.distances.begin(), r.set.distances.end()));
    }
    const auto stamp = fs::last_write_time(path);
    std::ostringstream again;
    CHECK(cmd_match(c, again) == kExitOk);
    CHECK(again.str().find("cache hit") != std::string::npos);
    CHECK(fs::last_write_time(path) == stamp);

    SUBCASE("the cache directory can come from the environment") {
        const fs::path env_dir = scratch("env-cache");
        ::setenv("GEORDD_CACHE_DIR", env_dir.c_str(), 1);
        CHECK(cache_root(c) == env_dir);
        ::unsetenv("GEORDD_CACHE_DIR");
        CHECK(cache_root(c) == fs::path(c.paths.cache_dir));
    }
}

TEST_CASE("B larger than the pool is clamped with a warning") {
    RunConfig c = constant_fixture();
    c.b = 100000;
    c.buffers = {1100};
    std::ostringstream log;
    REQUIRE(cmd_match(c, log) == kExitOk);
    CHECK(log.str().find("only ") != std::string::npos);
    std::ostringstream quiet;
    const auto cache = load_match_cache(match_cache_path(c, match_cache_key(c, load_inputs(c, quiet).hash)));
    for (const auto& r : cache.records) {
        CHECK(r.b_requested == 100000);
        CHECK(r.b_used < 100000);
        CHECK(r.b_used == cache.records.front().b_used);
        CHECK(r.b_used > 0);
    }
}

TEST_CASE("test modes write hashed, reproducible rows") {
    const auto& c = constant_fixture();
    std::ostringstream log;
    REQUIRE(cmd_match(c, log) == kExitOk);
    const fs::path out = scratch("test-out");
    const std::string hash = config_hash(c);

    REQUIRE(cmd_test(c, TestMode::all, std::nullopt, out / "all.csv", log) == kExitOk);
    const auto rows = lines(slurp(out / "all.csv"));
    REQUIRE(rows.size() == 1 + 12 * c.buffers.size());
    CHECK(rows[0].rfind("config_hash,mode,delta,border_id", 0) == 0);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].rfind(hash + ",border,", 0) == 0);
        CHECK(rows[i].substr(rows[i].size() - 3) == ",ok");
    }
    CHECK(lines(slurp(out / "all.nulls.csv")).size() == 1 + 12 * c.buffers.size() * 10);

    REQUIRE(cmd_test(c, TestMode::all, std::nullopt, out / "again.csv", log) == kExitOk);
    CHECK(slurp(out / "all.csv") == slurp(out / "again.csv"));

    REQUIRE(cmd_test(c, TestMode::border, 5, out / "b5.json", log) == kExitOk);
    const auto j = nlohmann::json::parse(slurp(out / "b5.json"));
    REQUIRE(j.size() == c.buffers.size());
    for (const auto& r : j) {
        CHECK(r["border_id"] == 5);
        CHECK(r["p_value"].get<double>() >= 1.0 / 11.0);
        CHECK(r["config_hash"] == hash);
    }
    CHECK_THROWS_AS(cmd_test(c, TestMode::border, 99, out / "x.csv", log), ConfigError);

    REQUIRE(cmd_test(c, TestMode::global, std::nullopt, out / "global.csv", log) == kExitOk);
    const auto g = lines(slurp(out / "global.csv"));
    REQUIRE(g.size() == 1 + c.buffers.size());
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i].find(",10,0,") != std::string::npos);

    REQUIRE(cmd_test(c, TestMode::negative_control, std::nullopt, out / "trees.csv", log) == kExitOk);
    const auto t = lines(slurp(out / "trees.csv"));
    REQUIRE(t.size() == rows.size());
    CHECK(t[1].find(",negative_control,") != std::string::npos);
}

TEST_CASE("test without cached matches points at the match step") {
    RunConfig c = constant_fixture();
    c.paths.cache_dir = scratch("empty-cache").string();
    std::ostringstream log;
    try {
        (void)cmd_test(c, TestMode::all, std::nullopt, scratch("nomatch") / "r.csv", log);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("geordd match") != std::string::npos);
    }
}

TEST_CASE("too many degenerate borders exits with code 4") {
    RunConfig c = constant_fixture();
    c.window.end = {2010, 2, 28};  // two months: no AR(1) fit is possible
    c.paths.cache_dir = scratch("short-cache").string();
    std::ostringstream log;
    REQUIRE(cmd_match(c, log) == kExitOk);
    CHECK(cmd_test(c, TestMode::all, std::nullopt, scratch("short") / "r.csv", log) == kExitDegenerate);
}

TEST_CASE("global test on a precinct-effect city rejects at the smallest p") {
    RunConfig c = fixture(simulate::ScenarioKind::precinct_effect, 1.0);
    c.buffers = {500};
    std::ostringstream log;
    REQUIRE(cmd_match(c, log) == kExitOk);
    const fs::path out = scratch("pe-out") / "global.json";
    REQUIRE(cmd_test(c, TestMode::global, std::nullopt, out, log) == kExitOk);
    const auto j = nlohmann::json::parse(slurp(out));
    REQUIRE(j.size() == 1);
    CHECK(j[0]["p_value"].get<double>() == doctest::Approx(1.0 / 11.0));
    CHECK(j[0]["reject"] == false);  // 1/11 > 0.05: B = 10 cannot reject at 5%
}

TEST_CASE("plotdata: 144 uniform p-values, curves and empty input") {
    const fs::path dir = scratch("plot");
    std::mt19937_64 rng(144);
    std::uniform_real_distribution<double> u(0, 1);
    {
        std::ofstream f(dir / "results.csv");
        f << "config_hash,mode,delta,border_id,observed,p_value,naive_p\n";
        for (double delta : {300.0, 500.0, 700.0}) {
            for (int m = 1; m <= 144; ++m) f << "h," << "border," << delta << ',' << m << ",0.1," << u(rng) << ',' << u(rng) << '\n';
        }
    }
    std::ostringstream log;
    REQUIRE(cmd_plotdata(dir / "results.csv", std::nullopt, dir / "out", 0.05, log) == kExitOk);
    const auto hist = lines(slurp(dir / "out" / "pvalue_hist.csv"));
    REQUIRE(hist.size() == 1 + 3 * 2 * 20);
    std::map<std::string, std::size_t> sums;
    const double sigma = std::sqrt(144 * 0.05 * 0.95);
    for (std::size_t i = 1; i < hist.size(); ++i) {
        const auto cells = ingest::split_csv_line(hist[i]);
        const auto count = std::stoul(cells.back());
        sums[cells[2] + cells[3]] += count;
        // The multinomial bound is checked on one 20-bin histogram only; over
        // all 120 bins some excursion past 3 sigma is expected by chance.
        if (cells[2] == "300" && cells[3] == "corrected") CHECK(std::abs(double(count) - 144.0 / 20) <= 3 * sigma);
    }
    for (const auto& [key, n] : sums) CHECK(n == 144);
    CHECK(lines(slurp(dir / "out" / "rejection_curve.csv")).size() == 1 + 3);

    {
        std::ofstream f(dir / "empty.csv");
        f << "config_hash,mode,delta,border_id,observed,p_value,naive_p\n";
    }
    {
        std::ofstream f(dir / "empty.nulls.csv");
        f << "config_hash,delta,border_id,rank,street_id,value\n";
    }
    REQUIRE(cmd_plotdata(dir / "empty.csv", dir / "empty.nulls.csv", dir / "empty", 0.05, log) == kExitOk);
    for (const char* name : {"pvalue_hist.csv", "rejection_curve.csv", "null_hist.csv"}) {
        const auto l = lines(slurp(dir / "empty" / name));
        CHECK(l.size() == 1);
    }
}

TEST_CASE("plotdata null histograms carry the observed statistic") {
    const auto& c = constant_fixture();
    std::ostringstream log;
    REQUIRE(cmd_match(c, log) == kExitOk);
    const fs::path out = scratch("plot-real");
    REQUIRE(cmd_test(c, TestMode::all, std::nullopt, out / "r.csv", log) == kExitOk);
    REQUIRE(cmd_plotdata(out / "r.csv", out / "r.nulls.csv", out / "plots", 0.05, log) == kExitOk);
    const auto nh = lines(slurp(out / "plots" / "null_hist.csv"));
    REQUIRE(nh.size() == 1 + 12 * c.buffers.size() * 20);
    std::size_t total = 0;
    for (std::size_t i = 1; i <= 20; ++i) {
        const auto cells = ingest::split_csv_line(nh[i]);
        total += std::stoul(cells[6]);
        CHECK_FALSE(cells[7].empty());
    }
    CHECK(total == 10);
}

#ifdef GEORDD_BIN
TEST_CASE("executable exit codes") {
    const std::string bin = GEORDD_BIN;
    const fs::path dir = scratch("exe");
    auto run = [&](const std::string& args) {
        const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("--help") == 0);
    CHECK(run("frobnicate") == 2);
    CHECK(run("test --config " + (dir / "missing.json").string() + " --all") == 2);
    {
        std::ofstream f(dir / "bad.json");
        f << R"({"paths": {"precincts": "/nonexistent.geojson", "events": "/nonexistent.csv"}})";
    }
    CHECK(run("match --config " + (dir / "bad.json").string()) == 3);
    CHECK(run("simulate --scenario nope") == 2);
    CHECK(run("test --all --global") == 2);
    CHECK(run("simulate --datasets 2 --buffers 500 --b 20 --scenario constant --out " + (dir / "sim").string()) == 0);
    CHECK(fs::exists(dir / "sim" / "rates.csv"));
    const std::string first = slurp(dir / "sim" / "rates.csv");
    CHECK(run("simulate --datasets 2 --buffers 500 --b 20 --scenario constant --out " + (dir / "sim").string()) == 0);
    CHECK(slurp(dir / "sim" / "rates.csv") == first);
}
#endif
