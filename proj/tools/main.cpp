// geordd: border tests with matched null streets.
//
//   geordd simulate [--scenario constant,random,...] [--export DIR]
//   geordd match --config run.json
//   geordd test  --config run.json [--border ID | --all | --global | --negative-control]
//   geordd plotdata --results results.csv [--nulls results.nulls.csv]

#include "geordd/cli.hpp"
#include "geordd/error.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace geordd;

namespace {

struct Overrides {
    std::string config;
    std::string buffers;
    std::optional<std::size_t> b;
    std::optional<double> alpha;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> datasets;
    std::optional<int> threads;
    std::string cache_dir;
};

void add_common(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config, "JSON run configuration");
    app->add_option("--buffers", o.buffers, "buffer widths in feet: 300,500 or 300..1300[:step]");
    app->add_option("--b", o.b, "null streets per border");
    app->add_option("--alpha", o.alpha, "significance level");
    app->add_option("--seed", o.seed, "master seed");
    app->add_option("--threads", o.threads, "worker threads (0 = all)");
    app->add_option("--cache-dir", o.cache_dir, "match cache directory");
}

cli::RunConfig resolve(const Overrides& o, bool simulation) {
    cli::RunConfig c = o.config.empty() ? cli::RunConfig{} : cli::load_config(o.config);
    if (!o.buffers.empty()) {
        (simulation ? c.simulation.buffers : c.buffers) = cli::parse_buffer_list(o.buffers);
    }
    if (o.b) c.b = *o.b;
    if (o.alpha) c.alpha = *o.alpha;
    if (o.seed) c.seed = *o.seed;
    if (o.datasets) c.simulation.datasets = *o.datasets;
    if (o.threads) c.threads = *o.threads;
    if (!o.cache_dir.empty()) c.paths.cache_dir = o.cache_dir;
    c.validate();
    return c;
}

std::vector<simulate::ScenarioKind> parse_scenarios(const std::string& text) {
    std::vector<simulate::ScenarioKind> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto k = simulate::parse_scenario_kind(item);
        if (!k) throw ConfigError("unknown scenario '" + item + "'");
        out.push_back(*k);
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Border discontinuity tests with matched null streets"};
    app.require_subcommand(1);

    Overrides o;
    std::string out;

    auto* sim = app.add_subcommand("simulate", "run the synthetic grid-city experiments");
    add_common(sim, o);
    std::string scenarios = "constant,random,spatial,precinct_effect";
    std::string export_dir;
    sim->add_option("--scenario", scenarios, "comma-separated scenarios");
    sim->add_option("--datasets", o.datasets, "datasets per scenario");
    sim->add_option("--export", export_dir, "write one synthetic dataset and its config instead");
    sim->add_option("--out", out, "output directory")->capture_default_str();

    auto* match = app.add_subcommand("match", "match null streets to every border and cache them");
    add_common(match, o);

    auto* test = app.add_subcommand("test", "test borders against their cached matches");
    add_common(test, o);
    std::optional<int> border;
    bool all = false, global = false, negative = false;
    test->add_option("--border", border, "test one border");
    test->add_flag("--all", all, "test every border");
    test->add_flag("--global", global, "joint test over all borders");
    test->add_flag("--negative-control", negative, "test tree counts instead of arrests");
    test->add_option("--out", out, "results file (.csv or .json)");

    auto* plot = app.add_subcommand("plotdata", "histograms and rejection curves from results");
    std::string results, nulls;
    double plot_alpha = 0.05;
    plot->add_option("--results", results, "results CSV")->required();
    plot->add_option("--nulls", nulls, "matched null statistics CSV");
    plot->add_option("--alpha", plot_alpha, "significance level");
    plot->add_option("--out", out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : cli::kExitConfig;
    }

    try {
        if (sim->parsed()) {
            const auto config = resolve(o, true);
            if (!export_dir.empty()) return cli::cmd_export(config, export_dir, std::cerr);
            const auto kinds = parse_scenarios(scenarios);
            return cli::cmd_simulate(config, kinds, out.empty() ? "." : out, std::cerr);
        }
        if (match->parsed()) return cli::cmd_match(resolve(o, false), std::cerr);
        if (test->parsed()) {
            if (int(border.has_value()) + int(all) + int(global) + int(negative) != 1) {
                throw ConfigError("choose exactly one of --border, --all, --global, --negative-control");
            }
            const auto mode = border ? cli::TestMode::border
                              : all  ? cli::TestMode::all
                              : global ? cli::TestMode::global
                                       : cli::TestMode::negative_control;
            if (out.empty()) out = global ? "global.csv" : "results.csv";
            return cli::cmd_test(resolve(o, false), mode, border, out, std::cerr);
        }
        if (plot->parsed()) {
            std::optional<std::filesystem::path> n;
            if (!nulls.empty()) n = nulls;
            return cli::cmd_plotdata(results, n, out.empty() ? "." : out, plot_alpha, std::cerr);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return cli::kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return cli::kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
