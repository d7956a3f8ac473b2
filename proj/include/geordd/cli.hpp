#pragma once

// Subcommands behind the geordd executable. Each returns the process exit
// code; ConfigError and DataError escape to main, which maps them to 2 and 3.

#include "geordd/config.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace geordd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDegenerate = 4;

enum class TestMode { border, all, global, negative_control };

/// Geometry and every configured event file, projected with the geometry's origin.
struct Inputs {
    ingest::LoadedGeometry geometry;
    ingest::EventSet events;
    std::string hash;  // over the input files' bytes
};
Inputs load_inputs(const RunConfig& config, std::ostream& log);

/// Cache root: $GEORDD_CACHE_DIR when set, else config.paths.cache_dir.
std::filesystem::path cache_root(const RunConfig& config);

struct MatchRecord {
    int border_id = 0;
    ingest::RegionPair regions;
    std::size_t b_requested = 0;
    std::size_t b_used = 0;
    nullstreets::MatchSet set;
};

struct MatchCache {
    std::string key;
    std::vector<MatchRecord> records;  // buffers outer, borders inner
};

/// Depends on the inputs and on the settings that change matching only.
std::string match_cache_key(const RunConfig& config, const std::string& input_hash);
std::filesystem::path match_cache_path(const RunConfig& config, const std::string& key);
void save_match_cache(const MatchCache& cache, const std::filesystem::path& path);
MatchCache load_match_cache(const std::filesystem::path& path);

/// Runs each scenario on the synthetic grid city; writes rates.csv and
/// pvalues.csv into out_dir.
int cmd_simulate(const RunConfig& config, std::span<const simulate::ScenarioKind> scenarios,
                 const std::filesystem::path& out_dir, std::ostream& log);

/// Writes one synthetic grid-city dataset (precincts.geojson, streets.geojson,
/// events.csv) and a config.json that points match and test at it.
int cmd_export(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

int cmd_match(const RunConfig& config, std::ostream& log);

/// Results go to `out` as CSV, or JSON when `out` ends in .json. Per-border
/// modes also write the matched null statistics next to it (<stem>.nulls.csv).
int cmd_test(const RunConfig& config, TestMode mode, std::optional<int> border, const std::filesystem::path& out,
             std::ostream& log);

/// Reads a results CSV from cmd_test or cmd_simulate and writes
/// pvalue_hist.csv, rejection_curve.csv and, given nulls, null_hist.csv.
int cmd_plotdata(const std::filesystem::path& results, const std::optional<std::filesystem::path>& nulls,
                 const std::filesystem::path& out_dir, double alpha, std::ostream& log);

/// Counts of `values` in `bins` equal-width bins over [lo, hi]; the top edge
/// falls in the last bin, values outside are ignored.
std::vector<std::size_t> histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

} // namespace geordd::cli
