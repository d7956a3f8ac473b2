#pragma once

// Run configuration shared by every subcommand: a JSON file, flag overrides
// on top, and a content hash stamped on every output row.

#include "geordd/ingest.hpp"
#include "geordd/inference.hpp"
#include "geordd/nullstreets.hpp"
#include "geordd/pipeline.hpp"
#include "geordd/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace geordd::cli {

struct Paths {
    std::string events;     // CSV; a kind column may mix arrests, crimes and trees
    std::string crimes;     // optional separate crime CSV
    std::string trees;      // optional separate tree CSV
    std::string precincts;  // GeoJSON
    std::string streets;    // GeoJSON
    std::string cache_dir = ".geordd-cache";
};

struct SimulationConfig {
    int grid = 6;                 // n x n precincts
    double precinct_size = 6000;  // feet
    std::size_t datasets = 200;
    std::vector<double> buffers{300, 500, 700, 900, 1100, 1300};
    double crime_multiplier = 2.0;
    double tree_intensity = 0.05;  // trees per cell over the whole window, for exported datasets
    double cell = 100.0;
    int months = 108;
    simulate::ScenarioSpec scenario;
};

struct RunConfig {
    Paths paths;
    ingest::StudyWindow window;
    std::vector<double> buffers{300, 400, 500, 600, 700, 800, 900, 1000, 1100, 1200, 1300};
    int order = 1;
    std::size_t b = 250;
    double alpha = 0.05;
    std::uint64_t seed = 20240601;
    pipeline::Attribution attribution = pipeline::Attribution::location;
    pipeline::Outcome statistic = pipeline::Outcome::arrest_rate;
    inference::DecisionRule rule = inference::DecisionRule::add_one_p_value;
    ingest::CsvSchema csv;
    std::string region_id_property = "precinct";
    std::string street_id_property = "id";
    nullstreets::CandidateOptions candidates;
    bool non_overlapping = false;
    /// cmd_test exits with code 4 when more than this fraction of borders
    /// has no usable statistic.
    double degenerate_threshold = 0.1;
    int threads = 0;
    SimulationConfig simulation;

    /// Throws ConfigError.
    void validate() const;
};

/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

/// Hex FNV-1a of the canonical JSON form.
std::string config_hash(const RunConfig& c);

/// "300,500,700", "300..1300" (step 100) or "300..1300:200".
std::vector<double> parse_buffer_list(std::string_view text);

} // namespace geordd::cli
