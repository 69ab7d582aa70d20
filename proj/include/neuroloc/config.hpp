#pragma once

// Experiment configuration: TOML or JSON files, two built-in protocols, validation
// and a stable content hash.

#include "neuroloc/deep_prior.hpp"
#include "neuroloc/headmodel.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace neuroloc {

struct HeadModelConfig {
    double sphere_radius_mm = 90.0;
    double region_radius_mm = 70.0;
    double grid_spacing_mm = 10.0;
    int n_sensors = 60;
    double sensor_shell_radius_mm = 120.0;
    double coverage_fraction = 0.5;
    double gradiometer_baseline_mm = 0.0;
    /// Points closer than this to the sphere center are dropped; the center itself is
    /// magnetically silent and has no depth weight.
    double min_source_radius_mm = 1.0;
};

struct SourceConfig {
    Vec3 nearest_to = Vec3(0.0, 0.0, 50.0);
    /// Defaults to 50 nAm tangential to the sphere at the dipole location.
    std::optional<Vec3> moment_nam;
    double amplitude_nam = 50.0;
    std::string label = "dipole";
};

struct NoiseConfig {
    double target_psnr_db = 21.6;  // +inf for a noiseless observation
    std::uint64_t seed = 1;
    std::string shape = "identity";  // identity | diagonal | full
    std::vector<double> diagonal;    // shape = diagonal
    int estimate_from_draws = 0;
};

/// Optional per-solver overrides of the deep-prior defaults.
struct DeepPriorOverrides {
    std::optional<int> iterations;
    std::optional<double> learning_rate;
    std::optional<double> init_scale;
    std::optional<int> snapshot_every;
    std::optional<double> beta1, beta2, epsilon;
};

struct SolverConfig {
    std::string method;  // mne | sloreta | deep_prior
    std::vector<double> lambda_grid;
    std::vector<double> p_grid{0.0};
    DeepPriorOverrides deep_prior;
};

struct ExperimentConfig {
    std::string name = "experiment";
    HeadModelConfig headmodel;
    SourceConfig source;
    NoiseConfig noise;
    std::vector<SolverConfig> solvers;
    std::vector<std::uint64_t> seeds{1};
    std::string output_dir = "neuroloc-out";
};

/// Throws std::invalid_argument describing the first problem found.
void validate(const ExperimentConfig& config);

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Reads `.toml` or `.json` by extension.
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a 64 of the canonical JSON form, excluding output_dir. Hex string.
std::string config_hash(const ExperimentConfig& config);

/// "shallow-analog" (dipole at 0.75 region radius) or "deep-analog" (0.35).
ExperimentConfig builtin_config(std::string_view name);
std::vector<std::string> builtin_config_names();

/// Logarithmic grid of `count` points from `lo` to `hi`, optionally led by 0.
std::vector<double> log_grid(double lo, double hi, int count, bool include_zero = false);

/// DeepPriorConfig defaults with the solver overrides applied.
DeepPriorConfig deep_prior_config(const DeepPriorOverrides& overrides, double lambda, double p,
                                  std::uint64_t seed);

/// Parses the TOML subset used by experiment files into JSON: tables, arrays of
/// tables, dotted table headers, strings, integers, floats (including inf/nan),
/// booleans, nested arrays and inline tables.
nlohmann::json parse_toml(std::string_view text);

}  // namespace neuroloc
