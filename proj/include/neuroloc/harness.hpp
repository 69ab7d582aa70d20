#pragma once

// Experiment driver: one simulated observation, every (method, lambda, p, seed)
// cell solved against it, localization errors aggregated into tables, plot series
// and orthogonal slices.

#include "neuroloc/config.hpp"
#include "neuroloc/linear_solvers.hpp"
#include "neuroloc/simulate.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace neuroloc {

/// Head model, source and observation shared by every cell of a sweep.
struct Scenario {
    std::shared_ptr<const SourceSpace> space;
    std::shared_ptr<const SensorArray> sensors;
    LeadField lead;
    GroundTruthSource truth;
    Observation obs;
};

Scenario build_scenario(const ExperimentConfig& config);

struct CellRow {
    std::string key;
    std::string method;
    double lambda = 0.0;
    double p = 0.0;
    std::optional<std::uint64_t> seed;  // deep-prior cells only
    std::string status = "ok";          // "ok" or the error message
    double error_mm = 0.0;
    Vec3 argmax = Vec3::Zero();
    double argmax_radius_mm = 0.0;  // distance of the argmax point from the sphere center
    double runtime_s = 0.0;
    std::string estimate_file;  // relative to the output directory
    std::string trace_file;

    bool ok() const { return status == "ok"; }
};

/// Best lambda of one (method, p) series: minimum over lambda of the median error
/// over seeds. Ties go to the smaller lambda.
struct BestRow {
    std::string method;
    double p = 0.0;
    double lambda = 0.0;
    double median_error_mm = 0.0;
    std::size_t n_seeds = 0;
};

struct SweepResult {
    std::string config_hash;
    ExperimentConfig config;
    Vec3 truth_location = Vec3::Zero();
    double realized_psnr_db = 0.0;
    std::vector<CellRow> rows;
    std::vector<BestRow> best;

    bool all_ok() const;
};

struct RunOptions {
    /// Worker threads; 0 reads NEUROLOC_WORKERS (default 1).
    int workers = 0;
    bool quiet = true;
};

/// Runs every missing cell and writes results.json and results.csv under
/// config.output_dir. Cells already on disk for the same config hash are reused.
/// Cell failures are recorded in the row; config errors throw before any work.
SweepResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

double median(std::vector<double> values);
std::vector<BestRow> best_rows(const std::vector<CellRow>& rows);

nlohmann::json result_to_json(const SweepResult& result);
/// Parses results.json and recomputes the best rows from the cell rows.
SweepResult load_results(const std::filesystem::path& results_json);

/// Columns: method,lambda,p,seed,status,error_mm,argmax_x,argmax_y,argmax_z,argmax_radius_mm.
/// Timing is excluded so identical runs produce identical bytes.
std::string results_csv(const SweepResult& result);

struct Table {
    std::string text;
    std::string csv;
};

/// One row per (method, p): best lambda and its median error, sorted by method then
/// error. The text form ends with a config-hash footer line.
Table emit_table(const SweepResult& result);

struct SeriesPoint {
    double lambda = 0.0;
    double median_mm = 0.0;
    double min_mm = 0.0;
    double max_mm = 0.0;
    std::size_t n = 0;
};

struct Series {
    std::string method;
    double p = 0.0;
    std::vector<SeriesPoint> points;  // lambda ascending
};

std::vector<Series> sweep_series(const SweepResult& result);
/// Columns: method,p,lambda,median_mm,min_mm,max_mm,n.
std::string plotdata_csv(const std::vector<Series>& series);
nlohmann::json plotdata_json(const std::vector<Series>& series);

/// Amplitude planes through the argmax point: xz at its y, yz at its x, xy at its z.
/// Plane "ab" is indexed (a, b): rows follow the first axis, columns the second.
struct Slices {
    Eigen::MatrixXd xz, yz, xy;
    std::array<int, 3> argmax_cell{};
    std::array<int, 3> truth_cell{};
};

Slices emit_slices(const CurrentEstimate& est, const SourceSpace& space, const GroundTruthSource& truth);
/// slice_xz.csv, slice_yz.csv, slice_xy.csv and markers.csv (truth and argmax
/// row/col per plane).
void write_slices(const Slices& slices, const std::filesystem::path& dir);

/// Lattice cell of a location, rounded to the nearest grid index.
std::array<int, 3> cell_of(const SourceSpace& space, const Vec3& location);

}  // namespace neuroloc
