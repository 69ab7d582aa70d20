#include "neuroloc/harness.hpp"

#include "neuroloc/bundle_io.hpp"
#include "neuroloc/deep_prior.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace neuroloc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

Vec3 default_moment(const Vec3& location, double amplitude) {
    // Tangential: perpendicular to the radial direction, in the local azimuthal plane.
    Vec3 t = Vec3::UnitZ().cross(location);
    if (t.norm() < 1e-9 * std::max(1.0, location.norm())) t = Vec3::UnitX();
    return amplitude * t.normalized();
}

struct CellSpec {
    std::string key;
    std::string method;
    double lambda;
    double p;
    std::optional<std::uint64_t> seed;
    const SolverConfig* solver;
};

std::vector<CellSpec> enumerate_cells(const ExperimentConfig& config) {
    std::vector<CellSpec> cells;
    for (std::size_t s = 0; s < config.solvers.size(); ++s) {
        const auto& solver = config.solvers[s];
        for (std::size_t pi = 0; pi < solver.p_grid.size(); ++pi) {
            for (std::size_t li = 0; li < solver.lambda_grid.size(); ++li) {
                const std::string base = solver.method + "_s" + std::to_string(s) + "_p" + std::to_string(pi) +
                                         "_l" + std::to_string(li);
                if (solver.method != "deep_prior") {
                    cells.push_back({base, solver.method, solver.lambda_grid[li], solver.p_grid[pi], std::nullopt,
                                     &solver});
                    continue;
                }
                for (auto seed : config.seeds) {
                    cells.push_back({base + "_seed" + std::to_string(seed), solver.method, solver.lambda_grid[li],
                                     solver.p_grid[pi], seed, &solver});
                }
            }
        }
    }
    return cells;
}

json row_to_json(const CellRow& r) {
    json j = {{"key", r.key},
              {"method", r.method},
              {"lambda", r.lambda},
              {"p", r.p},
              {"status", r.status},
              {"error_mm", r.error_mm},
              {"argmax", {r.argmax.x(), r.argmax.y(), r.argmax.z()}},
              {"argmax_radius_mm", r.argmax_radius_mm},
              {"runtime_s", r.runtime_s},
              {"estimate_file", r.estimate_file},
              {"trace_file", r.trace_file}};
    j["seed"] = r.seed ? json(*r.seed) : json(nullptr);
    return j;
}

CellRow row_from_json(const json& j) {
    CellRow r;
    r.key = j.at("key").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.lambda = j.at("lambda").get<double>();
    r.p = j.at("p").get<double>();
    if (!j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    r.error_mm = j.at("error_mm").get<double>();
    const auto a = j.at("argmax");
    r.argmax = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    r.argmax_radius_mm = j.at("argmax_radius_mm").get<double>();
    r.runtime_s = j.at("runtime_s").get<double>();
    r.estimate_file = j.at("estimate_file").get<std::string>();
    r.trace_file = j.at("trace_file").get<std::string>();
    return r;
}

CellRow run_cell(const CellSpec& cell, const Scenario& sc, const std::string& hash, const fs::path& out_dir) {
    CellRow row;
    row.key = cell.key;
    row.method = cell.method;
    row.lambda = cell.lambda;
    row.p = cell.p;
    row.seed = cell.seed;

    const auto start = std::chrono::steady_clock::now();
    try {
        CurrentEstimate est;
        if (cell.method == "mne") {
            const DepthWeights w = cell.p > 0.0 ? depth_weights(sc.lead, cell.p) : uniform_weights(sc.lead.n_points());
            est = mne_solve(sc.lead, sc.obs, w, cell.lambda);
        } else if (cell.method == "sloreta") {
            est = sloreta_solve(sc.lead, sc.obs, cell.lambda);
        } else {
            const DepthWeights w = depth_weights(sc.lead, cell.p);
            const DeepPriorConfig dp = deep_prior_config(cell.solver->deep_prior, cell.lambda, cell.p, *cell.seed);
            GeneratorConfig gen;
            gen.init_scale = dp.init_scale;
            GeneratorNetwork net(*sc.space, dp.seed, gen);
            FitResult fitted = fit(net, sc.lead, sc.obs, w, dp);
            est = std::move(fitted.estimate);

            row.trace_file = "traces/" + hash + "_" + cell.key + ".csv";
            std::ostringstream csv;
            fitted.trace.write_csv(csv);
            write_file_atomic(out_dir / row.trace_file, csv.str());
        }
        row.estimate_file = "estimates/" + hash + "_" + cell.key + ".bundle";
        save_estimate(out_dir / row.estimate_file, est);

        const std::size_t k = argmax_point(est);
        row.argmax = sc.space->points[k];
        row.argmax_radius_mm = (row.argmax - sc.sensors->sphere_center).norm();
        row.error_mm = localization_error(row.argmax, sc.truth);
    } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
        row.error_mm = std::numeric_limits<double>::quiet_NaN();
    }
    row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

int worker_count(const RunOptions& options) {
    if (options.workers > 0) return options.workers;
    if (const char* env = std::getenv("NEUROLOC_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

}  // namespace

Scenario build_scenario(const ExperimentConfig& config) {
    const auto& hm = config.headmodel;
    Scenario sc;
    sc.space = std::make_shared<const SourceSpace>(
        build_source_space(hm.sphere_radius_mm, hm.region_radius_mm, hm.grid_spacing_mm)
            .without_center(hm.min_source_radius_mm));
    SensorLayout layout;
    layout.n_sensors = hm.n_sensors;
    layout.shell_radius = hm.sensor_shell_radius_mm;
    layout.sphere_radius = hm.sphere_radius_mm;
    layout.coverage_fraction = hm.coverage_fraction;
    layout.gradiometer_baseline = hm.gradiometer_baseline_mm;
    sc.sensors = std::make_shared<const SensorArray>(build_sensor_array(layout));
    sc.lead = compute_lead_field(sc.space, sc.sensors);

    const Vec3 probe = config.source.nearest_to;
    GroundTruthSource located = make_dipole(*sc.space, probe, Vec3::UnitX(), config.source.label);
    const Vec3 moment = config.source.moment_nam ? *config.source.moment_nam
                                                 : default_moment(located.location, config.source.amplitude_nam);
    sc.truth = make_dipole(*sc.space, probe, moment, config.source.label);

    NoiseSpec noise;
    if (config.noise.shape == "diagonal") {
        noise.shape = NoiseShape::diagonal;
        noise.diagonal = Eigen::Map<const Eigen::VectorXd>(config.noise.diagonal.data(),
                                                           static_cast<Eigen::Index>(config.noise.diagonal.size()));
    }
    noise.estimate_from_draws = config.noise.estimate_from_draws;
    sc.obs = add_noise(forward(sc.lead, sc.truth), config.noise.target_psnr_db, noise, config.noise.seed);
    return sc;
}

bool SweepResult::all_ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const CellRow& r) { return r.ok(); });
}

double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<Series> sweep_series(const SweepResult& result) {
    std::map<std::pair<std::string, double>, std::map<double, std::vector<double>>> groups;
    for (const auto& r : result.rows) {
        if (!r.ok()) continue;
        groups[{r.method, r.p}][r.lambda].push_back(r.error_mm);
    }
    std::vector<Series> out;
    for (const auto& [key, by_lambda] : groups) {
        Series s{key.first, key.second, {}};
        for (const auto& [lambda, errors] : by_lambda) {
            const auto [lo, hi] = std::minmax_element(errors.begin(), errors.end());
            s.points.push_back({lambda, median(errors), *lo, *hi, errors.size()});
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<BestRow> best_rows(const std::vector<CellRow>& rows) {
    SweepResult tmp;
    tmp.rows = rows;
    std::vector<BestRow> best;
    for (const auto& s : sweep_series(tmp)) {
        const SeriesPoint* pick = nullptr;
        for (const auto& pt : s.points) {
            if (!pick || pt.median_mm < pick->median_mm) pick = &pt;
        }
        if (pick) best.push_back({s.method, s.p, pick->lambda, pick->median_mm, pick->n});
    }
    return best;
}

SweepResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    validate(config);
    const std::string hash = config_hash(config);
    const fs::path out_dir = config.output_dir;
    fs::create_directories(out_dir / "cells");

    const Scenario sc = build_scenario(config);
    save_observation(out_dir / "observation.bundle", sc.obs);
    save_lead_field(out_dir / "leadfield.bundle", sc.lead);

    const auto cells = enumerate_cells(config);
    std::vector<CellRow> rows(cells.size());
    std::vector<bool> done(cells.size(), false);

    for (std::size_t i = 0; i < cells.size(); ++i) {
        const fs::path cell_file = out_dir / "cells" / (hash + "_" + cells[i].key + ".json");
        if (!fs::exists(cell_file)) continue;
        try {
            std::ifstream in(cell_file);
            const json j = json::parse(in);
            if (j.at("config_hash").get<std::string>() == hash) {
                rows[i] = row_from_json(j.at("row"));
                done[i] = true;
            }
        } catch (const std::exception&) {
            // Unreadable cell files are recomputed.
        }
    }

    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto work = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            if (done[i]) continue;
            rows[i] = run_cell(cells[i], sc, hash, out_dir);
            const json j = {{"config_hash", hash}, {"row", row_to_json(rows[i])}};
            write_file_atomic(out_dir / "cells" / (hash + "_" + cells[i].key + ".json"), j.dump(2));
            if (!options.quiet) {
                std::lock_guard lock(log_mutex);
                std::cerr << "[" << cells[i].key << "] " << rows[i].status << " error_mm=" << rows[i].error_mm
                          << " (" << std::fixed << std::setprecision(2) << rows[i].runtime_s << " s)\n"
                          << std::defaultfloat;
            }
        }
    };
    const int n_workers = std::min<int>(worker_count(options), static_cast<int>(std::max<std::size_t>(1, cells.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    SweepResult result;
    result.config_hash = hash;
    result.config = config;
    result.truth_location = sc.truth.location;
    result.realized_psnr_db = sc.obs.psnr_db;
    result.rows = std::move(rows);
    result.best = best_rows(result.rows);

    write_file_atomic(out_dir / "results.json", result_to_json(result).dump(2));
    write_file_atomic(out_dir / "results.csv", results_csv(result));
    return result;
}

json result_to_json(const SweepResult& result) {
    json j;
    j["config_hash"] = result.config_hash;
    j["config"] = config_to_json(result.config);
    j["truth_location"] = {result.truth_location.x(), result.truth_location.y(), result.truth_location.z()};
    j["realized_psnr_db"] = std::isfinite(result.realized_psnr_db) ? json(result.realized_psnr_db) : json("inf");
    j["rows"] = json::array();
    for (const auto& r : result.rows) j["rows"].push_back(row_to_json(r));
    j["best"] = json::array();
    for (const auto& b : result.best) {
        j["best"].push_back({{"method", b.method},
                             {"p", b.p},
                             {"lambda", b.lambda},
                             {"median_error_mm", b.median_error_mm},
                             {"n_seeds", b.n_seeds}});
    }
    return j;
}

SweepResult load_results(const fs::path& results_json) {
    std::ifstream in(results_json);
    if (!in) throw std::runtime_error("cannot open " + results_json.string());
    const json j = json::parse(in);

    SweepResult r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = config_from_json(j.at("config"));
    const auto t = j.at("truth_location");
    r.truth_location = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    const auto& psnr = j.at("realized_psnr_db");
    r.realized_psnr_db = psnr.is_number() ? psnr.get<double>() : std::numeric_limits<double>::infinity();
    for (const auto& row : j.at("rows")) {
        CellRow c = row_from_json(row);
        if (!c.ok()) c.error_mm = std::numeric_limits<double>::quiet_NaN();
        r.rows.push_back(std::move(c));
    }
    r.best = best_rows(r.rows);

    const auto& stored = j.at("best");
    if (stored.size() != r.best.size()) throw std::runtime_error("results: best rows do not match the cell rows");
    for (std::size_t i = 0; i < r.best.size(); ++i) {
        const double e = stored[i].at("median_error_mm").get<double>();
        if (std::abs(e - r.best[i].median_error_mm) > 1e-9 * std::max(1.0, std::abs(e))) {
            throw std::runtime_error("results: stored best error for " + r.best[i].method +
                                     " is not the minimum over its grid");
        }
    }
    return r;
}

std::string results_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "method,lambda,p,seed,status,error_mm,argmax_x,argmax_y,argmax_z,argmax_radius_mm\n";
    for (const auto& r : result.rows) {
        std::string status = r.ok() ? "ok" : "error";
        out << r.method << ',' << fmt(r.lambda) << ',' << fmt(r.p) << ',' << (r.seed ? std::to_string(*r.seed) : "")
            << ',' << status << ',' << (r.ok() ? fmt(r.error_mm) : "") << ',' << fmt(r.argmax.x()) << ','
            << fmt(r.argmax.y()) << ',' << fmt(r.argmax.z()) << ',' << fmt(r.argmax_radius_mm) << '\n';
    }
    return out.str();
}

Table emit_table(const SweepResult& result) {
    std::vector<BestRow> rows = result.best;
    std::stable_sort(rows.begin(), rows.end(), [](const BestRow& a, const BestRow& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.median_error_mm != b.median_error_mm) return a.median_error_mm < b.median_error_mm;
        return a.p < b.p;
    });

    Table t;
    std::ostringstream text, csv;
    text << std::left << std::setw(12) << "method" << std::setw(8) << "p" << std::setw(14) << "best_lambda"
         << std::setw(18) << "median_error_mm" << "n_seeds\n";
    csv << "method,p,best_lambda,median_error_mm,n_seeds\n";
    for (const auto& r : rows) {
        text << std::left << std::setw(12) << r.method << std::setw(8) << fmt_short(r.p) << std::setw(14)
             << fmt_short(r.lambda) << std::setw(18) << fmt_short(r.median_error_mm) << r.n_seeds << '\n';
        csv << r.method << ',' << fmt(r.p) << ',' << fmt(r.lambda) << ',' << fmt(r.median_error_mm) << ','
            << r.n_seeds << '\n';
    }
    text << "# config_hash: " << result.config_hash << '\n';
    csv << "# config_hash: " << result.config_hash << '\n';
    t.text = text.str();
    t.csv = csv.str();
    return t;
}

std::string plotdata_csv(const std::vector<Series>& series) {
    std::ostringstream out;
    out << "method,p,lambda,median_mm,min_mm,max_mm,n\n";
    for (const auto& s : series) {
        for (const auto& pt : s.points) {
            out << s.method << ',' << fmt(s.p) << ',' << fmt(pt.lambda) << ',' << fmt(pt.median_mm) << ','
                << fmt(pt.min_mm) << ',' << fmt(pt.max_mm) << ',' << pt.n << '\n';
        }
    }
    return out.str();
}

json plotdata_json(const std::vector<Series>& series) {
    json out = json::array();
    for (const auto& s : series) {
        json pts = json::array();
        for (const auto& pt : s.points) {
            pts.push_back({{"lambda", pt.lambda},
                           {"median_mm", pt.median_mm},
                           {"min_mm", pt.min_mm},
                           {"max_mm", pt.max_mm},
                           {"n", pt.n}});
        }
        out.push_back({{"method", s.method}, {"p", s.p}, {"points", pts}});
    }
    return out;
}

std::array<int, 3> cell_of(const SourceSpace& space, const Vec3& location) {
    const Vec3 rel = (location - space.origin) / space.grid_spacing;
    return {static_cast<int>(std::lround(rel.x())), static_cast<int>(std::lround(rel.y())),
            static_cast<int>(std::lround(rel.z()))};
}

Slices emit_slices(const CurrentEstimate& est, const SourceSpace& space, const GroundTruthSource& truth) {
    if (static_cast<std::size_t>(est.per_point_amplitude.size()) != space.size() || space.size() == 0) {
        throw std::invalid_argument("emit_slices: estimate does not match the source space");
    }
    const auto [nx, ny, nz] = space.grid_dims;
    std::vector<double> volume(space.cell_count(), 0.0);
    for (std::size_t k = 0; k < space.size(); ++k) volume[space.cell_index[k]] = est.per_point_amplitude[k];

    Slices s;
    s.argmax_cell = space.cell_coords(space.cell_index[argmax_point(est)]);
    s.truth_cell = cell_of(space, truth.location);
    const auto [ax, ay, az] = s.argmax_cell;
    auto at = [&](int x, int y, int z) { return volume[space.raster(x, y, z)]; };

    s.xz.resize(nx, nz);
    s.yz.resize(ny, nz);
    s.xy.resize(nx, ny);
    for (int x = 0; x < nx; ++x)
        for (int z = 0; z < nz; ++z) s.xz(x, z) = at(x, ay, z);
    for (int y = 0; y < ny; ++y)
        for (int z = 0; z < nz; ++z) s.yz(y, z) = at(ax, y, z);
    for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) s.xy(x, y) = at(x, y, az);
    return s;
}

void write_slices(const Slices& slices, const fs::path& dir) {
    auto grid_csv = [](const Eigen::MatrixXd& m) {
        std::ostringstream out;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << fmt(m(r, c));
            out << '\n';
        }
        return out.str();
    };
    write_file_atomic(dir / "slice_xz.csv", grid_csv(slices.xz));
    write_file_atomic(dir / "slice_yz.csv", grid_csv(slices.yz));
    write_file_atomic(dir / "slice_xy.csv", grid_csv(slices.xy));

    const auto& t = slices.truth_cell;
    const auto& a = slices.argmax_cell;
    std::ostringstream markers;
    markers << "plane,marker,row,col\n"
            << "xz,truth," << t[0] << ',' << t[2] << '\n'
            << "yz,truth," << t[1] << ',' << t[2] << '\n'
            << "xy,truth," << t[0] << ',' << t[1] << '\n'
            << "xz,argmax," << a[0] << ',' << a[2] << '\n'
            << "yz,argmax," << a[1] << ',' << a[2] << '\n'
            << "xy,argmax," << a[0] << ',' << a[1] << '\n';
    write_file_atomic(dir / "markers.csv", markers.str());
}

}  // namespace neuroloc
