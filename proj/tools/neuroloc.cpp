#include "neuroloc/bundle_io.hpp"
#include "neuroloc/config.hpp"
#include "neuroloc/harness.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace neuroloc;

namespace {

ExperimentConfig resolve_config(const std::string& config_path, const std::string& builtin) {
    if (!builtin.empty()) return builtin_config(builtin);
    return load_config(config_path);
}

const CellRow& find_row(const SweepResult& r, const std::string& method, double lambda, std::optional<double> p,
                        std::optional<std::uint64_t> seed) {
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
    for (const auto& row : r.rows) {
        if (row.method != method || !close(row.lambda, lambda)) continue;
        if (p && !close(row.p, *p)) continue;
        if (seed && row.seed != seed) continue;
        if (!row.ok()) throw std::runtime_error("cell " + row.key + " failed: " + row.status);
        return row;
    }
    throw std::runtime_error("no cell matches method=" + method + " lambda=" + std::to_string(lambda));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dipole localization sweeps: MNE, sLORETA and deep-prior reconstructions"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run every cell of an experiment");
    std::string config_path, builtin, output_override;
    int workers = 0;
    bool verbose = false;
    run->add_option("config", config_path, "experiment file (.toml or .json)");
    run->add_option("--builtin", builtin, "built-in config: shallow-analog | deep-analog");
    run->add_option("-o,--output", output_override, "output directory");
    run->add_option("-j,--workers", workers, "worker threads (default: NEUROLOC_WORKERS or 1)");
    run->add_flag("-v,--verbose", verbose, "log each cell");

    auto* table = app.add_subcommand("table", "best lambda per (method, p)");
    std::string results_path;
    bool as_csv = false;
    table->add_option("results", results_path, "results.json")->required();
    table->add_flag("--csv", as_csv);

    auto* plot = app.add_subcommand("plotdata", "error-versus-lambda series");
    std::string plot_format = "csv";
    plot->add_option("results", results_path, "results.json")->required();
    plot->add_option("--format", plot_format)->check(CLI::IsMember({"csv", "json"}));

    auto* slices = app.add_subcommand("slices", "orthogonal amplitude slices through the argmax");
    std::string method, slice_out = ".";
    double lambda = 0.0;
    std::optional<double> p;
    std::optional<std::uint64_t> seed;
    slices->add_option("results", results_path, "results.json")->required();
    slices->add_option("--method", method)->required();
    slices->add_option("--lambda", lambda)->required();
    slices->add_option("--p", p);
    slices->add_option("--seed", seed);
    slices->add_option("--out", slice_out, "directory for the slice CSVs");

    auto* show = app.add_subcommand("config", "print a built-in config as JSON");
    std::string show_name;
    show->add_option("name", show_name)->required()->check(CLI::IsMember(builtin_config_names()));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            if (config_path.empty() == builtin.empty()) {
                std::cerr << "run: give exactly one of <config> or --builtin\n";
                return 2;
            }
            ExperimentConfig config = resolve_config(config_path, builtin);
            if (!output_override.empty()) config.output_dir = output_override;
            RunOptions options;
            options.workers = workers;
            options.quiet = !verbose;
            const SweepResult result = run_experiment(config, options);
            std::cout << emit_table(result).text;
            for (const auto& row : result.rows) {
                if (!row.ok()) std::cerr << row.key << ": " << row.status << '\n';
            }
            std::cout << "results: " << (fs::path(config.output_dir) / "results.json").string() << '\n';
            return result.all_ok() ? 0 : 1;
        }
        if (*table) {
            const Table t = emit_table(load_results(results_path));
            std::cout << (as_csv ? t.csv : t.text);
            return 0;
        }
        if (*plot) {
            const auto series = sweep_series(load_results(results_path));
            if (plot_format == "json") {
                std::cout << plotdata_json(series).dump(2) << '\n';
            } else {
                std::cout << plotdata_csv(series);
            }
            return 0;
        }
        if (*slices) {
            const SweepResult result = load_results(results_path);
            const CellRow& row = find_row(result, method, lambda, p, seed);
            const Scenario sc = build_scenario(result.config);
            const CurrentEstimate est = load_estimate(fs::path(results_path).parent_path() / row.estimate_file);
            write_slices(emit_slices(est, *sc.space, sc.truth), slice_out);
            std::cout << "wrote slices for " << row.key << " to " << slice_out << '\n';
            return 0;
        }
        if (*show) {
            std::cout << config_to_json(builtin_config(show_name)).dump(2) << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
