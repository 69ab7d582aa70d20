// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   acceptance <work-dir> [--reuse]
//
// The work directory is wiped first unless --reuse is given, in which case sweep
// cells already on disk are picked up and the sweep runtime bound is not meaningful.

#include "neuroloc/deep_prior.hpp"
#include "neuroloc/harness.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

using namespace neuroloc;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kRadialSilenceRel = 1e-10;
constexpr double kForwardBudgetS = 1.0;
constexpr int kOracleInstances = 24;
constexpr double kOracleRel = 1e-6;
constexpr double kOracleBudgetS = 30.0;
constexpr double kOpGradRel = 1e-4;
constexpr double kLossGradRel = 1e-3;
constexpr int kLossGradParams = 20;
constexpr double kAutodiffBudgetS = 120.0;
constexpr double kSloretaMaxErrorMm = 10.0;  // one grid spacing
constexpr double kSweepBudgetS = 30 * 60.0;
constexpr double kDeterminismBudgetS = 5 * 60.0;
// Every fourth point of the built-in deep-prior grid, same range as MNE/sLORETA.
const std::vector<double> kDeepPriorGrid = {0.0, 1e-3, 1e-1, 1e1, 1e3};
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail, double runtime_s) {
    if (!pass) ++failures;
    char time[64];
    std::snprintf(time, sizeof time, " [%.2f s]", runtime_s);
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << time << std::endl;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

LeadField default_lead() {
    auto space = std::make_shared<const SourceSpace>(build_source_space(90, 70, 10).without_center(1.0));
    auto sensors = std::make_shared<const SensorArray>(build_sensor_array({}));
    return compute_lead_field(space, sensors);
}

void forward_invariants() {
    const auto t0 = Clock::now();
    const LeadField lead = default_lead();
    const auto& space = *lead.space;

    double worst_radial = 0.0;
    for (std::size_t k = 0; k < space.size(); ++k) {
        const Vec3 rhat = space.points[k].normalized();
        const Eigen::MatrixXd cols = lead.matrix.middleCols(3 * k, 3);
        const Vec3 t1 = rhat.unitOrthogonal();
        const Vec3 t2 = rhat.cross(t1);
        const double tangential = std::max((cols * t1).norm(), (cols * t2).norm());
        worst_radial = std::max(worst_radial, (cols * rhat).norm() / tangential);
    }

    auto full = std::make_shared<const SourceSpace>(build_source_space(90, 70, 10));
    const auto with_center = compute_lead_field(full, lead.sensors);
    double center_max = -1.0;
    for (std::size_t k = 0; k < full->size(); ++k)
        if (full->points[k].norm() == 0) center_max = with_center.matrix.middleCols(3 * k, 3).cwiseAbs().maxCoeff();

    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Eigen::VectorXd q(lead.matrix.cols());
    for (auto& v : q) v = g(rng);
    const Eigen::VectorXd b1 = lead.matrix * q;
    const Eigen::VectorXd b2 = lead.matrix * (2.0 * q);
    const double linearity = (b2 - 2.0 * b1).cwiseAbs().maxCoeff();
    const double elapsed = since(t0);

    const bool pass = worst_radial <= kRadialSilenceRel && center_max == 0.0 && linearity == 0.0 &&
                      elapsed < kForwardBudgetS;
    report("forward-invariants", pass,
           "radial/tangential " + num(worst_radial) + " (<= " + num(kRadialSilenceRel) + "), center field " +
               num(center_max) + " (== 0), linearity residual " + num(linearity) + " (== 0), budget " +
               num(kForwardBudgetS) + " s",
           elapsed);
}

void oracle_equivalence() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> msize(3, 8), nsize(2, 6);
    std::uniform_real_distribution<double> u(0.2, 1.0);
    double worst = 0.0;
    for (int t = 0; t < kOracleInstances; ++t) {
        const int m = msize(rng), n = nsize(rng);
        Eigen::MatrixXd l(m, 3 * n), a(m, m);
        Eigen::VectorXd b(m);
        for (auto& v : l.reshaped()) v = g(rng);
        for (auto& v : a.reshaped()) v = g(rng);
        for (auto& v : b) v = g(rng);
        const Eigen::MatrixXd c = a * a.transpose() / m + 0.5 * Eigen::MatrixXd::Identity(m, m);
        DepthWeights w = uniform_weights(n);
        if (t % 2) {
            for (auto& v : w.s) v = u(rng);
            w.p = 0.5;
        }
        const double lambda = std::pow(10.0, -1.5 + 2.0 * u(rng));
        LeadField lead;
        lead.matrix = l;
        Observation obs;
        obs.b_obs = b;
        obs.clean = b;
        obs.noise_cov = c;
        const auto est = mne_solve(lead, obs, w, lambda);
        const Eigen::VectorXd ref = oracles::descent_minimizer(l, b, c, w.expanded(), lambda);
        worst = std::max(worst, (est.q_hat - ref).norm() / ref.norm());
    }
    const double elapsed = since(t0);
    report("oracle-equivalence", worst <= kOracleRel && elapsed < kOracleBudgetS,
           std::to_string(kOracleInstances) + " instances (M <= 8, N <= 6), worst relative difference " + num(worst) +
               " (<= " + num(kOracleRel) + "), budget " + num(kOracleBudgetS) + " s",
           elapsed);
}

double op_gradients() {
    namespace ad = neuroloc::ad;
    using oracles::project;
    std::mt19937_64 rng(99);
    double worst = 0.0;
    auto check = [&](const std::vector<ad::Shape>& shapes, const oracles::Builder& build, double away = 0.0) {
        worst = std::max(worst, oracles::gradcheck_error(shapes, build, rng, away));
    };
    check({{5}, {5}}, [](const auto& t) { return project(ad::add(t[0], t[1])); });
    check({{5}, {1}}, [](const auto& t) { return project(ad::sub(t[0], t[1])); });
    check({{5}, {5}}, [](const auto& t) { return project(ad::mul(t[0], t[1])); });
    check({{6}}, [](const auto& t) { return project(ad::scale(t[0], -2.5)); });
    check({{3, 4}, {4, 2}}, [](const auto& t) { return project(ad::matmul(t[0], t[1])); });
    check({{3, 5}, {5}, {3}}, [](const auto& t) { return project(ad::linear(t[0], t[1], t[2])); });
    check({{2, 6}}, [](const auto& t) { return project(ad::reshape(t[0], {3, 4})); });
    check({{3, 4, 5}}, [](const auto& t) { return project(ad::slice(t[0], {1, 0, 2}, {2, 3, 2})); });
    check({{10}}, [](const auto& t) { return project(ad::gather(t[0], {9, 0, 3, 3, 7, 0})); });
    check({{7}}, [](const auto& t) { return project(ad::relu(t[0])); }, 1e-3);
    check({{7}}, [](const auto& t) { return project(ad::leaky_relu(t[0], 0.1)); }, 1e-3);
    check({{7}}, [](const auto& t) { return project(ad::tanh(t[0])); });
    check({{2, 2, 3, 2}}, [](const auto& t) { return project(ad::upsample3d_nearest(t[0], 2)); });
    check({{2, 4, 4, 4}, {3, 2, 3, 3, 3}, {3}}, [](const auto& t) { return project(ad::conv3d(t[0], t[1], t[2])); });
    check({{2, 3}}, [](const auto& t) { return ad::sum(t[0]); });
    check({{6}, {6}}, [](const auto& t) { return ad::dot(t[0], t[1]); });
    return worst;
}

double full_loss_gradient() {
    auto space = std::make_shared<const SourceSpace>(build_source_space(90, 35, 10).without_center(1.0));
    SensorLayout layout;
    layout.n_sensors = 10;
    const auto lead = compute_lead_field(space, std::make_shared<const SensorArray>(build_sensor_array(layout)));
    const auto truth = make_dipole(*space, Vec3(10, 0, 20), Vec3(0, 40, 0));
    NoiseSpec diag;
    diag.shape = NoiseShape::diagonal;
    diag.diagonal = Eigen::VectorXd::LinSpaced(10, 1.0, 3.0);
    const auto obs = add_noise(forward(lead, truth), 21.6, diag, 3);
    const auto w = depth_weights(lead, 0.5);

    GeneratorNetwork net(*space, 17);
    auto flat = net.flat_parameters();
    std::mt19937_64 rng(23);
    std::normal_distribution<double> g;
    for (auto& v : flat) v += 0.01 * g(rng);
    net.load_flat_parameters(flat);

    const double lambda = 0.3;
    dp_loss(net, lead, obs, w, lambda).total.backward();
    std::vector<double> grads;
    for (const auto& p : net.parameters()) grads.insert(grads.end(), p.grad().begin(), p.grad().end());

    std::uniform_int_distribution<std::size_t> pick(0, flat.size() - 1);
    std::vector<std::size_t> chosen;
    std::size_t off = 0;
    for (const auto& p : net.parameters()) {
        chosen.push_back(off);
        off += p.numel();
    }
    while (static_cast<int>(chosen.size()) < kLossGradParams) chosen.push_back(pick(rng));

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t idx : chosen) {
        auto perturbed = flat;
        perturbed[idx] = flat[idx] + h;
        net.load_flat_parameters(perturbed);
        const double up = dp_loss(net, lead, obs, w, lambda).total.item();
        perturbed[idx] = flat[idx] - h;
        net.load_flat_parameters(perturbed);
        const double down = dp_loss(net, lead, obs, w, lambda).total.item();
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max({std::abs(numeric), std::abs(grads[idx]), 1e-8});
        worst = std::max(worst, std::abs(numeric - grads[idx]) / scale);
    }
    return worst;
}

void autodiff() {
    const auto t0 = Clock::now();
    const double ops = op_gradients();
    const double loss = full_loss_gradient();
    const double elapsed = since(t0);
    report("autodiff-gradients", ops <= kOpGradRel && loss <= kLossGradRel && elapsed < kAutodiffBudgetS,
           "per-op worst " + num(ops) + " (<= " + num(kOpGradRel) + "), full loss on 7^3 lattice / M = 10 worst " +
               num(loss) + " over " + std::to_string(kLossGradParams) + " parameters (<= " + num(kLossGradRel) +
               "), budget " + num(kAutodiffBudgetS) + " s",
           elapsed);
}

void sloreta_zero_error() {
    const auto t0 = Clock::now();
    const LeadField lead = default_lead();
    const std::vector<Vec3> placements = {Vec3(20, 10, 40), Vec3(-30, 20, 10), Vec3(0, 0, 60),
                                          Vec3(40, -30, 20), Vec3(10, 10, 10), Vec3(-20, -40, 30)};
    const auto grid = log_grid(1e-3, 1e3, 13);
    double worst = 0.0;
    for (const auto& at : placements) {
        const auto truth = make_dipole(*lead.space, at, 50 * at.cross(Vec3(0.1, 0.2, 1.0)).normalized());
        const auto obs = add_noise(forward(lead, truth), std::numeric_limits<double>::infinity(), {}, 1);
        double best = std::numeric_limits<double>::infinity();
        for (double lambda : grid) {
            best = std::min(best, localization_error(localize(sloreta_solve(lead, obs, lambda), *lead.space), truth));
        }
        worst = std::max(worst, best);
    }
    report("sloreta-zero-error", worst <= kSloretaMaxErrorMm,
           std::to_string(placements.size()) + " noiseless placements, 10 mm lattice, M = 60, worst best-lambda error " +
               num(worst) + " mm (<= " + num(kSloretaMaxErrorMm) + ")",
           since(t0));
}

struct SweepRows {
    std::vector<CellRow> rows;
    bool all_ok = true;
};

// Runs a built-in config once per seed, with the noise draw and the network
// initialization both taken from that seed.
SweepRows sweep(const std::string& name, const fs::path& work) {
    SweepRows out;
    for (auto seed : kSeeds) {
        auto c = builtin_config(name);
        c.noise.seed = seed;
        c.seeds = {seed};
        for (auto& s : c.solvers)
            if (s.method == "deep_prior") s.lambda_grid = kDeepPriorGrid;
        c.output_dir = (work / name / ("seed" + std::to_string(seed))).string();
        const auto r = run_experiment(c);
        out.all_ok = out.all_ok && r.all_ok();
        out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
    }
    return out;
}

std::vector<CellRow> select(const std::vector<CellRow>& rows, const std::function<bool(const CellRow&)>& keep) {
    std::vector<CellRow> out;
    for (const auto& r : rows)
        if (keep(r)) out.push_back(r);
    return out;
}

const BestRow& find_best(const std::vector<BestRow>& best, const std::string& method, double p) {
    for (const auto& b : best)
        if (b.method == method && b.p == p) return b;
    throw std::runtime_error("no best row for " + method);
}

void depth_and_bias(const fs::path& work) {
    const auto t0 = Clock::now();
    std::map<std::string, SweepRows> sweeps;
    for (const std::string name : {"shallow-analog", "deep-analog"}) sweeps[name] = sweep(name, work);
    const double elapsed = since(t0);

    bool trend = elapsed < kSweepBudgetS;
    std::ostringstream detail;
    for (const auto& [name, s] : sweeps) {
        trend = trend && s.all_ok;
        const auto dp = select(s.rows, [](const CellRow& r) { return r.method == "deep_prior"; });
        const auto dp_best = find_best(best_rows(select(dp, [](const CellRow& r) { return r.lambda > 0; })),
                                       "deep_prior", 0.5);
        std::vector<double> zero;
        for (const auto& r : dp)
            if (r.lambda == 0) zero.push_back(r.error_mm);
        const double dp_zero = median(zero);
        const auto all_best = best_rows(s.rows);
        const double mne0 = find_best(all_best, "mne", 0.0).median_error_mm;
        const double mne5 = find_best(all_best, "mne", 0.5).median_error_mm;
        trend = trend && dp_best.median_error_mm < dp_zero && mne5 <= mne0;
        detail << name << ": dp best " << num(dp_best.median_error_mm) << " mm at lambda " << num(dp_best.lambda)
               << " vs lambda=0 " << num(dp_zero) << " mm, mne p=0.5 " << num(mne5) << " mm vs p=0 " << num(mne0)
               << " mm; ";
    }
    detail << "median over seeds 1-3, budget " << num(kSweepBudgetS) << " s";
    report("depth-weighting-trend", trend, detail.str(), elapsed);

    // Surface bias on the deep config: the unregularized fit peaks no deeper than
    // the best regularized one.
    const auto& deep = sweeps["deep-analog"].rows;
    const auto dp = select(deep, [](const CellRow& r) { return r.method == "deep_prior" && r.ok(); });
    const auto best = find_best(best_rows(select(dp, [](const CellRow& r) { return r.lambda > 0; })), "deep_prior", 0.5);
    std::vector<double> r0, rb;
    for (const auto& r : dp) {
        if (r.lambda == 0) r0.push_back(r.argmax_radius_mm);
        if (r.lambda == best.lambda) rb.push_back(r.argmax_radius_mm);
    }
    const double m0 = median(r0), mb = median(rb);
    report("lambda0-surface-bias", r0.size() == kSeeds.size() && m0 >= mb,
           "deep-analog median argmax radius at lambda=0 " + num(m0) + " mm vs best lambda " + num(best.lambda) + " " +
               num(mb) + " mm (lambda=0 must be >=)",
           0.0);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void determinism(const fs::path& work) {
    const auto t0 = Clock::now();
    auto c = builtin_config("shallow-analog");
    c.seeds = {1};
    for (auto& s : c.solvers) {
        if (s.method != "deep_prior") continue;
        s.lambda_grid = {0.0, 0.1};
        s.deep_prior.iterations = 500;
    }
    std::vector<std::string> csv;
    for (const char* run : {"a", "b"}) {
        c.output_dir = (work / "determinism" / run).string();
        fs::remove_all(c.output_dir);
        run_experiment(c);
        csv.push_back(slurp(fs::path(c.output_dir) / "results.csv"));
    }
    const double elapsed = since(t0);
    const bool same = !csv[0].empty() && csv[0] == csv[1];
    report("end-to-end-determinism", same && elapsed < kDeterminismBudgetS,
           std::string("two fresh runs of a reduced shallow-analog sweep: results.csv ") +
               (same ? "byte-identical" : "differs") + " (" + std::to_string(csv[0].size()) + " bytes), budget " +
               num(kDeterminismBudgetS) + " s",
           elapsed);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <work-dir> [--reuse]\n";
        return 2;
    }
    const fs::path work = argv[1];
    const bool reuse = argc > 2 && std::string(argv[2]) == "--reuse";
    if (!reuse) fs::remove_all(work);
    fs::create_directories(work);

    auto guarded = [](const char* name, const std::function<void()>& body) {
        try {
            body();
        } catch (const std::exception& e) {
            report(name, false, std::string("threw: ") + e.what(), 0.0);
        }
    };
    guarded("forward-invariants", forward_invariants);
    guarded("oracle-equivalence", oracle_equivalence);
    guarded("autodiff-gradients", autodiff);
    guarded("sloreta-zero-error", sloreta_zero_error);
    guarded("end-to-end-determinism", [&] { determinism(work); });
    guarded("depth-weighting-trend", [&] { depth_and_bias(work); });

    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAIL") << std::endl;
    return failures == 0 ? 0 : 1;
}
