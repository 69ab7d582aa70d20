#include "neuroloc/deep_prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

namespace neuroloc {

namespace {

constexpr char kSnapshotMagic[8] = {'N', 'L', 'G', 'E', 'N', '\0', '\0', '\0'};
constexpr std::uint32_t kSnapshotVersion = 1;

std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> out(n);
    for (double& v : out) v = normal(rng);
    return out;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("generator snapshot: truncated stream");
    return v;
}

}  // namespace

GeneratorNetwork::GeneratorNetwork(const SourceSpace& space, std::uint64_t seed, GeneratorConfig config)
    : config_(config), grid_dims_(space.grid_dims) {
    const int max_dim = *std::max_element(grid_dims_.begin(), grid_dims_.end());
    const int min_dim = *std::min_element(grid_dims_.begin(), grid_dims_.end());
    if (min_dim < 4 || max_dim <= static_cast<int>(config_.seed_size)) {
        throw std::invalid_argument("GeneratorNetwork: grid too small to support one upsample block");
    }
    if (config_.kernel % 2 == 0) throw std::invalid_argument("GeneratorNetwork: kernel must be odd");

    blocks_ = static_cast<std::size_t>(
        std::ceil(std::log2(static_cast<double>(max_dim) / static_cast<double>(config_.seed_size))));
    volume_ = config_.seed_size << blocks_;

    std::mt19937_64 rng(seed);
    latent_ = normal_values(rng, config_.latent_dim, 1.0);
    latent_tensor_ = ad::Tensor::from({config_.latent_dim}, latent_);

    const std::size_t s = config_.seed_size;
    const std::size_t proj_out = config_.seed_channels * s * s * s;
    const double gain = config_.init_scale;
    params_.push_back(ad::Tensor::from(
        {proj_out, config_.latent_dim},
        normal_values(rng, proj_out * config_.latent_dim, gain / std::sqrt(double(config_.latent_dim))),
        true));
    params_.push_back(ad::Tensor::zeros({proj_out}, true));

    channels_.push_back(config_.seed_channels);
    const std::size_t k = config_.kernel;
    auto add_conv = [&](std::size_t cin, std::size_t cout) {
        const std::size_t fan_in = cin * k * k * k;
        params_.push_back(ad::Tensor::from({cout, cin, k, k, k},
                                           normal_values(rng, cout * fan_in, gain / std::sqrt(double(fan_in))),
                                           true));
        params_.push_back(ad::Tensor::zeros({cout}, true));
        channels_.push_back(cout);
    };
    for (std::size_t b = 0; b < blocks_; ++b) {
        const std::size_t cin = channels_.back();
        add_conv(cin, std::max(config_.min_channels, cin / 2));
    }
    add_conv(channels_.back(), 3);

    const std::size_t v = volume_;
    for (std::size_t k_pt = 0; k_pt < space.size(); ++k_pt) {
        const auto c = space.cell_coords(space.cell_index[k_pt]);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            gather_index_.push_back(((ch * v + c[0]) * v + c[1]) * v + c[2]);
        }
    }
}

ad::Tensor GeneratorNetwork::trunk() const {
    const std::size_t s = config_.seed_size;
    ad::Tensor h = ad::linear(params_[0], latent_tensor_, params_[1]);
    h = ad::reshape(h, {config_.seed_channels, s, s, s});
    std::size_t p = 2;
    for (std::size_t b = 0; b < blocks_; ++b, p += 2) {
        h = ad::upsample3d_nearest(h, 2);
        h = ad::conv3d(h, params_[p], params_[p + 1]);
        h = ad::leaky_relu(h, config_.negative_slope);
    }
    return ad::conv3d(h, params_[p], params_[p + 1]);
}

ad::Tensor GeneratorNetwork::forward_volume() const {
    const auto nx = static_cast<std::size_t>(grid_dims_[0]);
    const auto ny = static_cast<std::size_t>(grid_dims_[1]);
    const auto nz = static_cast<std::size_t>(grid_dims_[2]);
    return ad::slice(trunk(), {0, 0, 0, 0}, {3, nx, ny, nz});
}

ad::Tensor GeneratorNetwork::forward() const { return ad::gather(trunk(), gather_index_); }

std::size_t GeneratorNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params_) n += t.numel();
    return n;
}

std::vector<double> GeneratorNetwork::flat_parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& t : params_) flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
}

void GeneratorNetwork::load_flat_parameters(const std::vector<double>& flat) {
    if (flat.size() != parameter_count()) {
        throw std::invalid_argument("load_flat_parameters: expected " + std::to_string(parameter_count()) +
                                    " values, got " + std::to_string(flat.size()));
    }
    std::size_t off = 0;
    for (auto& t : params_) {
        auto dst = t.mutable_values();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
        off += dst.size();
    }
}

void GeneratorNetwork::save(std::ostream& out) const {
    out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
    write_pod(out, kSnapshotVersion);
    write_pod(out, static_cast<std::uint64_t>(latent_.size()));
    write_pod(out, static_cast<std::uint64_t>(parameter_count()));
    out.write(reinterpret_cast<const char*>(latent_.data()),
              static_cast<std::streamsize>(latent_.size() * sizeof(double)));
    const auto flat = flat_parameters();
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

void GeneratorNetwork::load(std::istream& in) {
    char magic[sizeof(kSnapshotMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("generator snapshot: bad magic");
    }
    if (read_pod<std::uint32_t>(in) != kSnapshotVersion) {
        throw std::runtime_error("generator snapshot: unsupported version");
    }
    const auto n_latent = read_pod<std::uint64_t>(in);
    const auto n_params = read_pod<std::uint64_t>(in);
    if (n_latent != latent_.size() || n_params != parameter_count()) {
        throw std::runtime_error("generator snapshot: architecture mismatch");
    }
    std::vector<double> latent(n_latent), flat(n_params);
    in.read(reinterpret_cast<char*>(latent.data()), static_cast<std::streamsize>(n_latent * sizeof(double)));
    in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(n_params * sizeof(double)));
    if (!in) throw std::runtime_error("generator snapshot: truncated stream");
    latent_ = std::move(latent);
    latent_tensor_ = ad::Tensor::from({latent_.size()}, latent_);
    load_flat_parameters(flat);
}

// ---------------------------------------------------------------------------

DeepPriorProblem make_problem(const LeadField& lead, const Observation& obs, const DepthWeights& weights) {
    if (weights.s.size() != static_cast<Eigen::Index>(lead.n_points())) {
        throw std::invalid_argument("make_problem: depth weights do not match the lead field");
    }
    const WhitenedProblem w = whiten(lead, obs);
    const auto m = static_cast<std::size_t>(w.lead.rows());
    const auto n3 = static_cast<std::size_t>(w.lead.cols());

    std::vector<double> row_major(m * n3);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        row_major.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n3)) = w.lead;

    const Eigen::VectorXd inv = weights.expanded().cwiseInverse();

    DeepPriorProblem problem;
    problem.lead = ad::Tensor::from({m, n3}, std::move(row_major));
    problem.data = ad::Tensor::from({m}, std::vector<double>(w.data.begin(), w.data.end()));
    problem.inv_variance = ad::Tensor::from({n3}, std::vector<double>(inv.begin(), inv.end()));
    return problem;
}

LossTerms dp_loss(const ad::Tensor& currents, const DeepPriorProblem& problem, double lambda) {
    const ad::Tensor residual = ad::sub(problem.data, ad::matmul(problem.lead, currents));
    const ad::Tensor data = ad::dot(residual, residual);
    const ad::Tensor reg = ad::dot(currents, ad::mul(currents, problem.inv_variance));

    LossTerms terms;
    terms.data_term = data.item();
    terms.reg_term = reg.item();
    terms.total = ad::add(data, ad::scale(reg, lambda));
    return terms;
}

LossTerms dp_loss(const GeneratorNetwork& net, const LeadField& lead, const Observation& obs,
                  const DepthWeights& weights, double lambda) {
    return dp_loss(net.forward(), make_problem(lead, obs, weights), lambda);
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<ad::Tensor> params, double learning_rate, AdamConfig config)
    : params_(std::move(params)), lr_(learning_rate), cfg_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto x = p.mutable_values();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < x.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            x[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.epsilon);
        }
        p.zero_grad();
    }
}

void TraceLog::write_csv(std::ostream& out) const {
    out << "iteration,total_loss,data_term,reg_term\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.iteration << ',' << r.total_loss << ',' << r.data_term << ',' << r.reg_term << '\n';
    }
}

FitResult fit(GeneratorNetwork& net, const LeadField& lead, const Observation& obs,
              const DepthWeights& weights, const DeepPriorConfig& config) {
    if (config.iterations < 1) throw std::invalid_argument("fit: iterations must be >= 1");
    if (!(config.learning_rate > 0.0)) throw std::invalid_argument("fit: learning_rate must be > 0");
    if (!(config.lambda >= 0.0)) throw std::invalid_argument("fit: lambda must be >= 0");
    const int every = std::max(1, config.snapshot_every);

    const DeepPriorProblem problem = make_problem(lead, obs, weights);
    Adam adam(net.parameters(), config.learning_rate, config.adam);

    FitResult result;
    result.best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> best_params = net.flat_parameters();
    TraceRow last_finite;

    // Evaluates iterate `it`; the final pass (it == iterations) only scores.
    for (int it = 0; it <= config.iterations; ++it) {
        LossTerms terms = dp_loss(net.forward(), problem, config.lambda);
        const TraceRow row{it, terms.total.item(), terms.data_term, terms.reg_term};
        if (!std::isfinite(row.total_loss)) {
            throw FitError("fit: non-finite loss at iteration " + std::to_string(it) +
                               " (last finite snapshot at iteration " +
                               std::to_string(last_finite.iteration) + "); retry with a smaller learning rate",
                           it, last_finite);
        }
        last_finite = row;
        if (row.total_loss < result.best_loss) {
            result.best_loss = row.total_loss;
            result.best_iteration = it;
            best_params = net.flat_parameters();
        }
        if (it % every == 0 || it == config.iterations) result.trace.rows.push_back(row);
        if (it == config.iterations) break;
        terms.total.backward();
        adam.step();
    }

    net.load_flat_parameters(best_params);
    const ad::Tensor q = net.forward();

    CurrentEstimate& est = result.estimate;
    est.method = "deep_prior";
    est.lambda = config.lambda;
    est.p = weights.p;
    est.q_hat = Eigen::Map<const Eigen::VectorXd>(q.values().data(), static_cast<Eigen::Index>(q.numel()));
    est.per_point_amplitude = point_amplitudes(est.q_hat);
    est.diagnostics["best_iteration"] = result.best_iteration;
    est.diagnostics["best_loss"] = result.best_loss;
    return result;
}

}  // namespace neuroloc
