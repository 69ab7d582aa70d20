#pragma once

// Current estimation with an untrained convolutional generator as the prior.
//
// The current distribution is the masked output of a generator network driven by a
// fixed random latent vector. Only the network parameters are optimized, against the
// whitened data misfit plus a depth-weighted penalty lambda * sum_k |f_k|^2 / s_k.

#include "neuroloc/linear_solvers.hpp"
#include "neuroloc/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace neuroloc {

struct GeneratorConfig {
    std::size_t latent_dim = 128;
    std::size_t seed_channels = 8;
    std::size_t seed_size = 4;
    std::size_t min_channels = 8;
    std::size_t kernel = 3;
    double negative_slope = 0.1;
    double init_scale = 1.0;
};

/// Dense projection of the latent vector to a (seed_channels, 4, 4, 4) volume,
/// then upsample x2 -> conv3d -> leaky_relu blocks (channels halve, floored at
/// min_channels) until the volume covers the source grid, then a final conv3d to
/// three channels (x, y, z moments) with no output nonlinearity.
class GeneratorNetwork {
public:
    GeneratorNetwork(const SourceSpace& space, std::uint64_t seed, GeneratorConfig config = {});

    /// (3, nx, ny, nz) volume cropped to the source grid.
    ad::Tensor forward_volume() const;
    /// 3N currents gathered at the source points in raster order.
    ad::Tensor forward() const;

    std::size_t upsample_blocks() const { return blocks_; }
    std::size_t volume_size() const { return volume_; }
    const std::vector<double>& latent() const { return latent_; }
    const GeneratorConfig& config() const { return config_; }

    std::vector<ad::Tensor>& parameters() { return params_; }
    const std::vector<ad::Tensor>& parameters() const { return params_; }
    std::size_t parameter_count() const;
    std::vector<double> flat_parameters() const;
    void load_flat_parameters(const std::vector<double>& flat);

    /// Versioned binary snapshot of the latent vector and parameters.
    void save(std::ostream& out) const;
    void load(std::istream& in);

private:
    ad::Tensor trunk() const;

    GeneratorConfig config_;
    std::array<int, 3> grid_dims_{};
    std::size_t blocks_ = 0;
    std::size_t volume_ = 0;
    std::vector<double> latent_;
    ad::Tensor latent_tensor_;
    std::vector<ad::Tensor> params_;  // projection W, b, then (W, b) per conv
    std::vector<std::size_t> channels_;
    std::vector<std::size_t> gather_index_;
};

/// Constant tensors of the objective: whitened lead field and data, inverse prior
/// variances expanded to 3N.
struct DeepPriorProblem {
    ad::Tensor lead;
    ad::Tensor data;
    ad::Tensor inv_variance;
};

DeepPriorProblem make_problem(const LeadField& lead, const Observation& obs,
                              const DepthWeights& weights);

struct LossTerms {
    ad::Tensor total;
    double data_term = 0.0;
    double reg_term = 0.0;
};

LossTerms dp_loss(const ad::Tensor& currents, const DeepPriorProblem& problem, double lambda);
LossTerms dp_loss(const GeneratorNetwork& net, const LeadField& lead, const Observation& obs,
                  const DepthWeights& weights, double lambda);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(std::vector<ad::Tensor> params, double learning_rate, AdamConfig config = {});
    /// Applies one update from the current gradients, then resets them.
    void step();

private:
    std::vector<ad::Tensor> params_;
    double lr_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long step_ = 0;
};

struct DeepPriorConfig {
    double lambda = 0.0;
    double p = 0.5;
    int iterations = 3000;
    double learning_rate = 1e-2;
    AdamConfig adam;
    std::uint64_t seed = 0;
    double init_scale = 1.0;
    int snapshot_every = 50;
};

struct TraceRow {
    int iteration = 0;
    double total_loss = 0.0;
    double data_term = 0.0;
    double reg_term = 0.0;
};

struct TraceLog {
    std::vector<TraceRow> rows;
    void write_csv(std::ostream& out) const;
};

class FitError : public std::runtime_error {
public:
    FitError(const std::string& what, int iteration, TraceRow last_finite)
        : std::runtime_error(what), iteration(iteration), last_finite(last_finite) {}
    int iteration;
    TraceRow last_finite;
};

struct FitResult {
    CurrentEstimate estimate;
    TraceLog trace;
    int best_iteration = 0;
    double best_loss = 0.0;
};

/// Minimizes dp_loss over the generator parameters with Adam. The network is left
/// holding the parameters of the lowest-loss iterate, and the estimate is its output.
FitResult fit(GeneratorNetwork& net, const LeadField& lead, const Observation& obs,
              const DepthWeights& weights, const DeepPriorConfig& config);

}  // namespace neuroloc
