#pragma once

// Depth weighting, regularized minimum-norm inverse and sLORETA standardization.

#include "neuroloc/headmodel.hpp"
#include "neuroloc/simulate.hpp"

#include <map>
#include <string>

namespace neuroloc {

/// Per-point prior variances of the current distribution.
///
/// s_k = (|l_x|^2 + |l_y|^2 + |l_z|^2)^(-p) from the three lead-field columns of
/// point k, then divided by max_k s_k (stored in `normalization`), so the largest
/// variance is 1 and p = 0 gives all ones.
struct DepthWeights {
    Eigen::VectorXd s;
    double p = 0.0;
    double normalization = 1.0;

    /// s repeated for the x, y, z entries of each point (diagonal of S).
    Eigen::VectorXd expanded() const;
};

DepthWeights depth_weights(const LeadField& lead, double p);
DepthWeights uniform_weights(std::size_t n_points);

struct CurrentEstimate {
    Eigen::VectorXd q_hat;                // 3N, nAm
    Eigen::VectorXd per_point_amplitude;  // N
    std::string method;
    double lambda = 0.0;
    double p = 0.0;
    std::map<std::string, double> diagnostics;
};

/// Euclidean norm of each 3-vector of `q`.
Eigen::VectorXd point_amplitudes(const Eigen::VectorXd& q);

/// Lead field and observation pre-multiplied by the inverse Cholesky factor of C, so
/// the noise covariance becomes the identity.
struct WhitenedProblem {
    Eigen::MatrixXd lead;
    Eigen::VectorXd data;
};

WhitenedProblem whiten(const LeadField& lead, const Observation& obs);

/// q = S L^T (L S L^T + lambda C)^-1 b, solved through a Cholesky factorization of
/// the whitened M x M system.
CurrentEstimate mne_solve(const LeadField& lead, const Observation& obs,
                          const DepthWeights& weights, double lambda);

/// MNE with S = I, amplitudes standardized by the 3x3 diagonal blocks of the
/// resolution matrix: amplitude_k = sqrt(q_k^T R_kk^-1 q_k). Blocks that are
/// numerically singular (radial directions are silent in a sphere) get a ridge of
/// 1e-9 * trace(R_kk) before inversion; the count is in diagnostics["regularized_blocks"].
CurrentEstimate sloreta_solve(const LeadField& lead, const Observation& obs, double lambda);

/// Coordinates of the point with the largest amplitude; ties go to the lowest raster
/// index. Throws when every amplitude is zero.
Vec3 localize(const CurrentEstimate& est, const SourceSpace& space);
std::size_t argmax_point(const CurrentEstimate& est);

double localization_error(const Vec3& estimated, const GroundTruthSource& truth);

}  // namespace neuroloc
