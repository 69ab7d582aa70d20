#pragma once

// Ground-truth dipoles, forward projection and noisy observations.

#include "neuroloc/headmodel.hpp"

#include <cstdint>
#include <limits>
#include <string>

namespace neuroloc {

struct GroundTruthSource {
    Vec3 location = Vec3::Zero();  // mm, one of SourceSpace::points
    std::size_t point_index = 0;
    Vec3 moment = Vec3::Zero();  // nAm
    std::string label;
};

/// Dipole at the source-space point nearest to `nearest_to`. Ties go to the lowest
/// raster index.
GroundTruthSource make_dipole(const SourceSpace& space, const Vec3& nearest_to, const Vec3& moment,
                              std::string label = {});

/// L q for a current vector that is zero except at the dipole's point.
Eigen::VectorXd forward(const LeadField& lead, const GroundTruthSource& source);

/// Dense 3N current vector holding a single dipole.
Eigen::VectorXd dipole_currents(std::size_t n_points, const GroundTruthSource& source);

enum class NoiseShape { identity, diagonal, full };

struct NoiseSpec {
    NoiseShape shape = NoiseShape::identity;
    Eigen::VectorXd diagonal;  // NoiseShape::diagonal, length M
    Eigen::MatrixXd full;      // NoiseShape::full, M x M SPD
    /// When positive, noise_cov is replaced by the sample covariance of this many
    /// extra independent noise draws (mismatch studies).
    int estimate_from_draws = 0;
};

struct Observation {
    Eigen::VectorXd b_obs;
    Eigen::MatrixXd noise_cov;
    Eigen::VectorXd clean;
    double psnr_db = std::numeric_limits<double>::infinity();
    std::uint64_t rng_seed = 0;
};

/// Noise level giving the requested peak SNR: max|clean| / 10^(psnr/20).
double noise_sigma_for_psnr(const Eigen::VectorXd& clean, double target_psnr_db);

/// Peak SNR in dB: 20 log10(max|clean| / rms(noise)).
double peak_snr_db(const Eigen::VectorXd& clean, const Eigen::VectorXd& noise);

/// Adds Gaussian noise n = sigma * chol(Sigma0) g, Sigma0 being the requested shape
/// scaled to unit mean diagonal. sigma is set from the draw so the realized PSNR
/// equals the target; noise_cov = sigma^2 Sigma0. A target of +infinity gives a
/// noiseless observation with noise_cov = 1e-12 * max|clean|^2 * I.
Observation add_noise(const Eigen::VectorXd& clean, double target_psnr_db, const NoiseSpec& spec,
                      std::uint64_t seed);

}  // namespace neuroloc
