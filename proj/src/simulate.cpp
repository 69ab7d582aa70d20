#include "neuroloc/simulate.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace neuroloc {

GroundTruthSource make_dipole(const SourceSpace& space, const Vec3& nearest_to, const Vec3& moment,
                              std::string label) {
    if (space.size() == 0) {
        throw std::invalid_argument("make_dipole: empty source space");
    }
    if (moment.norm() == 0.0) {
        throw std::invalid_argument("make_dipole: zero dipole moment");
    }
    std::size_t best = 0;
    double best_d2 = (space.points[0] - nearest_to).squaredNorm();
    for (std::size_t k = 1; k < space.size(); ++k) {
        const double d2 = (space.points[k] - nearest_to).squaredNorm();
        if (d2 < best_d2) {
            best = k;
            best_d2 = d2;
        }
    }
    return GroundTruthSource{space.points[best], best, moment, std::move(label)};
}

Eigen::VectorXd dipole_currents(std::size_t n_points, const GroundTruthSource& source) {
    if (source.point_index >= n_points) {
        throw std::out_of_range("dipole_currents: source point outside the source space");
    }
    Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * n_points));
    q.segment<3>(static_cast<Eigen::Index>(3 * source.point_index)) = source.moment;
    return q;
}

Eigen::VectorXd forward(const LeadField& lead, const GroundTruthSource& source) {
    const std::size_t k = source.point_index;
    if (k >= lead.n_points() ||
        (lead.space && (lead.space->points[k] - source.location).norm() > 0.0)) {
        throw std::invalid_argument("forward: source location is not in the lead field's source space");
    }
    return lead.matrix.middleCols<3>(static_cast<Eigen::Index>(3 * k)) * source.moment;
}

double noise_sigma_for_psnr(const Eigen::VectorXd& clean, double target_psnr_db) {
    return clean.cwiseAbs().maxCoeff() / std::pow(10.0, target_psnr_db / 20.0);
}

double peak_snr_db(const Eigen::VectorXd& clean, const Eigen::VectorXd& noise) {
    const double rms = std::sqrt(noise.squaredNorm() / static_cast<double>(noise.size()));
    return 20.0 * std::log10(clean.cwiseAbs().maxCoeff() / rms);
}

namespace {

Eigen::MatrixXd unit_shape(const NoiseSpec& spec, Eigen::Index m) {
    Eigen::MatrixXd shape;
    switch (spec.shape) {
        case NoiseShape::identity:
            shape = Eigen::MatrixXd::Identity(m, m);
            break;
        case NoiseShape::diagonal:
            if (spec.diagonal.size() != m || (spec.diagonal.array() <= 0.0).any()) {
                throw std::invalid_argument("add_noise: diagonal shape needs M positive entries");
            }
            shape = spec.diagonal.asDiagonal();
            break;
        case NoiseShape::full:
            if (spec.full.rows() != m || spec.full.cols() != m) {
                throw std::invalid_argument("add_noise: full shape must be M x M");
            }
            shape = 0.5 * (spec.full + spec.full.transpose());
            break;
    }
    return shape / (shape.trace() / static_cast<double>(m));
}

}  // namespace

Observation add_noise(const Eigen::VectorXd& clean, double target_psnr_db, const NoiseSpec& spec,
                      std::uint64_t seed) {
    if (clean.size() == 0 || clean.cwiseAbs().maxCoeff() == 0.0) {
        throw std::invalid_argument("add_noise: clean signal is all zero, PSNR undefined");
    }
    if (std::isnan(target_psnr_db) || target_psnr_db == -std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("add_noise: target PSNR must be finite or +inf");
    }
    const Eigen::Index m = clean.size();

    Observation obs;
    obs.clean = clean;
    obs.rng_seed = seed;

    if (std::isinf(target_psnr_db)) {
        const double peak = clean.cwiseAbs().maxCoeff();
        obs.b_obs = clean;
        obs.noise_cov = 1e-12 * peak * peak * Eigen::MatrixXd::Identity(m, m);
        obs.psnr_db = std::numeric_limits<double>::infinity();
        return obs;
    }

    const Eigen::MatrixXd shape = unit_shape(spec, m);
    Eigen::LLT<Eigen::MatrixXd> llt(shape);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("add_noise: noise covariance shape is not positive definite");
    }
    const Eigen::MatrixXd chol = llt.matrixL().toDenseMatrix();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&] {
        Eigen::VectorXd g(m);
        for (Eigen::Index i = 0; i < m; ++i) g[i] = normal(rng);
        return Eigen::VectorXd(chol * g);
    };

    // sigma is fixed from the first draw so its rms hits the target exactly.
    const Eigen::VectorXd unit = draw();
    const double unit_rms = std::sqrt(unit.squaredNorm() / static_cast<double>(m));
    const double sigma = noise_sigma_for_psnr(clean, target_psnr_db) / unit_rms;
    auto scaled = [&] { return Eigen::VectorXd(sigma * draw()); };

    const Eigen::VectorXd noise = sigma * unit;
    obs.b_obs = clean + noise;
    obs.psnr_db = peak_snr_db(clean, noise);

    if (spec.estimate_from_draws > 0) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
        for (int d = 0; d < spec.estimate_from_draws; ++d) {
            const Eigen::VectorXd n = scaled();
            acc.noalias() += n * n.transpose();
        }
        acc /= static_cast<double>(spec.estimate_from_draws);
        // Rank-deficient when draws < M; a small ridge keeps it SPD.
        acc += 1e-6 * sigma * sigma * Eigen::MatrixXd::Identity(m, m);
        obs.noise_cov = acc;
    } else {
        obs.noise_cov = sigma * sigma * shape;
    }
    return obs;
}

}  // namespace neuroloc
