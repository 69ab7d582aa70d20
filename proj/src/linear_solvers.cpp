#include "neuroloc/linear_solvers.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace neuroloc {

namespace {

constexpr double kBlockRidge = 1e-9;
constexpr double kBlockSingular = 1e-10;
// Reciprocal condition below which the lambda = 0 system is treated as singular.
constexpr double kMinRcond = 1e-14;

void check_dims(const LeadField& lead, const Observation& obs) {
    if (obs.b_obs.size() != lead.matrix.rows() || obs.noise_cov.rows() != lead.matrix.rows() ||
        obs.noise_cov.cols() != lead.matrix.rows()) {
        std::ostringstream msg;
        msg << "dimension mismatch: lead field has " << lead.matrix.rows() << " rows, observation has "
            << obs.b_obs.size() << " entries and a " << obs.noise_cov.rows() << "x"
            << obs.noise_cov.cols() << " noise covariance";
        throw std::invalid_argument(msg.str());
    }
}

double condition_estimate(const Eigen::MatrixXd& sym) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    return ev.maxCoeff() / std::max(std::abs(ev.minCoeff()), 1e-300);
}

// Cholesky factorization of G = A S A^T + lambda I; throws with a condition estimate
// when G is not numerically positive definite.
Eigen::LLT<Eigen::MatrixXd> factor_gram(const Eigen::MatrixXd& a, const Eigen::VectorXd& s_diag,
                                        double lambda, const char* who) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument(std::string(who) + ": lambda must be finite and >= 0");
    }
    Eigen::MatrixXd gram = a * s_diag.asDiagonal() * a.transpose();
    gram.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success || llt.rcond() < kMinRcond) {
        std::ostringstream msg;
        msg << who << ": factorization of the " << gram.rows() << "x" << gram.cols()
            << " sensor-space system failed (condition estimate " << condition_estimate(gram)
            << ", lambda " << lambda << ")";
        throw std::runtime_error(msg.str());
    }
    return llt;
}

}  // namespace

Eigen::VectorXd DepthWeights::expanded() const {
    Eigen::VectorXd out(3 * s.size());
    for (Eigen::Index k = 0; k < s.size(); ++k) out.segment<3>(3 * k).setConstant(s[k]);
    return out;
}

DepthWeights depth_weights(const LeadField& lead, double p) {
    const auto n = static_cast<Eigen::Index>(lead.n_points());
    DepthWeights w;
    w.p = p;
    w.s.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double power = lead.matrix.middleCols<3>(3 * k).squaredNorm();
        if (power == 0.0) {
            throw std::domain_error("depth_weights: source point " + std::to_string(k) +
                                    " has an all-zero lead field; exclude it from the source space");
        }
        w.s[k] = std::pow(power, -p);
    }
    w.normalization = w.s.maxCoeff();
    w.s /= w.normalization;
    return w;
}

DepthWeights uniform_weights(std::size_t n_points) {
    DepthWeights w;
    w.s = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_points));
    return w;
}

Eigen::VectorXd point_amplitudes(const Eigen::VectorXd& q) {
    const Eigen::Index n = q.size() / 3;
    Eigen::VectorXd amp(n);
    for (Eigen::Index k = 0; k < n; ++k) amp[k] = q.segment<3>(3 * k).norm();
    return amp;
}

WhitenedProblem whiten(const LeadField& lead, const Observation& obs) {
    check_dims(lead, obs);
    Eigen::LLT<Eigen::MatrixXd> chol(obs.noise_cov);
    if (chol.info() != Eigen::Success) {
        throw std::runtime_error("whiten: noise covariance is not positive definite");
    }
    WhitenedProblem out;
    out.lead = chol.matrixL().solve(lead.matrix);
    out.data = chol.matrixL().solve(obs.b_obs);
    return out;
}

CurrentEstimate mne_solve(const LeadField& lead, const Observation& obs,
                          const DepthWeights& weights, double lambda) {
    if (weights.s.size() != static_cast<Eigen::Index>(lead.n_points())) {
        throw std::invalid_argument("mne_solve: depth weights do not match the lead field");
    }
    const WhitenedProblem w = whiten(lead, obs);
    const Eigen::VectorXd s_diag = weights.expanded();
    const auto llt = factor_gram(w.lead, s_diag, lambda, "mne_solve");

    CurrentEstimate est;
    est.method = weights.p > 0.0 ? "mne_depth" : "mne";
    est.lambda = lambda;
    est.p = weights.p;
    est.q_hat = s_diag.asDiagonal() * (w.lead.transpose() * llt.solve(w.data));
    est.per_point_amplitude = point_amplitudes(est.q_hat);
    est.diagnostics["rcond"] = llt.rcond();
    return est;
}

CurrentEstimate sloreta_solve(const LeadField& lead, const Observation& obs, double lambda) {
    const WhitenedProblem w = whiten(lead, obs);
    const auto n = static_cast<Eigen::Index>(lead.n_points());
    const auto llt = factor_gram(w.lead, Eigen::VectorXd::Ones(3 * n), lambda, "sloreta_solve");

    CurrentEstimate est;
    est.method = "sloreta";
    est.lambda = lambda;
    est.q_hat = w.lead.transpose() * llt.solve(w.data);

    // R = A^T G^-1 A = X^T X with X = chol(G)^-1 A; only the diagonal blocks are needed.
    const Eigen::MatrixXd x = llt.matrixL().solve(w.lead);

    est.per_point_amplitude.resize(n);
    int regularized = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
        Eigen::Matrix3d block = x.middleCols<3>(3 * k).transpose() * x.middleCols<3>(3 * k);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(block, Eigen::EigenvaluesOnly);
        const Eigen::Vector3d ev = eig.eigenvalues();
        if (!(ev.minCoeff() > kBlockSingular * ev.maxCoeff())) {
            block.diagonal().array() += kBlockRidge * block.trace();
            ++regularized;
        }
        Eigen::LLT<Eigen::Matrix3d> block_llt(block);
        if (block_llt.info() != Eigen::Success || !(block.trace() > 0.0)) {
            throw std::runtime_error("sloreta_solve: resolution block " + std::to_string(k) +
                                     " is singular even after regularization");
        }
        const Eigen::Vector3d qk = est.q_hat.segment<3>(3 * k);
        est.per_point_amplitude[k] = std::sqrt(std::max(0.0, qk.dot(block_llt.solve(qk))));
    }
    est.diagnostics["rcond"] = llt.rcond();
    est.diagnostics["regularized_blocks"] = regularized;
    return est;
}

std::size_t argmax_point(const CurrentEstimate& est) {
    const Eigen::VectorXd& amp = est.per_point_amplitude;
    if (amp.size() == 0) throw std::invalid_argument("localize: empty estimate");
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < amp.size(); ++k) {
        if (amp[k] > amp[best]) best = k;
    }
    if (!(amp[best] > 0.0)) throw std::runtime_error("localize: no activity");
    return static_cast<std::size_t>(best);
}

Vec3 localize(const CurrentEstimate& est, const SourceSpace& space) {
    if (static_cast<std::size_t>(est.per_point_amplitude.size()) != space.size()) {
        throw std::invalid_argument("localize: estimate does not match the source space");
    }
    return space.points[argmax_point(est)];
}

double localization_error(const Vec3& estimated, const GroundTruthSource& truth) {
    return (estimated - truth.location).norm();
}

}  // namespace neuroloc
