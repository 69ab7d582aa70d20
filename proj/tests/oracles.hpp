#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include "neuroloc/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracles {

// Minimizes (b - Lq)^T C^-1 (b - Lq) + lambda q^T S^-1 q by fixed-step gradient
// descent from q = 0, using an explicit inverse of C.
inline Eigen::VectorXd descent_minimizer(const Eigen::MatrixXd& lead, const Eigen::VectorXd& b,
                                         const Eigen::MatrixXd& c, const Eigen::VectorXd& s_diag, double lambda) {
    const Eigen::MatrixXd c_inv = c.inverse();
    const Eigen::MatrixXd hess =
        2.0 * (lead.transpose() * c_inv * lead + lambda * Eigen::MatrixXd(s_diag.cwiseInverse().asDiagonal()));
    Eigen::VectorXd v = Eigen::VectorXd::Ones(hess.rows());
    for (int i = 0; i < 500; ++i) v = (hess * v).normalized();
    const double step = 1.0 / (v.dot(hess * v) * 1.01);

    Eigen::VectorXd q = Eigen::VectorXd::Zero(lead.cols());
    const Eigen::VectorXd lin = 2.0 * lead.transpose() * c_inv * b;
    for (int it = 0; it < 2000000; ++it) {
        const Eigen::VectorXd grad = hess * q - lin;
        q -= step * grad;
        if (grad.norm() < 1e-13 * lin.norm()) break;
    }
    return q;
}

using Builder = std::function<neuroloc::ad::Tensor(const std::vector<neuroloc::ad::Tensor>&)>;

// Largest per-coordinate relative disagreement between backward() and central
// differences (h = 1e-5) over every coordinate of every input.
inline double gradcheck_error(const std::vector<neuroloc::ad::Shape>& shapes, const Builder& build,
                              std::mt19937_64& rng, double away_from_zero = 0.0) {
    using neuroloc::ad::Tensor;
    std::normal_distribution<double> g;
    std::vector<std::vector<double>> values;
    for (const auto& s : shapes) {
        std::vector<double> v(neuroloc::ad::numel(s));
        for (auto& x : v) {
            x = g(rng);
            if (std::abs(x) < away_from_zero) x += x < 0 ? -away_from_zero : away_from_zero;
        }
        values.push_back(std::move(v));
    }
    auto leaves = [&](bool grad) {
        std::vector<Tensor> out;
        for (std::size_t i = 0; i < shapes.size(); ++i) out.push_back(Tensor::from(shapes[i], values[i], grad));
        return out;
    };
    const auto inputs = leaves(true);
    build(inputs).backward();

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        for (std::size_t j = 0; j < values[i].size(); ++j) {
            const double saved = values[i][j];
            values[i][j] = saved + h;
            const double up = build(leaves(false)).item();
            values[i][j] = saved - h;
            const double down = build(leaves(false)).item();
            values[i][j] = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = inputs[i].grad()[j];
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            worst = std::max(worst, std::abs(numeric - analytic) / scale);
        }
    }
    return worst;
}

// Fixed random projection of a tensor to a scalar.
inline neuroloc::ad::Tensor project(const neuroloc::ad::Tensor& t) {
    using neuroloc::ad::Tensor;
    std::mt19937_64 local(t.numel() * 7919 + 3);
    std::normal_distribution<double> g;
    std::vector<double> w(t.numel());
    for (auto& x : w) x = g(local);
    return neuroloc::ad::dot(neuroloc::ad::reshape(t, {t.numel()}), Tensor::from({t.numel()}, w));
}

}  // namespace oracles
