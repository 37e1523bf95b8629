#pragma once

// Independent reference computations for the tests. Everything here goes
// through Eigen or plain loops, never through the library's own kernels.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

#include "deepesn/matrix.hpp"

namespace oracle {

inline Eigen::MatrixXd to_eigen(const deepesn::Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    return e;
}

inline double spectral_radius(const deepesn::Matrix& m) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(to_eigen(m), false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double spectral_norm(const deepesn::Matrix& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
    return svd.singularValues()(0);
}

// W = T X' (X X' + lambda I)^-1 through a column-pivoted QR of the primal system.
inline Eigen::MatrixXd ridge(const deepesn::Matrix& x, const deepesn::Matrix& t, double lambda) {
    const Eigen::MatrixXd X = to_eigen(x), T = to_eigen(t);
    const Eigen::MatrixXd G = X * X.transpose() + lambda * Eigen::MatrixXd::Identity(X.rows(), X.rows());
    return G.colPivHouseholderQr().solve(X * T.transpose()).transpose();
}

// Gradient of ||W X - T||^2 + lambda ||W||^2 at W.
inline Eigen::MatrixXd ridge_gradient(const deepesn::Matrix& w, const deepesn::Matrix& x, const deepesn::Matrix& t,
                                      double lambda) {
    const Eigen::MatrixXd W = to_eigen(w), X = to_eigen(x), T = to_eigen(t);
    return 2.0 * (W * X - T) * X.transpose() + 2.0 * lambda * W;
}

// Two-sided exact McNemar p by summing every binomial outcome at least as
// extreme as the observed one.
inline double mcnemar_exact(std::size_t b, std::size_t c) {
    const std::size_t n = b + c;
    if (n == 0) return 1.0;
    std::vector<double> pmf(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        double coef = 1.0;
        for (std::size_t i = 0; i < k; ++i) coef = coef * static_cast<double>(n - i) / static_cast<double>(i + 1);
        pmf[k] = coef * std::pow(0.5, static_cast<double>(n));
    }
    const double observed = pmf[b];
    double p = 0.0;
    for (double q : pmf)
        if (q <= observed * (1.0 + 1e-12)) p += q;
    return std::min(1.0, p);
}

// Single-reservoir leaky-integrator network written directly from its
// update rule, mean state over all steps from a zero initial state.
inline std::vector<double> li_esn_mean_state(const deepesn::Matrix& w_in, const deepesn::Matrix& w_hat, double leak,
                                             const deepesn::Matrix& inputs) {
    const Eigen::MatrixXd Win = to_eigen(w_in), Wh = to_eigen(w_hat), U = to_eigen(inputs);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(Win.rows()), acc = Eigen::VectorXd::Zero(Win.rows());
    for (Eigen::Index t = 0; t < U.cols(); ++t) {
        const Eigen::VectorXd pre = Win * U.col(t) + Wh * x;
        x = (1.0 - leak) * x + leak * pre.array().tanh().matrix();
        acc += x;
    }
    acc /= static_cast<double>(U.cols());
    return {acc.data(), acc.data() + acc.size()};
}

} // namespace oracle
