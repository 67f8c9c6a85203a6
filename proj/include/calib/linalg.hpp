#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "calib/errors.hpp"

namespace calib {

// Cholesky with a relative jitter ladder; throws conditioning_error when the
// matrix stays indefinite at the largest jitter.
inline Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(const Eigen::MatrixXd& cov,
                                                        double rel_jitter_start = 1e-10,
                                                        double rel_jitter_max = 1e-6) {
    const double scale = std::max(cov.diagonal().mean(), 1e-300);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return llt;
    for (double rel = rel_jitter_start; rel <= rel_jitter_max * 1.0000001; rel *= 10) {
        Eigen::MatrixXd jittered = cov;
        jittered.diagonal().array() += rel * scale;
        llt.compute(jittered);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw conditioning_error("covariance not positive definite after jitter escalation");
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Multivariate normal log density via a precomputed Cholesky factor.
inline double mvn_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                              const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const Eigen::Index n = x.size();
    Eigen::VectorXd z = llt.matrixL().solve(x - mean);
    return -0.5 * n * std::log(2 * M_PI) - 0.5 * log_det_from_llt(llt) - 0.5 * z.squaredNorm();
}

inline double mvn_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                              const Eigen::MatrixXd& cov) {
    return mvn_log_density(x, mean, cholesky_with_jitter(cov));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); }

// Two-sided z for the 95% band, pinned.
inline constexpr double kZ95 = 1.959964;

}  // namespace calib
