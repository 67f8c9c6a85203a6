#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "calib/errors.hpp"

namespace calib {

enum class KernelFamily { gauss, exponential, matern3_2, matern5_2 };

inline std::string to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::gauss: return "gauss";
        case KernelFamily::exponential: return "exp";
        case KernelFamily::matern3_2: return "matern3_2";
        case KernelFamily::matern5_2: return "matern5_2";
    }
    throw domain_error("unknown kernel family");
}

inline KernelFamily kernel_family_from_string(const std::string& s) {
    if (s == "gauss") return KernelFamily::gauss;
    if (s == "exp") return KernelFamily::exponential;
    if (s == "matern3_2") return KernelFamily::matern3_2;
    if (s == "matern5_2") return KernelFamily::matern5_2;
    throw config_error("unknown kernel family '" + s + "'");
}

// Correlation at lengthscale-scaled distance u >= 0, unit variance.
inline double base_correlation(KernelFamily family, double u) {
    switch (family) {
        case KernelFamily::gauss:
            return std::exp(-0.5 * u * u);
        case KernelFamily::exponential:
            return std::exp(-0.5 * u);
        case KernelFamily::matern3_2: {
            const double a = std::sqrt(3.0) * u;
            return (1 + a) * std::exp(-a);
        }
        case KernelFamily::matern5_2: {
            const double a = std::sqrt(5.0) * u;
            return (1 + a + a * a / 3.0) * std::exp(-a);
        }
    }
    throw domain_error("unknown kernel family");
}

// Stationary covariance: variance sigma2, per-dimension lengthscales
// (isotropic when a single lengthscale is given).
struct KernelSpec {
    KernelFamily family = KernelFamily::gauss;
    double variance = 1.0;
    Eigen::VectorXd lengthscales = Eigen::VectorXd::Ones(1);

    void validate() const {
        if (variance <= 0) throw domain_error("kernel variance must be positive");
        if (lengthscales.size() < 1 || (lengthscales.array() <= 0).any())
            throw domain_error("kernel lengthscales must be positive");
    }
};

inline double kernel_value(const KernelSpec& spec, double d) {
    spec.validate();
    if (d < 0) throw domain_error("kernel distance must be nonnegative");
    return spec.variance * base_correlation(spec.family, d / spec.lengthscales(0));
}

// Entry (i,j) is the kernel at the lengthscale-scaled Euclidean distance
// between row i of A and row j of B.
inline Eigen::MatrixXd covariance_matrix(const KernelSpec& spec, const Eigen::MatrixXd& A,
                                         const Eigen::MatrixXd& B) {
    spec.validate();
    if (A.cols() != B.cols())
        throw structural_error("covariance inputs must share column count");
    const Eigen::Index q = A.cols();
    Eigen::VectorXd psi;
    if (spec.lengthscales.size() == 1)
        psi = Eigen::VectorXd::Constant(q, spec.lengthscales(0));
    else if (spec.lengthscales.size() == q)
        psi = spec.lengthscales;
    else
        throw structural_error("lengthscale count does not match input dimension");

    Eigen::MatrixXd out(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            const double u = ((A.row(i) - B.row(j)).transpose().array() / psi.array())
                                 .matrix()
                                 .norm();
            out(i, j) = spec.variance * base_correlation(spec.family, u);
        }
    return out;
}

}  // namespace calib
