#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "calib/csv.hpp"
#include "calib/errors.hpp"

namespace calib {

// Field data: inputs X (n x d) paired row-wise with measurements y.
struct ObservationSet {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;

    ObservationSet() = default;
    ObservationSet(Eigen::MatrixXd X_, Eigen::VectorXd y_)
        : X(std::move(X_)), y(std::move(y_)) {
        if (X.rows() != y.size())
            throw structural_error("observation count mismatch between X and y");
        if (X.rows() < 2) throw domain_error("at least 2 observations required");
        if (X.cols() < 1) throw domain_error("at least 1 input dimension required");
        if (!X.allFinite() || !y.allFinite())
            throw domain_error("non-finite entries in observations");
    }

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index d() const { return X.cols(); }
};

// Flat sampler state is [theta_1..theta_p, sigma_delta2, psi_delta, sigma_e2],
// the discrepancy pair present only when has_discrepancy is set.
struct ParameterLayout {
    int p = 0;
    bool has_discrepancy = false;

    int total() const { return p + (has_discrepancy ? 3 : 1); }
};

struct ParameterVector {
    Eigen::VectorXd values;
    ParameterLayout layout;
};

struct SplitParams {
    Eigen::VectorXd theta;
    std::optional<std::pair<double, double>> disc;  // (sigma_delta2, psi_delta)
    double noise_var = 0;

    Eigen::VectorXd concat() const {
        Eigen::VectorXd v(theta.size() + (disc ? 3 : 1));
        v.head(theta.size()) = theta;
        Eigen::Index i = theta.size();
        if (disc) {
            v(i++) = disc->first;
            v(i++) = disc->second;
        }
        v(i) = noise_var;
        return v;
    }
};

inline SplitParams split_parameters(const Eigen::VectorXd& v, const ParameterLayout& layout) {
    if (v.size() != layout.total())
        throw structural_error("parameter vector length " + std::to_string(v.size()) +
                               " does not match layout total " + std::to_string(layout.total()));
    SplitParams s;
    s.theta = v.head(layout.p);
    if (layout.has_discrepancy) {
        double sd2 = v(layout.p), psi = v(layout.p + 1);
        if (sd2 <= 0 || psi <= 0)
            throw domain_error("discrepancy variance and lengthscale must be positive");
        s.disc = std::make_pair(sd2, psi);
    }
    s.noise_var = v(v.size() - 1);
    if (s.noise_var <= 0) throw domain_error("measurement-error variance must be positive");
    return s;
}

inline SplitParams split_parameters(const ParameterVector& v) {
    return split_parameters(v.values, v.layout);
}

// Checks layout invariants without splitting; true iff split_parameters would succeed.
inline bool parameters_valid(const Eigen::VectorXd& v, const ParameterLayout& layout) {
    if (v.size() != layout.total()) return false;
    if (!v.allFinite()) return false;
    if (layout.has_discrepancy && (v(layout.p) <= 0 || v(layout.p + 1) <= 0)) return false;
    return v(v.size() - 1) > 0;
}

// A deterministic scalar-output simulator f(x, theta).
struct SimulatorCode {
    std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> evaluator;
    int p = 0;

    double operator()(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
        return evaluator(x, theta);
    }
};

// Damped harmonic oscillator displacement, theta = (A, xi, k, m, phi).
inline double oscillator_code(double t, const Eigen::VectorXd& theta) {
    if (theta.size() != 5) throw structural_error("oscillator expects 5 parameters");
    const double amp = theta(0), xi = theta(1), k = theta(2), m = theta(3), phi = theta(4);
    if (m <= 0 || k <= 0) throw domain_error("oscillator requires k > 0 and m > 0");
    if (std::abs(xi) >= 1) throw domain_error("oscillator requires |xi| < 1 (under-damped)");
    const double w0 = std::sqrt(k / m);
    return amp * std::exp(-xi * w0 * t) * std::sin(std::sqrt(1 - xi * xi) * w0 * t + phi);
}

inline SimulatorCode oscillator_simulator() {
    return SimulatorCode{
        [](const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
            return oscillator_code(x(0), theta);
        },
        5};
}

// CSV ingestion: header x1..xd then y, one observation per row.
inline ObservationSet read_observations_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    if (t.header.size() < 2 || t.header.back() != "y")
        throw config_error(path + ": expected columns x1..xd,y");
    for (size_t j = 0; j + 1 < t.header.size(); ++j)
        if (t.header[j] != "x" + std::to_string(j + 1))
            throw config_error(path + ": column " + std::to_string(j + 1) +
                               " must be named x" + std::to_string(j + 1));
    Eigen::Index d = static_cast<Eigen::Index>(t.header.size()) - 1;
    return ObservationSet(t.values.leftCols(d), t.values.col(d));
}

inline void write_observations_csv(const std::string& path, const ObservationSet& obs) {
    std::vector<std::string> header;
    for (Eigen::Index j = 0; j < obs.d(); ++j) header.push_back("x" + std::to_string(j + 1));
    header.push_back("y");
    Eigen::MatrixXd m(obs.n(), obs.d() + 1);
    m.leftCols(obs.d()) = obs.X;
    m.col(obs.d()) = obs.y;
    write_csv(path, header, m);
}

}  // namespace calib
