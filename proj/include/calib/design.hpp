#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calib/csv.hpp"
#include "calib/errors.hpp"
#include "calib/rng.hpp"

namespace calib {

struct DesignOfExperiments {
    Eigen::MatrixXd points;  // n_d x q, original units
    Eigen::VectorXd binf;
    Eigen::VectorXd bsup;
    enum class Provenance { generated, user_supplied } provenance = Provenance::generated;

    void validate() const {
        if (binf.size() != points.cols() || bsup.size() != points.cols())
            throw structural_error("design bounds do not match point dimension");
        if ((binf.array() >= bsup.array()).any())
            throw domain_error("design requires binf < bsup componentwise");
        for (Eigen::Index i = 0; i < points.rows(); ++i)
            if ((points.row(i).transpose().array() < binf.array()).any() ||
                (points.row(i).transpose().array() > bsup.array()).any())
                throw domain_error("design point outside its bounds");
    }
};

inline double min_pairwise_distance(const Eigen::MatrixXd& pts) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        for (Eigen::Index j = i + 1; j < pts.rows(); ++j)
            best = std::min(best, (pts.row(i) - pts.row(j)).norm());
    return best;
}

// Plain unit-cube LHS: one point per stratum [(k-1)/n, k/n) per column.
inline Eigen::MatrixXd lhs_unit(int n, int q, Rng& rng) {
    if (n < 2) throw domain_error("LHS requires n >= 2");
    if (q < 1) throw domain_error("LHS requires q >= 1");
    Eigen::MatrixXd pts(n, q);
    std::vector<int> perm(static_cast<size_t>(n));
    for (int j = 0; j < q; ++j) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int i = 0; i < n; ++i)
            pts(i, j) = (perm[static_cast<size_t>(i)] + runif(rng)) / n;
    }
    return pts;
}

// Maximin improvement by greedy within-column pair swaps; swaps preserve the
// LHS stratification. Budget defaults to 10*n*q attempted swaps.
inline Eigen::MatrixXd lhs_maximin(int n, int q, std::uint64_t seed, int iterations = -1) {
    Rng rng(seed);
    Eigen::MatrixXd pts = lhs_unit(n, q, rng);
    if (iterations < 0) iterations = 10 * n * q;
    double current = min_pairwise_distance(pts);
    std::uniform_int_distribution<int> row_dist(0, n - 1), col_dist(0, q - 1);
    for (int it = 0; it < iterations; ++it) {
        int j = col_dist(rng);
        int r1 = row_dist(rng), r2 = row_dist(rng);
        if (r1 == r2) continue;
        std::swap(pts(r1, j), pts(r2, j));
        double candidate = min_pairwise_distance(pts);
        if (candidate >= current)
            current = candidate;
        else
            std::swap(pts(r1, j), pts(r2, j));  // revert
    }
    return pts;
}

inline Eigen::MatrixXd unscale(const Eigen::MatrixXd& unit, const Eigen::VectorXd& binf,
                               const Eigen::VectorXd& bsup) {
    if (binf.size() != unit.cols() || bsup.size() != unit.cols())
        throw structural_error("unscale bounds do not match design dimension");
    if ((binf.array() >= bsup.array()).any())
        throw domain_error("unscale requires binf < bsup componentwise");
    if ((unit.array() < 0).any() || (unit.array() > 1).any())
        throw domain_error("unscale expects entries in [0,1]");
    Eigen::MatrixXd out = unit;
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        out.col(j) = binf(j) + (bsup(j) - binf(j)) * out.col(j).array();
    return out;
}

inline Eigen::MatrixXd to_unit_cube(const Eigen::MatrixXd& pts, const Eigen::VectorXd& binf,
                                    const Eigen::VectorXd& bsup) {
    Eigen::MatrixXd out = pts;
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        out.col(j) = (out.col(j).array() - binf(j)) / (bsup(j) - binf(j));
    return out;
}

// Joint maximin LHS over input space x parameter space, in original units.
inline DesignOfExperiments joint_design(const Eigen::VectorXd& x_low, const Eigen::VectorXd& x_high,
                                        const Eigen::VectorXd& theta_low,
                                        const Eigen::VectorXd& theta_high, int n,
                                        std::uint64_t seed, int iterations = -1) {
    if (x_low.size() != x_high.size() || theta_low.size() != theta_high.size())
        throw structural_error("inconsistent bound dimensions");
    const Eigen::Index d = x_low.size(), p = theta_low.size();
    DesignOfExperiments doe;
    doe.binf.resize(d + p);
    doe.bsup.resize(d + p);
    doe.binf << x_low, theta_low;
    doe.bsup << x_high, theta_high;
    doe.points = unscale(lhs_maximin(n, static_cast<int>(d + p), seed, iterations),
                         doe.binf, doe.bsup);
    doe.provenance = DesignOfExperiments::Provenance::generated;
    doe.validate();
    return doe;
}

inline std::vector<std::string> doe_header(Eigen::Index d, Eigen::Index p) {
    std::vector<std::string> h;
    for (Eigen::Index j = 0; j < d; ++j) h.push_back("x" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < p; ++j) h.push_back("theta" + std::to_string(j + 1));
    return h;
}

inline void write_doe_csv(const std::string& path, const DesignOfExperiments& doe,
                          Eigen::Index d) {
    write_csv(path, doe_header(d, doe.points.cols() - d), doe.points);
}

}  // namespace calib
