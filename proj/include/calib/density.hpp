#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "calib/errors.hpp"
#include "calib/linalg.hpp"

namespace calib {

// Silverman's rule-of-thumb bandwidth for a Gaussian KDE.
inline double silverman_bandwidth(const Eigen::VectorXd& x) {
    const Eigen::Index n = x.size();
    if (n < 2) throw domain_error("bandwidth requires at least 2 samples");
    const double sd = std::sqrt((x.array() - x.mean()).square().sum() / (n - 1));
    Eigen::VectorXd sorted = x;
    std::sort(sorted.data(), sorted.data() + n);
    auto quantile = [&](double q) {
        const double pos = q * (n - 1);
        const Eigen::Index lo = static_cast<Eigen::Index>(pos);
        const double frac = pos - lo;
        return lo + 1 < n ? sorted(lo) * (1 - frac) + sorted(lo + 1) * frac : sorted(lo);
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = std::min(sd, iqr / 1.349);
    if (spread <= 0) spread = std::max(sd, 1e-12);
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

// Gaussian KDE evaluated on a regular grid spanning the sample range padded by
// three bandwidths; returns (grid, density).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gaussian_kde(const Eigen::VectorXd& x,
                                                                int grid_n = 512) {
    if (grid_n < 2) throw domain_error("KDE grid needs at least 2 points");
    const double h = silverman_bandwidth(x);
    const double lo = x.minCoeff() - 3 * h, hi = x.maxCoeff() + 3 * h;
    Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(grid_n, lo, hi);
    Eigen::VectorXd density(grid_n);
    const Eigen::Index n = x.size();
    for (int g = 0; g < grid_n; ++g) {
        double s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s += normal_pdf((grid(g) - x(i)) / h);
        density(g) = s / (n * h);
    }
    return {std::move(grid), std::move(density)};
}

}  // namespace calib
