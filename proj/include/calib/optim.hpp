#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "calib/errors.hpp"

namespace calib {

// Bounded derivative-free minimization: Nelder-Mead with box projection.
// Good enough for low-dimensional hyperparameter profiles.
struct NelderMeadOptions {
    int max_iterations = 400;
    double f_tolerance = 1e-10;
    double x_tolerance = 1e-10;
    double initial_step = 0.5;
};

struct NelderMeadResult {
    Eigen::VectorXd x;
    double f = 0;
    int evaluations = 0;
};

inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                                    const Eigen::VectorXd& start, const Eigen::VectorXd& lower,
                                    const Eigen::VectorXd& upper,
                                    const NelderMeadOptions& opts = {}) {
    const Eigen::Index n = start.size();
    if (lower.size() != n || upper.size() != n)
        throw structural_error("optimizer bounds do not match start dimension");

    auto clamp = [&](Eigen::VectorXd v) {
        for (Eigen::Index i = 0; i < n; ++i) v(i) = std::clamp(v(i), lower(i), upper(i));
        return v;
    };

    int evals = 0;
    auto eval = [&](const Eigen::VectorXd& v) {
        ++evals;
        return objective(v);
    };

    std::vector<Eigen::VectorXd> simplex;
    std::vector<double> fvals;
    simplex.push_back(clamp(start));
    fvals.push_back(eval(simplex[0]));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd v = simplex[0];
        double step = opts.initial_step * std::max(1e-3, upper(i) - lower(i)) * 0.25;
        v(i) = (v(i) + step <= upper(i)) ? v(i) + step : v(i) - step;
        simplex.push_back(clamp(v));
        fvals.push_back(eval(simplex.back()));
    }

    const size_t m = simplex.size();
    std::vector<size_t> order(m);
    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        for (size_t i = 0; i < m; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return fvals[a] < fvals[b]; });

        const size_t best = order[0], worst = order[m - 1], second_worst = order[m - 2];
        double spread = 0;
        for (size_t i = 1; i < m; ++i)
            spread = std::max(spread, (simplex[order[i]] - simplex[best]).norm());
        if (std::abs(fvals[worst] - fvals[best]) < opts.f_tolerance && spread < opts.x_tolerance)
            break;

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (size_t i = 0; i + 1 < m; ++i) centroid += simplex[order[i]];
        centroid /= static_cast<double>(m - 1);

        Eigen::VectorXd reflected = clamp(centroid + (centroid - simplex[worst]));
        double f_ref = eval(reflected);
        if (f_ref < fvals[order[0]]) {
            Eigen::VectorXd expanded = clamp(centroid + 2.0 * (centroid - simplex[worst]));
            double f_exp = eval(expanded);
            if (f_exp < f_ref) {
                simplex[worst] = expanded;
                fvals[worst] = f_exp;
            } else {
                simplex[worst] = reflected;
                fvals[worst] = f_ref;
            }
        } else if (f_ref < fvals[second_worst]) {
            simplex[worst] = reflected;
            fvals[worst] = f_ref;
        } else {
            Eigen::VectorXd contracted = clamp(centroid + 0.5 * (simplex[worst] - centroid));
            double f_con = eval(contracted);
            if (f_con < fvals[worst]) {
                simplex[worst] = contracted;
                fvals[worst] = f_con;
            } else {
                for (size_t i = 1; i < m; ++i) {
                    size_t idx = order[i];
                    simplex[idx] = clamp(simplex[best] + 0.5 * (simplex[idx] - simplex[best]));
                    fvals[idx] = eval(simplex[idx]);
                }
            }
        }
    }

    size_t best = 0;
    for (size_t i = 1; i < m; ++i)
        if (fvals[i] < fvals[best]) best = i;
    return {simplex[best], fvals[best], evals};
}

}  // namespace calib
