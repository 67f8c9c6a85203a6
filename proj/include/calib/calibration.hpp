#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "calib/design.hpp"
#include "calib/emulator.hpp"
#include "calib/errors.hpp"
#include "calib/linalg.hpp"
#include "calib/models.hpp"
#include "calib/priors.hpp"
#include "calib/sampler.hpp"

namespace calib {

struct CVOptions {
    int n_cv = 0;  // leave-one-out fold count
};

struct CVRow {
    int index = 0;
    double predicted = 0, real = 0, error = 0;
};

struct CVReport {
    std::vector<CVRow> rows;
    double rmse = 0;
    double cover_rate = 0;
    std::string method = "loo";
};

struct CalibrationResult {
    StatModelSpec spec;
    PriorSet priors;
    std::vector<ChainResult> chains;
    Eigen::VectorXd map;
    Eigen::VectorXd mean;
    double map_log_post = 0;
    std::vector<BandTable> bands;  // at the MAP, over the calibration inputs
    std::optional<CVReport> cv;
    std::optional<GelmanRubinResult> diagnostics;
    EstimOptions opts;
    std::uint64_t seed = 0;

    Eigen::MatrixXd pooled_samples() const {
        if (chains.empty()) throw state_error("no chains in calibration result");
        const Eigen::Index dim = chains[0].mh_samples.cols();
        Eigen::Index total = 0;
        for (const auto& c : chains) total += c.mh_samples.rows();
        Eigen::MatrixXd pooled(total, dim);
        Eigen::Index row = 0;
        for (const auto& c : chains) {
            pooled.middleRows(row, c.mh_samples.rows()) = c.mh_samples;
            row += c.mh_samples.rows();
        }
        return pooled;
    }
};

inline LogDensity make_log_posterior(const StatModelSpec& spec, const PriorSet& priors) {
    return [&spec, &priors](const Eigen::VectorXd& v) { return log_posterior(spec, priors, v); };
}

// Posterior sampling plus MAP/mean estimators and MAP predictive bands.
inline CalibrationResult calibrate(const StatModelSpec& spec, const PriorSet& priors,
                                   const EstimOptions& opts, std::uint64_t master_seed,
                                   int workers = 1) {
    spec.validate();
    priors.validate_for(spec.layout);
    opts.validate();
    if (opts.theta_init.size() != spec.layout.total())
        throw structural_error("thetaInit length does not match the parameter layout");
    if (!std::isfinite(log_prior_total(priors, opts.theta_init)))
        throw domain_error("thetaInit lies outside the prior support");

    CalibrationResult result;
    result.spec = spec;
    result.priors = priors;
    result.opts = opts;
    result.seed = master_seed;
    LogDensity target = make_log_posterior(result.spec, result.priors);
    result.chains = run_chains(target, opts, master_seed, workers);

    // MAP: retained sample with the highest stored log posterior.
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : result.chains)
        for (Eigen::Index i = 0; i < c.log_post.size(); ++i)
            if (c.log_post(i) > best) {
                best = c.log_post(i);
                result.map = c.mh_samples.row(i);
            }
    result.map_log_post = best;
    result.mean = result.pooled_samples().colwise().mean();

    result.bands = predictive_bands(result.spec, result.map);
    if (opts.nchains > 1) {
        std::vector<Eigen::MatrixXd> sample_sets;
        for (const auto& c : result.chains) sample_sets.push_back(c.mh_samples);
        result.diagnostics = gelman_rubin(sample_sets);
    }
    return result;
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> estimators(const CalibrationResult& result) {
    if (result.chains.empty() || result.map.size() == 0)
        throw state_error("estimators require a calibrated result with retained samples");
    return {result.map, result.mean};
}

namespace detail {

// MAP-plug-in predictive mean and err-band half variance at a single input.
inline std::pair<double, double> point_prediction(const StatModelSpec& spec,
                                                  const Eigen::VectorXd& v,
                                                  const Eigen::VectorXd& x) {
    SplitParams s = split_parameters(v, spec.layout);
    double mean;
    if (uses_emulator(spec.kind)) {
        Eigen::MatrixXd t(1, x.size() + s.theta.size());
        t << x.transpose(), s.theta.transpose();
        mean = spec.emulator->predict(t).first(0);
    } else {
        mean = (*spec.code)(x, s.theta);
    }
    double var = s.noise_var;
    if (s.disc) var += s.disc->first;  // zero-distance discrepancy variance
    return {mean, var};
}

}  // namespace detail

// Leave-one-out cross validation: nCV distinct held-out indices, each fold
// recalibrated on the remaining observations, the left-out point predicted at
// the fold MAP. Folds are independently seeded and may run concurrently.
inline CVReport cross_validate_loo(const StatModelSpec& spec, const PriorSet& priors,
                                   const EstimOptions& opts, int n_cv,
                                   std::uint64_t master_seed, int workers = 1) {
    spec.validate();
    const int n = static_cast<int>(spec.data.n());
    if (n_cv < 1 || n_cv > n) throw domain_error("nCV must lie in [1, n]");

    std::vector<int> indices(static_cast<size_t>(n));
    std::iota(indices.begin(), indices.end(), 0);
    Rng pick(derive_seed(master_seed, 0xC5F01DULL));
    std::shuffle(indices.begin(), indices.end(), pick);
    indices.resize(static_cast<size_t>(n_cv));
    std::sort(indices.begin(), indices.end());

    std::vector<CVRow> rows(static_cast<size_t>(n_cv));
    std::vector<char> covered(static_cast<size_t>(n_cv), 0);
    auto run_fold = [&](int f) {
        const int left_out = indices[static_cast<size_t>(f)];
        Eigen::MatrixXd x_train(n - 1, spec.data.d());
        Eigen::VectorXd y_train(n - 1);
        Eigen::Index r = 0;
        for (int i = 0; i < n; ++i) {
            if (i == left_out) continue;
            x_train.row(r) = spec.data.X.row(i);
            y_train(r) = spec.data.y(i);
            ++r;
        }
        StatModelSpec fold_spec = spec;
        fold_spec.data = ObservationSet(x_train, y_train);
        CalibrationResult fold = calibrate(fold_spec, priors, opts,
                                           derive_seed(master_seed, static_cast<std::uint64_t>(f) + 1));
        auto [predicted, var] = detail::point_prediction(fold_spec, fold.map,
                                                         spec.data.X.row(left_out));
        const double real = spec.data.y(left_out);
        rows[static_cast<size_t>(f)] = {left_out, predicted, real, std::abs(predicted - real)};
        covered[static_cast<size_t>(f)] = std::abs(predicted - real) <= kZ95 * std::sqrt(var);
    };

    if (workers <= 1) {
        for (int f = 0; f < n_cv; ++f) run_fold(f);
    } else {
        std::vector<std::future<void>> futures;
        int next = 0;
        // simple bounded fan-out
        while (next < n_cv || !futures.empty()) {
            while (next < n_cv && static_cast<int>(futures.size()) < workers)
                futures.push_back(std::async(std::launch::async, run_fold, next++));
            futures.front().get();
            futures.erase(futures.begin());
        }
    }

    CVReport report;
    report.rows = std::move(rows);
    double sq = 0;
    int cover = 0;
    for (size_t f = 0; f < report.rows.size(); ++f) {
        sq += report.rows[f].error * report.rows[f].error;
        cover += covered[f];
    }
    report.rmse = std::sqrt(sq / n_cv);
    report.cover_rate = static_cast<double>(cover) / n_cv;
    return report;
}

inline CalibrationResult calibrate(const StatModelSpec& spec, const PriorSet& priors,
                                   const EstimOptions& opts, const CVOptions& cv,
                                   std::uint64_t master_seed, int workers = 1) {
    CalibrationResult result = calibrate(spec, priors, opts, master_seed, workers);
    if (cv.n_cv > 0)
        result.cv = cross_validate_loo(spec, priors, opts, cv.n_cv, master_seed, workers);
    return result;
}

struct ForecastTable {
    Eigen::MatrixXd x;
    Eigen::VectorXd mean, lower, upper;
    std::vector<std::string> band_kind;
    std::vector<std::string> region;  // "calibration" | "forecast"
};

// MAP plug-in prediction over new inputs, concatenated after the calibration
// bands and flagged by region.
inline ForecastTable forecast(const CalibrationResult& result, const Eigen::MatrixXd& x_new) {
    if (result.map.size() == 0) throw state_error("forecast requires a calibrated result");
    if (x_new.size() > 0 && x_new.cols() != result.spec.data.d())
        throw structural_error("forecast input dimension does not match calibration data");

    ForecastTable table;
    Eigen::Index total = 0;
    for (const auto& band : result.bands) total += band.mean.size();
    const Eigen::Index m = x_new.rows();
    const int band_count = static_cast<int>(result.bands.size());
    total += m * band_count;

    table.x.resize(total, result.spec.data.d());
    table.mean.resize(total);
    table.lower.resize(total);
    table.upper.resize(total);
    Eigen::Index row = 0;
    for (const auto& band : result.bands) {
        for (Eigen::Index i = 0; i < band.mean.size(); ++i, ++row) {
            table.x.row(row) = result.spec.data.X.row(i);
            table.mean(row) = band.mean(i);
            table.lower(row) = band.lower(i);
            table.upper(row) = band.upper(i);
            table.band_kind.push_back(band.kind);
            table.region.emplace_back("calibration");
        }
    }

    if (m > 0) {
        SplitParams s = split_parameters(result.map, result.spec.layout);
        Eigen::VectorXd mean(m);
        Eigen::VectorXd gp_var = Eigen::VectorXd::Zero(m);
        if (uses_emulator(result.spec.kind)) {
            Eigen::MatrixXd t(m, x_new.cols() + s.theta.size());
            t.leftCols(x_new.cols()) = x_new;
            t.rightCols(s.theta.size()).rowwise() = s.theta.transpose();
            auto [gp_mean, gp_cov] = result.spec.emulator->predict(t);
            mean = gp_mean;
            gp_var = gp_cov.diagonal().cwiseMax(0.0);
        } else {
            for (Eigen::Index i = 0; i < m; ++i)
                mean(i) = (*result.spec.code)(x_new.row(i), s.theta);
        }
        double err_var = s.noise_var + (s.disc ? s.disc->first : 0.0);
        for (const auto& band : result.bands) {
            for (Eigen::Index i = 0; i < m; ++i, ++row) {
                const double hw = band.kind == "GP" ? kZ95 * std::sqrt(gp_var(i))
                                                   : kZ95 * std::sqrt(err_var);
                table.x.row(row) = x_new.row(i);
                table.mean(row) = mean(i);
                table.lower(row) = mean(i) - hw;
                table.upper(row) = mean(i) + hw;
                table.band_kind.push_back(band.kind);
                table.region.emplace_back("forecast");
            }
        }
    }
    return table;
}

// Expected improvement of candidates under a GP objective model, given the
// best observed objective value.
inline Eigen::VectorXd expected_improvement(const EmulatorModel& objective_model, double f_min,
                                            const Eigen::MatrixXd& candidates) {
    auto [mean, cov] = objective_model.predict(candidates);
    Eigen::VectorXd ei(candidates.rows());
    for (Eigen::Index i = 0; i < ei.size(); ++i) {
        const double s = std::sqrt(std::max(cov(i, i), 0.0));
        const double improvement = f_min - mean(i);
        if (s < 1e-12) {
            ei(i) = std::max(0.0, improvement);
        } else {
            const double z = improvement / s;
            ei(i) = improvement * normal_cdf(z) + s * normal_pdf(z);
        }
    }
    return ei;
}

struct DesignStep {
    Eigen::VectorXd theta_star;
    double ei = 0;
    double ss = 0;  // sum of squares at theta_star after evaluation
    Eigen::VectorXd map;
};

struct SequentialDesignResult {
    StatModelSpec spec;  // with the enriched, refitted emulator
    std::vector<DesignStep> trace;
    bool converged = false;
};

namespace detail {

// A finite box covering the bulk of the prior support for the theta slots.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> theta_prior_box(const PriorSet& priors, int p) {
    Eigen::VectorXd lo(p), hi(p);
    for (int j = 0; j < p; ++j) {
        const auto& prior = priors.slots[static_cast<size_t>(j)];
        switch (prior.family()) {
            case PriorFamily::uniform:
                lo(j) = prior.param1();
                hi(j) = prior.param2();
                break;
            case PriorFamily::gaussian: {
                const double sd = std::sqrt(prior.param2());
                lo(j) = prior.param1() - 4 * sd;
                hi(j) = prior.param1() + 4 * sd;
                break;
            }
            case PriorFamily::gamma: {
                const double mean = prior.param1() * prior.param2();
                const double sd = std::sqrt(prior.param1()) * prior.param2();
                lo(j) = std::max(1e-12, mean - 4 * sd);
                hi(j) = mean + 4 * sd;
                break;
            }
        }
    }
    return {lo, hi};
}

inline double sum_of_squares(const StatModelSpec& spec, const Eigen::VectorXd& theta) {
    double ss = 0;
    auto [mean, cov] = spec.emulator->predict(emulator_inputs(spec.data, theta));
    (void)cov;
    for (Eigen::Index i = 0; i < spec.data.n(); ++i) {
        const double r = spec.data.y(i) - mean(i);
        ss += r * r;
    }
    return ss;
}

}  // namespace detail

// Expected-improvement enrichment of the emulator design for M2/M4: each step
// picks the theta minimizing the emulated misfit SS(theta), runs the code at
// (x_i, theta*) for every observation input, and refits the emulator.
inline SequentialDesignResult sequential_design(const StatModelSpec& spec, const PriorSet& priors,
                                                const EstimOptions& opts, int k,
                                                int candidate_budget, std::uint64_t seed,
                                                const EmulatorFitOptions& fit_opts = {}) {
    spec.validate();
    if (!uses_emulator(spec.kind))
        throw unsupported_error("sequential design requires a surrogate model (M2/M4)");
    if (!spec.code)
        throw unsupported_error("sequential design requires a live simulator code");
    if (candidate_budget < 2) throw domain_error("candidate budget must be >= 2");

    SequentialDesignResult out;
    out.spec = spec;
    if (k == 0) return out;

    const int d = static_cast<int>(spec.data.d());
    const int p = spec.layout.p;
    auto [theta_lo, theta_hi] = detail::theta_prior_box(priors, p);

    for (int step = 0; step < k; ++step) {
        CalibrationResult fit =
            calibrate(out.spec, priors, opts, derive_seed(seed, 1000 + static_cast<std::uint64_t>(step)));

        // Misfit objective at the design's theta slices.
        const Eigen::MatrixXd& design = out.spec.emulator->design();
        Eigen::MatrixXd theta_slices = design.rightCols(p);
        Eigen::VectorXd ss_values(theta_slices.rows());
        for (Eigen::Index i = 0; i < theta_slices.rows(); ++i)
            ss_values(i) = detail::sum_of_squares(out.spec, theta_slices.row(i));
        const double f_min = ss_values.minCoeff();

        EmulatorFitOptions obj_opts = fit_opts;
        obj_opts.seed = derive_seed(seed, 2000 + static_cast<std::uint64_t>(step));
        EmulatorModel objective =
            fit_emulator(theta_slices, ss_values, out.spec.emulator->kernel().family, theta_lo,
                         theta_hi, obj_opts);

        Eigen::MatrixXd candidates =
            unscale(lhs_maximin(candidate_budget, p,
                                derive_seed(seed, 3000 + static_cast<std::uint64_t>(step))),
                    theta_lo, theta_hi);
        Eigen::VectorXd ei = expected_improvement(objective, f_min, candidates);
        Eigen::Index best = 0;
        ei.maxCoeff(&best);

        DesignStep trace;
        trace.theta_star = candidates.row(best);
        trace.ei = ei(best);
        trace.map = fit.map;
        if (trace.ei < 1e-12) {
            out.converged = true;
            out.trace.push_back(trace);
            break;
        }

        // Run the code at (x_i, theta*) for every observation input.
        const Eigen::Index n = spec.data.n();
        Eigen::MatrixXd new_rows(n, d + p);
        Eigen::VectorXd new_outputs(n);
        double ss_star = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            new_rows.row(i).head(d) = spec.data.X.row(i);
            new_rows.row(i).tail(p) = trace.theta_star.transpose();
            new_outputs(i) = (*spec.code)(spec.data.X.row(i), trace.theta_star);
            const double r = spec.data.y(i) - new_outputs(i);
            ss_star += r * r;
        }
        trace.ss = ss_star;
        out.trace.push_back(trace);

        Eigen::MatrixXd enriched(design.rows() + n, design.cols());
        enriched << design, new_rows;
        Eigen::VectorXd outputs(enriched.rows());
        outputs << out.spec.emulator->outputs(), new_outputs;

        EmulatorFitOptions refit_opts = fit_opts;
        refit_opts.seed = derive_seed(seed, 4000 + static_cast<std::uint64_t>(step));
        out.spec.emulator = std::make_shared<EmulatorModel>(
            fit_emulator(enriched, outputs, out.spec.emulator->kernel().family,
                         out.spec.emulator->lower(), out.spec.emulator->upper(), refit_opts));
    }
    return out;
}

}  // namespace calib
