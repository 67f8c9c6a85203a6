#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "calib/errors.hpp"
#include "calib/linalg.hpp"
#include "calib/rng.hpp"

namespace calib {

using LogDensity = std::function<double(const Eigen::VectorXd&)>;

// Two-stage adaptive MCMC options. r holds the acceptance-rate regulation
// factors, r[0] for the within-Gibbs scales k_j and r[1] for the joint scale t.
struct EstimOptions {
    int ngibbs = 1000;
    int nmh = 5000;
    int burn_in = 0;
    int nchains = 1;
    Eigen::VectorXd theta_init;
    Eigen::Vector2d r{0.05, 0.05};
    Eigen::MatrixXd sig;  // initial proposal covariance, total x total
    bool mh_restart_init = false;

    void validate() const {
        const Eigen::Index dim = theta_init.size();
        if (dim < 1) throw structural_error("thetaInit must be nonempty");
        if (ngibbs < 0) throw domain_error("Ngibbs must be >= 0");
        if (nmh <= burn_in || burn_in < 0)
            throw domain_error("requires Nmh > burnIn >= 0");
        if (nchains < 1) throw domain_error("Nchains must be >= 1");
        if (r(0) < 0 || r(0) >= 1 || r(1) < 0 || r(1) >= 1)
            throw domain_error("regulation factors must lie in [0,1)");
        if (sig.rows() != dim || sig.cols() != dim)
            throw structural_error("sig must be total x total");
        if (!sig.isApprox(sig.transpose(), 1e-10) || (sig.diagonal().array() <= 0).any())
            throw domain_error("sig must be symmetric with positive diagonal");
    }
};

// One adaptation event: (iteration, coordinate or -1, scale value).
struct ScaleEvent {
    int iteration = 0;
    int coordinate = -1;
    double scale = 1.0;
};

struct GibbsResult {
    Eigen::MatrixXd samples;        // ngibbs x dim
    Eigen::VectorXd accept_rates;   // per coordinate
    Eigen::VectorXd final_scales;   // k_j
    std::vector<ScaleEvent> scale_history;
    Eigen::VectorXd last_state;
    double last_log_post = 0;
    // acceptance rate per coordinate over the final adaptation window
    Eigen::VectorXd late_accept_rates;
};

// Stage 1: componentwise random-walk Metropolis with per-coordinate scale k_j
// adapted every 100 iterations from the cumulative acceptance rate.
inline GibbsResult metropolis_within_gibbs(const LogDensity& target, const EstimOptions& opts,
                                           Rng& rng) {
    opts.validate();
    const Eigen::Index dim = opts.theta_init.size();
    Eigen::VectorXd state = opts.theta_init;
    double log_post = target(state);
    if (!std::isfinite(log_post))
        throw state_error("log posterior not finite at thetaInit");

    GibbsResult res;
    res.samples.resize(opts.ngibbs, dim);
    Eigen::VectorXd k = Eigen::VectorXd::Ones(dim);
    Eigen::VectorXd accepted = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd accepted_at_last_window = Eigen::VectorXd::Zero(dim);
    int last_window_start = 0;

    for (int i = 1; i <= opts.ngibbs; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            Eigen::VectorXd proposal = state;
            proposal(j) += std::sqrt(k(j) * opts.sig(j, j)) * rnorm(rng);
            const double cand = target(proposal);
            const double u = runif(rng);
            if (std::log(u) < cand - log_post) {
                state = proposal;
                log_post = cand;
                accepted(j) += 1;
            }
        }
        res.samples.row(i - 1) = state;
        if (i % 100 == 0) {
            accepted_at_last_window = accepted;
            last_window_start = i;
            for (Eigen::Index j = 0; j < dim; ++j) {
                const double rate = accepted(j) / i;
                if (rate < 0.25)
                    k(j) *= (1 - opts.r(0));
                else if (rate > 0.5)
                    k(j) *= (1 + opts.r(0));
                res.scale_history.push_back({i, static_cast<int>(j), k(j)});
            }
        }
    }
    res.accept_rates = opts.ngibbs > 0 ? (accepted / opts.ngibbs).eval()
                                       : Eigen::VectorXd::Zero(dim).eval();
    const int tail = opts.ngibbs - last_window_start;
    res.late_accept_rates = tail > 0
        ? ((accepted - accepted_at_last_window) / tail).eval()
        : res.accept_rates;
    res.final_scales = k;
    res.last_state = state;
    res.last_log_post = log_post;
    return res;
}

// Empirical covariance of stage-1 samples; diagonal floored so the joint
// proposal stays proper even for degenerate chains.
inline Eigen::MatrixXd learned_covariance(const Eigen::MatrixXd& samples,
                                          bool* degenerate = nullptr) {
    if (samples.rows() < 2) throw domain_error("covariance requires at least 2 samples");
    Eigen::MatrixXd centered = samples.rowwise() - samples.colwise().mean();
    Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
    cov = 0.5 * (cov + cov.transpose().eval());
    const double floor_value = std::max(1e-12 * cov.diagonal().maxCoeff(), 1e-300);
    bool floored = false;
    for (Eigen::Index j = 0; j < cov.cols(); ++j)
        if (cov(j, j) < floor_value) {
            cov(j, j) = floor_value;
            floored = true;
        }
    if (degenerate) *degenerate = floored;
    return cov;
}

struct MhResult {
    Eigen::MatrixXd samples;   // (nmh - burn_in) x dim
    Eigen::VectorXd log_post;  // aligned with samples
    double accept_rate = 0;
    double late_accept_rate = 0;
    double final_scale = 1.0;
    std::vector<ScaleEvent> scale_history;
    Eigen::VectorXd last_state;
};

// Stage 2: joint random-walk Metropolis with proposal covariance t*S and the
// same cumulative-rate adaptation of t every 100 iterations.
inline MhResult metropolis_hastings(const LogDensity& target, const Eigen::VectorXd& start,
                                    const Eigen::MatrixXd& S, const EstimOptions& opts,
                                    Rng& rng) {
    opts.validate();
    const Eigen::Index dim = start.size();
    if (S.rows() != dim || S.cols() != dim)
        throw structural_error("proposal covariance dimension mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt = cholesky_with_jitter(S, 1e-12, 1e-6);
    const Eigen::MatrixXd L = llt.matrixL();

    Eigen::VectorXd state = start;
    double log_post = target(state);
    if (!std::isfinite(log_post))
        throw state_error("log posterior not finite at the MH start point");

    MhResult res;
    res.samples.resize(opts.nmh - opts.burn_in, dim);
    res.log_post.resize(opts.nmh - opts.burn_in);
    double t = 1.0;
    int accepted = 0, accepted_at_last_window = 0, last_window_start = 0;

    Eigen::VectorXd z(dim);
    for (int i = 1; i <= opts.nmh; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) z(j) = rnorm(rng);
        Eigen::VectorXd proposal = state + std::sqrt(t) * (L * z);
        const double cand = target(proposal);
        const double u = runif(rng);
        if (std::log(u) < cand - log_post) {
            state = proposal;
            log_post = cand;
            ++accepted;
        }
        if (i > opts.burn_in) {
            res.samples.row(i - opts.burn_in - 1) = state;
            res.log_post(i - opts.burn_in - 1) = log_post;
        }
        if (i % 100 == 0) {
            accepted_at_last_window = accepted;
            last_window_start = i;
            const double rate = static_cast<double>(accepted) / i;
            if (rate < 0.25)
                t *= (1 - opts.r(1));
            else if (rate > 0.5)
                t *= (1 + opts.r(1));
            res.scale_history.push_back({i, -1, t});
        }
    }
    res.accept_rate = static_cast<double>(accepted) / opts.nmh;
    const int tail = opts.nmh - last_window_start;
    res.late_accept_rate =
        tail > 0 ? static_cast<double>(accepted - accepted_at_last_window) / tail
                 : res.accept_rate;
    res.final_scale = t;
    res.last_state = state;
    return res;
}

struct ChainResult {
    Eigen::MatrixXd gibbs_samples;
    Eigen::MatrixXd mh_samples;
    Eigen::VectorXd log_post;
    Eigen::VectorXd accept_gibbs;
    double accept_mh = 0;
    Eigen::MatrixXd S;
    std::vector<ScaleEvent> gibbs_scale_history;
    std::vector<ScaleEvent> mh_scale_history;
    Eigen::VectorXd gibbs_late_accept;
    double mh_late_accept = 0;
    std::uint64_t seed = 0;
};

inline ChainResult run_single_chain(const LogDensity& target, const EstimOptions& opts,
                                    std::uint64_t seed) {
    Rng rng(seed);
    ChainResult chain;
    chain.seed = seed;
    GibbsResult gibbs = metropolis_within_gibbs(target, opts, rng);
    chain.gibbs_samples = std::move(gibbs.samples);
    chain.accept_gibbs = gibbs.accept_rates;
    chain.gibbs_late_accept = gibbs.late_accept_rates;
    chain.gibbs_scale_history = std::move(gibbs.scale_history);
    chain.S = opts.ngibbs >= 2 ? learned_covariance(chain.gibbs_samples) : opts.sig;
    const Eigen::VectorXd start = opts.mh_restart_init ? opts.theta_init : gibbs.last_state;
    MhResult mh = metropolis_hastings(target, start, chain.S, opts, rng);
    chain.mh_samples = std::move(mh.samples);
    chain.log_post = std::move(mh.log_post);
    chain.accept_mh = mh.accept_rate;
    chain.mh_late_accept = mh.late_accept_rate;
    chain.mh_scale_history = std::move(mh.scale_history);
    return chain;
}

// Runs Nchains chains with independent streams derived from the master seed;
// chain c is reproducible from (master_seed, c) alone.
inline std::vector<ChainResult> run_chains(const LogDensity& target, const EstimOptions& opts,
                                           std::uint64_t master_seed, int workers = 1) {
    opts.validate();
    std::vector<ChainResult> chains(static_cast<size_t>(opts.nchains));
    auto run = [&](int c) {
        try {
            chains[static_cast<size_t>(c)] =
                run_single_chain(target, opts, derive_seed(master_seed, static_cast<std::uint64_t>(c)));
        } catch (const error& e) {
            throw state_error("chain " + std::to_string(c) + " failed: " + e.what());
        }
    };
    if (workers <= 1 || opts.nchains == 1) {
        for (int c = 0; c < opts.nchains; ++c) run(c);
    } else {
        std::vector<std::future<void>> futures;
        for (int c = 0; c < opts.nchains; ++c)
            futures.push_back(std::async(std::launch::async, run, c));
        for (auto& f : futures) f.get();
    }
    return chains;
}

struct GelmanRubinResult {
    Eigen::VectorXd psrf;  // per coordinate
    double mpsrf = 0;
};

// Potential scale reduction factors; W is floored so fully separated constant
// chains yield a large finite value instead of infinity.
inline GelmanRubinResult gelman_rubin(const std::vector<Eigen::MatrixXd>& chains) {
    if (chains.size() < 2) throw structural_error("Gelman-Rubin requires >= 2 chains");
    const Eigen::Index n = chains[0].rows(), dim = chains[0].cols();
    if (n < 10) throw structural_error("Gelman-Rubin requires chain length >= 10");
    for (const auto& c : chains)
        if (c.rows() != n || c.cols() != dim)
            throw structural_error("Gelman-Rubin chains must have equal shapes");
    const double m = static_cast<double>(chains.size());

    Eigen::MatrixXd means(chains.size(), dim);
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(dim, dim);
    for (size_t c = 0; c < chains.size(); ++c) {
        means.row(static_cast<Eigen::Index>(c)) = chains[c].colwise().mean();
        Eigen::MatrixXd centered =
            chains[c].rowwise() - means.row(static_cast<Eigen::Index>(c));
        W += centered.transpose() * centered / static_cast<double>(n - 1);
    }
    W /= m;
    Eigen::RowVectorXd grand = means.colwise().mean();
    Eigen::MatrixXd mc = means.rowwise() - grand;
    Eigen::MatrixXd B = static_cast<double>(n) * (mc.transpose() * mc) / (m - 1);

    GelmanRubinResult out;
    out.psrf.resize(dim);
    const double w_floor = std::max(1e-300, 1e-12 * std::max(W.diagonal().maxCoeff(),
                                                             B.diagonal().maxCoeff() / n));
    for (Eigen::Index j = 0; j < dim; ++j) {
        const double w = std::max(W(j, j), w_floor);
        out.psrf(j) = std::sqrt((w * (n - 1.0) / n + B(j, j) / n) / w);
    }

    Eigen::MatrixXd W_reg = W;
    W_reg.diagonal().array() += w_floor;
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(B / n, W_reg);
    const double lambda_max = solver.eigenvalues().maxCoeff();
    out.mpsrf = std::sqrt((n - 1.0) / n + (m + 1.0) / m * lambda_max);
    return out;
}

// Biased-normalized autocorrelation; rho(0) = 1 for nonconstant series.
inline Eigen::VectorXd autocorrelation(const Eigen::VectorXd& x, int max_lag,
                                       bool* degenerate = nullptr) {
    const Eigen::Index n = x.size();
    if (n <= max_lag) throw structural_error("series shorter than max_lag");
    Eigen::VectorXd centered = x.array() - x.mean();
    const double denom = centered.squaredNorm();
    Eigen::VectorXd acf = Eigen::VectorXd::Zero(max_lag + 1);
    if (denom <= 0) {
        if (degenerate) *degenerate = true;
        return acf;
    }
    if (degenerate) *degenerate = false;
    for (int lag = 0; lag <= max_lag; ++lag)
        acf(lag) = centered.head(n - lag).dot(centered.tail(n - lag)) / denom;
    return acf;
}

// Effective sample size from the ACF, truncated at the first nonpositive lag.
inline double effective_sample_size(const Eigen::VectorXd& x, int max_lag = 200) {
    max_lag = std::min<int>(max_lag, static_cast<int>(x.size()) - 1);
    Eigen::VectorXd acf = autocorrelation(x, max_lag);
    double s = 0;
    for (int lag = 1; lag <= max_lag; ++lag) {
        if (acf(lag) <= 0) break;
        s += acf(lag);
    }
    return static_cast<double>(x.size()) / (1 + 2 * s);
}

}  // namespace calib
