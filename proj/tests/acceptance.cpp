// Acceptance checks for the calibration library and CLI. Each criterion runs
// standalone: `acceptance <n>` with n in 1..7, exiting 0 on pass.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "calib/calibration.hpp"
#include "calib/persist.hpp"

using namespace calib;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd theta_star() {
    Eigen::VectorXd t(5);
    t << 1, 0.3, 6, 0.05, M_PI / 2;
    return t;
}

ObservationSet oscillator_observations(int n, double noise_sd, std::uint64_t seed) {
    const Eigen::VectorXd t = theta_star();
    Rng rng(seed);
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 2.0 * i / (n - 1);
        y(i) = oscillator_code(X(i, 0), t) + noise_sd * rnorm(rng);
    }
    return ObservationSet(X, y);
}

PriorSet pr1_priors() {
    PriorSet set;
    set.slots = {PriorSpec(PriorFamily::gaussian, 1, 1e-3),
                 PriorSpec(PriorFamily::gaussian, 0.3, 1e-3),
                 PriorSpec(PriorFamily::gaussian, 6, 1e-3),
                 PriorSpec(PriorFamily::gaussian, 50e-3, 1e-5),
                 PriorSpec(PriorFamily::gaussian, M_PI / 2, 1e-2),
                 PriorSpec(PriorFamily::gamma, 1, 1e-3)};
    return set;
}

EstimOptions default_opts() {
    EstimOptions opts;
    opts.ngibbs = 1000;
    opts.nmh = 5000;
    opts.burn_in = 2000;
    opts.theta_init.resize(6);
    opts.theta_init << 1, 0.25, 6, 0.05, M_PI / 2, 1e-3;
    // proposal covariance matched to the prior scales so every coordinate mixes
    Eigen::VectorXd diag(6);
    diag << 1e-3, 1e-3, 1e-3, 1e-5, 1e-2, 1e-6;
    opts.sig = diag.asDiagonal();
    return opts;
}

StatModelSpec m1_spec(const ObservationSet& data) {
    StatModelSpec spec;
    spec.kind = ModelKind::M1;
    spec.code = std::make_shared<SimulatorCode>(oscillator_simulator());
    spec.data = data;
    spec.layout = ParameterLayout{5, false};
    return spec;
}

DesignOfExperiments oscillator_doe(int n, std::uint64_t seed) {
    Eigen::VectorXd x_low(1), x_high(1), t_low(5), t_high(5);
    x_low << 0;
    x_high << 2;
    t_low << 0.9, 0.15, 5.8, 0.048, 1.49;
    t_high << 1.1, 0.45, 6.2, 0.052, 1.6;
    return joint_design(x_low, x_high, t_low, t_high, n, seed);
}

Eigen::VectorXd oscillator_outputs(const Eigen::MatrixXd& pts) {
    Eigen::VectorXd y(pts.rows());
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) = oscillator_code(pts(i, 0), pts.row(i).tail(5));
    return y;
}

double dense_mvn_log_density(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                             const Eigen::MatrixXd& cov) {
    const Eigen::Index n = y.size();
    Eigen::MatrixXd inv = cov.inverse();
    const double det = cov.determinant();
    Eigen::VectorXd r = y - mean;
    return -0.5 * n * std::log(2 * M_PI) - 0.5 * std::log(det) - 0.5 * r.dot(inv * r);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- criteria --------------------------------------------------------------

std::string criterion1() {
    ObservationSet data = oscillator_observations(50, 1e-2, 20260823);
    CalibrationResult result = calibrate(m1_spec(data), pr1_priors(), default_opts(), 7);
    Eigen::MatrixXd pooled = result.pooled_samples();
    const Eigen::VectorXd t = theta_star();
    for (int j = 0; j < 5; ++j) {
        Eigen::VectorXd col = pooled.col(j);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().sum() / (col.size() - 1));
        const double gap = std::abs(result.map(j) - t(j));
        if (gap > 4 * sd)
            return "component " + std::to_string(j + 1) + " MAP off by " +
                   format_double(gap) + " vs 4 sd = " + format_double(4 * sd);
    }
    const double noise_map = result.map(5);
    if (noise_map < 2e-5 || noise_map > 5e-4)
        return "noise variance MAP " + format_double(noise_map) + " outside [2e-5, 5e-4]";
    return {};
}

std::string criterion2() {
    ObservationSet data = oscillator_observations(50, 1e-2, 20260823);
    CVReport report = cross_validate_loo(m1_spec(data), pr1_priors(), default_opts(), 50, 7, 4);
    if (report.cover_rate < 0.88)
        return "cover rate " + format_double(report.cover_rate) + " below 0.88";
    if (report.rmse >= 0.12) return "RMSE " + format_double(report.rmse) + " not below 0.12";
    return {};
}

std::string criterion3() {
    DesignOfExperiments doe = oscillator_doe(60, 11);
    Eigen::VectorXd y = oscillator_outputs(doe.points);
    EmulatorFitOptions fit_opts;
    fit_opts.seed = 13;
    EmulatorModel model = fit_emulator(doe, y, KernelFamily::matern5_2, fit_opts);

    Eigen::MatrixXd held = unscale(lhs_maximin(200, 6, 12345), doe.binf, doe.bsup);
    Eigen::VectorXd truth = oscillator_outputs(held);
    auto [mean, cov] = model.predict(held);
    int inside = 0;
    double sq = 0;
    for (Eigen::Index i = 0; i < 200; ++i) {
        const double resid = truth(i) - mean(i);
        sq += resid * resid;
        const double s = std::sqrt(std::max(cov(i, i), 1e-30));
        if (std::abs(resid / s) <= 2) ++inside;
    }
    const double range = y.maxCoeff() - y.minCoeff();
    const double rmse = std::sqrt(sq / 200);
    if (inside < 186)
        return "only " + std::to_string(inside) + "/200 standardized residuals within +-2";
    if (rmse >= 0.05 * range)
        return "emulator RMSE " + format_double(rmse) + " not below 5% of range " +
               format_double(range);
    return {};
}

std::string criterion4() {
    // (a) conjugate normal-normal posterior mean
    {
        const double m0 = 0, v0 = 4, sigma2 = 0.25, ybar = 1.2;
        const int n = 5;
        const double v_star = 1.0 / (1 / v0 + n / sigma2);
        const double m_star = v_star * (m0 / v0 + n * ybar / sigma2);
        LogDensity target = [&](const Eigen::VectorXd& v) {
            const double mu = v(0);
            return -0.5 * (mu - m0) * (mu - m0) / v0 -
                   0.5 * n * (ybar - mu) * (ybar - mu) / sigma2;
        };
        EstimOptions opts;
        opts.ngibbs = 1000;
        opts.nmh = 20000;
        opts.burn_in = 4000;
        opts.theta_init = Eigen::VectorXd::Zero(1);
        opts.sig = Eigen::MatrixXd::Identity(1, 1);
        ChainResult chain = run_single_chain(target, opts, 101);
        const double mean = chain.mh_samples.col(0).mean();
        const double n_eff = effective_sample_size(chain.mh_samples.col(0));
        if (std::abs(mean - m_star) > 4 * std::sqrt(v_star / n_eff))
            return "(a) posterior mean " + format_double(mean) + " vs analytic " +
                   format_double(m_star);
    }
    // (b) adaptation on a 5-d correlated normal
    {
        Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(5, 5, 0.7);
        cov.diagonal().setOnes();
        Eigen::MatrixXd prec = cov.inverse();
        LogDensity target = [prec](const Eigen::VectorXd& v) {
            return -0.5 * v.dot(prec * v);
        };
        EstimOptions opts;
        opts.ngibbs = 3000;
        opts.nmh = 20000;
        opts.burn_in = 0;
        opts.theta_init = Eigen::VectorXd::Zero(5);
        opts.sig = Eigen::MatrixXd::Identity(5, 5);
        ChainResult chain = run_single_chain(target, opts, 202);
        for (Eigen::Index j = 0; j < 5; ++j)
            if (chain.gibbs_late_accept(j) < 0.2 || chain.gibbs_late_accept(j) > 0.55)
                return "(b) gibbs coordinate " + std::to_string(j + 1) + " late rate " +
                       format_double(chain.gibbs_late_accept(j));
        if (chain.mh_late_accept < 0.2 || chain.mh_late_accept > 0.55)
            return "(b) MH late rate " + format_double(chain.mh_late_accept);
    }
    // (c) PSRF on 3 chains of a shared normal target
    {
        LogDensity target = [](const Eigen::VectorXd& v) { return -0.5 * v.squaredNorm(); };
        EstimOptions opts;
        opts.ngibbs = 500;
        opts.nmh = 20000;
        opts.burn_in = 2000;
        opts.nchains = 3;
        opts.theta_init = Eigen::VectorXd::Zero(3);
        opts.sig = Eigen::MatrixXd::Identity(3, 3);
        std::vector<ChainResult> chains = run_chains(target, opts, 303);
        std::vector<Eigen::MatrixXd> samples;
        for (const auto& c : chains) samples.push_back(c.mh_samples);
        GelmanRubinResult gr = gelman_rubin(samples);
        if (gr.psrf.maxCoeff() >= 1.1)
            return "(c) max PSRF " + format_double(gr.psrf.maxCoeff()) + " not below 1.1";
    }
    // (d) duplicated chains give the deterministic floor exactly
    {
        Rng rng(404);
        const int n = 500;
        Eigen::MatrixXd chain(n, 2);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 2; ++j) chain(i, j) = rnorm(rng);
        GelmanRubinResult gr = gelman_rubin({chain, chain});
        const double expected = std::sqrt((n - 1.0) / n);
        if (std::abs(gr.psrf(0) - expected) > 1e-12 ||
            std::abs(gr.psrf(1) - expected) > 1e-12)
            return "(d) duplicated-chain PSRF " + format_double(gr.psrf(0)) + " vs " +
                   format_double(expected);
    }
    return {};
}

std::string criterion5() {
    ObservationSet data = oscillator_observations(6, 1e-2, 31);
    DesignOfExperiments doe = oscillator_doe(40, 32);
    EmulatorFitOptions fit_opts;
    fit_opts.seed = 33;
    auto emulator = std::make_shared<EmulatorModel>(
        fit_emulator(doe, oscillator_outputs(doe.points), KernelFamily::matern5_2, fit_opts));

    Eigen::VectorXd base(6);
    base << 1, 0.3, 6, 0.05, M_PI / 2, 1e-4;
    Eigen::VectorXd with_disc(8);
    with_disc << 1, 0.3, 6, 0.05, M_PI / 2, 2e-3, 0.7, 1e-4;

    for (ModelKind kind : {ModelKind::M1, ModelKind::M2, ModelKind::M3, ModelKind::M4}) {
        StatModelSpec spec = m1_spec(data);
        spec.kind = kind;
        spec.discrepancy_family = KernelFamily::matern3_2;
        spec.layout = ParameterLayout{5, uses_discrepancy(kind)};
        if (uses_emulator(kind)) spec.emulator = emulator;
        const Eigen::VectorXd v = uses_discrepancy(kind) ? with_disc : base;
        SplitParams s = split_parameters(v, spec.layout);

        Eigen::VectorXd mean(data.n());
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(data.n(), data.n());
        if (uses_emulator(kind)) {
            Eigen::MatrixXd t(data.n(), 6);
            t.leftCols(1) = data.X;
            t.rightCols(5).rowwise() = s.theta.transpose();
            auto [gp_mean, gp_cov] = emulator->predict(t);
            mean = gp_mean;
            cov = gp_cov;
        } else {
            for (Eigen::Index i = 0; i < data.n(); ++i)
                mean(i) = oscillator_code(data.X(i, 0), s.theta);
        }
        if (s.disc) {
            KernelSpec k{KernelFamily::matern3_2, s.disc->first,
                         Eigen::VectorXd::Constant(1, s.disc->second)};
            cov += covariance_matrix(k, data.X, data.X);
        }
        cov.diagonal().array() += s.noise_var;
        const double dense = dense_mvn_log_density(data.y, mean, cov);
        const double fast = log_likelihood(spec, v);
        if (std::abs(dense - fast) > 1e-8)
            return to_string(kind) + " log-likelihood " + format_double(fast) +
                   " vs dense " + format_double(dense);
    }

    // 2-point conditional-Gaussian oracle for gp_predict
    {
        Eigen::MatrixXd D(2, 1);
        D << 0.2, 0.8;
        Eigen::VectorXd y2(2);
        y2 << 1.0, -0.5;
        const double sigma2 = 1.7, psi = 0.4, beta = 0.25, nugget = 1e-8;
        KernelSpec kernel{KernelFamily::gauss, sigma2, Eigen::VectorXd::Constant(1, psi)};
        EmulatorModel gp(D, y2, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), kernel,
                         TrendSpec{beta}, nugget);
        Eigen::MatrixXd t(1, 1);
        t << 0.55;
        auto [mean, cov] = gp_predict(gp, t);

        auto corr = [&](double a, double b) {
            const double u = std::abs(a - b) / psi;
            return std::exp(-0.5 * u * u);
        };
        Eigen::Matrix2d K;
        K << 1 + nugget, corr(0.2, 0.8), corr(0.2, 0.8), 1 + nugget;
        K *= sigma2;
        Eigen::Vector2d k_star(sigma2 * corr(0.55, 0.2), sigma2 * corr(0.55, 0.8));
        Eigen::Vector2d resid(y2(0) - beta, y2(1) - beta);
        Eigen::Vector2d w = K.inverse() * k_star;
        const double hand_mean = beta + w.dot(resid);
        const double hand_var = sigma2 - w.dot(k_star);
        if (std::abs(mean(0) - hand_mean) > 1e-10)
            return "gp_predict mean " + format_double(mean(0)) + " vs hand " +
                   format_double(hand_mean);
        if (std::abs(cov(0, 0) - hand_var) > 1e-10)
            return "gp_predict variance " + format_double(cov(0, 0)) + " vs hand " +
                   format_double(hand_var);
    }
    return {};
}

std::string criterion6() {
    // kernel symmetry, PSD and monotone decay
    {
        Rng rng(61);
        Eigen::MatrixXd pts(12, 2);
        for (Eigen::Index i = 0; i < pts.size(); ++i) pts(i / 2, i % 2) = runif(rng);
        Eigen::VectorXd psi = Eigen::VectorXd::Constant(2, 0.6);
        for (KernelFamily family : {KernelFamily::gauss, KernelFamily::exponential,
                                    KernelFamily::matern3_2, KernelFamily::matern5_2}) {
            KernelSpec k{family, 1.3, psi};
            Eigen::MatrixXd K = covariance_matrix(k, pts, pts);
            if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-14)
                return "kernel " + to_string(family) + " not symmetric";
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
            if (es.eigenvalues().minCoeff() < -1e-8)
                return "kernel " + to_string(family) + " not PSD";
            double prev = base_correlation(family, 0);
            for (double u : {0.1, 0.5, 1.0, 2.0, 4.0}) {
                const double cur = base_correlation(family, u);
                if (cur > prev + 1e-14)
                    return "kernel " + to_string(family) + " not decaying";
                prev = cur;
            }
        }
    }
    // LHS stratification and maximin non-regression
    {
        const std::uint64_t seed = 4242;
        Eigen::MatrixXd improved = lhs_maximin(20, 3, seed);
        for (Eigen::Index j = 0; j < 3; ++j) {
            std::vector<bool> hit(20, false);
            for (Eigen::Index i = 0; i < 20; ++i) {
                const int cell = std::min(19, static_cast<int>(improved(i, j) * 20));
                if (hit[static_cast<size_t>(cell)]) return "LHS stratification broken";
                hit[static_cast<size_t>(cell)] = true;
            }
        }
        Rng rng(seed);
        Eigen::MatrixXd initial = lhs_unit(20, 3, rng);
        if (min_pairwise_distance(improved) < min_pairwise_distance(initial) - 1e-14)
            return "maximin regressed below its initial design";
    }
    // EI nonnegativity and the z = 0 closed form
    {
        Eigen::MatrixXd D(3, 1);
        D << 0.1, 0.45, 0.9;
        Eigen::VectorXd f(3);
        for (Eigen::Index i = 0; i < 3; ++i) f(i) = (D(i, 0) - 0.5) * (D(i, 0) - 0.5);
        EmulatorModel gp = fit_emulator(D, f, KernelFamily::gauss, Eigen::VectorXd::Zero(1),
                                        Eigen::VectorXd::Ones(1));
        Eigen::MatrixXd grid(101, 1);
        for (Eigen::Index i = 0; i < 101; ++i) grid(i, 0) = i / 100.0;
        Eigen::VectorXd ei = expected_improvement(gp, f.minCoeff(), grid);
        if (ei.minCoeff() < 0) return "negative expected improvement";
        auto [mean, cov] = gp.predict(grid.row(30));
        const double s = std::sqrt(std::max(cov(0, 0), 0.0));
        if (s > 1e-12) {
            Eigen::VectorXd at_mu = expected_improvement(gp, mean(0), grid.row(30));
            if (std::abs(at_mu(0) - s / std::sqrt(2 * M_PI)) > 1e-10 * std::max(1.0, s))
                return "EI at z=0 is " + format_double(at_mu(0)) + " vs " +
                       format_double(s / std::sqrt(2 * M_PI));
        }
    }
    // prior normalization
    {
        auto mass = [](const PriorSpec& prior, double lo, double hi) {
            const int n = 20000;
            double total = 0, prev = std::exp(prior.log_density(lo));
            const double h = (hi - lo) / n;
            for (int i = 1; i <= n; ++i) {
                const double cur = std::exp(prior.log_density(lo + i * h));
                total += 0.5 * (prev + cur) * h;
                prev = cur;
            }
            return total;
        };
        if (std::abs(mass(PriorSpec(PriorFamily::gaussian, 0.3, 1e-3), -0.2, 0.8) - 1) > 1e-3)
            return "gaussian prior mass off";
        if (std::abs(mass(PriorSpec(PriorFamily::gamma, 2, 0.5), 1e-9, 25) - 1) > 1e-3)
            return "gamma prior mass off";
        if (std::abs(mass(PriorSpec(PriorFamily::uniform, -1, 3), -1, 3) - 1) > 1e-3)
            return "uniform prior mass off";
    }
    // end-to-end CLI determinism
    {
        fs::path dir = fs::current_path() / "acceptance_cli_scratch";
        fs::remove_all(dir);
        fs::create_directories(dir);
        write_observations_csv((dir / "obs.csv").string(),
                               oscillator_observations(12, 1e-2, 62));
        std::ofstream(dir / "config.json")
            << "{\"model\":\"model1\",\"data\":\"" << (dir / "obs.csv").string()
            << "\",\"code\":{\"builtin\":\"oscillator\"},\"seed\":99,"
               "\"priors\":[{\"type\":\"gaussian\",\"opt\":[1,1e-3]},"
               "{\"type\":\"gaussian\",\"opt\":[0.3,1e-3]},"
               "{\"type\":\"gaussian\",\"opt\":[6,1e-3]},"
               "{\"type\":\"gaussian\",\"opt\":[0.05,1e-5]},"
               "{\"type\":\"gaussian\",\"opt\":[1.5708,1e-2]},"
               "{\"type\":\"gamma\",\"opt\":[1,1e-3]}],"
               "\"estim\":{\"Ngibbs\":200,\"Nmh\":500,\"burnIn\":100,"
               "\"thetaInit\":[1,0.25,6,0.05,1.5708,1e-3]}}";
        auto run = [&](const std::string& out) {
            const std::string cmd = std::string(SIMCAL_BIN) + " calibrate --config " +
                                    (dir / "config.json").string() + " --out " +
                                    (dir / out).string() + " > /dev/null 2>&1";
            return std::system(cmd.c_str());
        };
        if (run("a") != 0 || run("b") != 0) return "CLI calibrate run failed";
        for (const char* file : {"chain1.csv", "bands.csv", "manifest.json"})
            if (slurp(dir / "a" / file) != slurp(dir / "b" / file))
                return std::string("CLI outputs differ for ") + file;
        fs::remove_all(dir);
    }
    return {};
}

std::string criterion7() {
    ObservationSet data = oscillator_observations(20, 1e-2, 71);
    DesignOfExperiments doe = oscillator_doe(30, 72);
    EmulatorFitOptions fit_opts;
    fit_opts.seed = 73;
    StatModelSpec spec = m1_spec(data);
    spec.kind = ModelKind::M2;
    spec.emulator = std::make_shared<EmulatorModel>(fit_emulator(
        doe, oscillator_outputs(doe.points), KernelFamily::matern5_2, fit_opts));

    Eigen::MatrixXd held = unscale(lhs_maximin(200, 6, 74), doe.binf, doe.bsup);
    Eigen::VectorXd truth = oscillator_outputs(held);
    auto held_rmse = [&](const EmulatorModel& model) {
        auto [mean, cov] = model.predict(held);
        (void)cov;
        return std::sqrt((truth - mean).squaredNorm() / truth.size());
    };
    const double before = held_rmse(*spec.emulator);

    EstimOptions opts;
    opts.ngibbs = 100;
    opts.nmh = 600;
    opts.burn_in = 200;
    opts.theta_init.resize(6);
    opts.theta_init << 1, 0.25, 6, 0.05, M_PI / 2, 1e-3;
    opts.sig = Eigen::MatrixXd::Identity(6, 6);
    SequentialDesignResult res =
        sequential_design(spec, pr1_priors(), opts, 5, 200, 75, fit_opts);

    const double after = held_rmse(*res.spec.emulator);
    if (after > before * (1 + 1e-9))
        return "held-out RMSE rose from " + format_double(before) + " to " +
               format_double(after);
    const size_t productive = res.trace.size() - (res.converged ? 1 : 0);
    if (productive == 0 && !res.converged) return "no design steps recorded";
    for (size_t s = 0; s < productive; ++s)
        if (!(res.trace[s].ei > 0))
            return "step " + std::to_string(s + 1) + " has non-positive EI";
    return {};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: acceptance <criterion 1..7>\n";
        return 2;
    }
    const int criterion = std::atoi(argv[1]);
    std::string error;
    try {
        switch (criterion) {
            case 1: error = criterion1(); break;
            case 2: error = criterion2(); break;
            case 3: error = criterion3(); break;
            case 4: error = criterion4(); break;
            case 5: error = criterion5(); break;
            case 6: error = criterion6(); break;
            case 7: error = criterion7(); break;
            default: std::cerr << "unknown criterion\n"; return 2;
        }
    } catch (const std::exception& e) {
        error = std::string("exception: ") + e.what();
    }
    if (error.empty()) {
        std::cout << "PASS criterion " << criterion << "\n";
        return 0;
    }
    std::cout << "FAIL criterion " << criterion << ": " << error << "\n";
    return 1;
}
