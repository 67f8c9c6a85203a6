#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <memory>

#include "calib/models.hpp"
#include "calib/rng.hpp"

using Catch::Approx;
using namespace calib;

namespace {

double dense_mvn_log_density(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                             const Eigen::MatrixXd& cov) {
    const Eigen::Index n = y.size();
    Eigen::MatrixXd inv = cov.inverse();
    Eigen::VectorXd r = y - mean;
    return -0.5 * n * std::log(2 * M_PI) - 0.5 * std::log(cov.determinant()) -
           0.5 * r.dot(inv * r);
}

ObservationSet oscillator_observations(int n, double noise_sd, std::uint64_t seed) {
    Eigen::VectorXd theta(5);
    theta << 1, 0.3, 6, 0.05, M_PI / 2;
    Rng rng(seed);
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 2.0 * i / (n - 1);
        y(i) = oscillator_code(X(i, 0), theta) + noise_sd * rnorm(rng);
    }
    return ObservationSet(X, y);
}

StatModelSpec m1_spec(const ObservationSet& data) {
    StatModelSpec spec;
    spec.kind = ModelKind::M1;
    spec.code = std::make_shared<SimulatorCode>(oscillator_simulator());
    spec.data = data;
    spec.layout = ParameterLayout{5, false};
    return spec;
}

std::shared_ptr<EmulatorModel> oscillator_emulator(const ObservationSet& data, int n_design,
                                                   std::uint64_t seed) {
    Eigen::VectorXd x_low(1), x_high(1), t_low(5), t_high(5);
    x_low << 0;
    x_high << 2;
    t_low << 0.9, 0.15, 5.8, 0.048, 1.49;
    t_high << 1.1, 0.45, 6.2, 0.052, 1.6;
    DesignOfExperiments doe = joint_design(x_low, x_high, t_low, t_high, n_design, seed);
    Eigen::VectorXd y(doe.points.rows());
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) = oscillator_code(doe.points(i, 0), doe.points.row(i).tail(5));
    EmulatorFitOptions opts;
    opts.seed = seed;
    return std::make_shared<EmulatorModel>(
        fit_emulator(doe, y, KernelFamily::matern5_2, opts));
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

}  // namespace

TEST_CASE("model kind plumbing") {
    CHECK(model_kind_from_string("model1") == ModelKind::M1);
    CHECK(model_kind_from_string("model4") == ModelKind::M4);
    CHECK_THROWS_AS(model_kind_from_string("model5"), config_error);
    CHECK(uses_emulator(ModelKind::M2));
    CHECK_FALSE(uses_emulator(ModelKind::M3));
    CHECK(uses_discrepancy(ModelKind::M4));
    CHECK_FALSE(uses_discrepancy(ModelKind::M2));
}

TEST_CASE("spec validation") {
    ObservationSet data = oscillator_observations(5, 0.01, 1);
    StatModelSpec spec = m1_spec(data);
    CHECK_NOTHROW(spec.validate());
    spec.code.reset();
    CHECK_THROWS_AS(spec.validate(), structural_error);
    spec = m1_spec(data);
    spec.layout.has_discrepancy = true;
    CHECK_THROWS_AS(spec.validate(), structural_error);
}

TEST_CASE("M1 mean is the code trajectory and cov is white noise") {
    ObservationSet data = oscillator_observations(8, 0.01, 2);
    StatModelSpec spec = m1_spec(data);
    Eigen::VectorXd v(6);
    v << 1, 0.3, 6, 0.05, M_PI / 2, 1e-4;
    auto [mean, cov] = model_mean_cov(spec, v);
    for (Eigen::Index i = 0; i < data.n(); ++i)
        CHECK(mean(i) == Approx(oscillator_code(data.X(i, 0), v.head(5))).margin(1e-14));
    CHECK((cov - 1e-4 * Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("M3 tends to M1 as the discrepancy variance vanishes") {
    ObservationSet data = oscillator_observations(6, 0.01, 3);
    StatModelSpec m1 = m1_spec(data);
    StatModelSpec m3 = m1;
    m3.kind = ModelKind::M3;
    m3.layout = ParameterLayout{5, true};

    Eigen::VectorXd v1(6);
    v1 << 1, 0.3, 6, 0.05, M_PI / 2, 1e-4;
    Eigen::VectorXd v3(8);
    v3 << 1, 0.3, 6, 0.05, M_PI / 2, 1e-14, 0.5, 1e-4;
    CHECK(log_likelihood(m3, v3) == Approx(log_likelihood(m1, v1)).margin(1e-6));
}

TEST_CASE("M3 likelihood matches a dense 3x3 oracle") {
    ObservationSet data = oscillator_observations(3, 0.01, 4);
    StatModelSpec spec = m1_spec(data);
    spec.kind = ModelKind::M3;
    spec.layout = ParameterLayout{5, true};
    spec.discrepancy_family = KernelFamily::matern3_2;
    Eigen::VectorXd v(8);
    v << 1, 0.3, 6, 0.05, M_PI / 2, 2e-3, 0.7, 1e-4;

    Eigen::VectorXd mean(3);
    for (Eigen::Index i = 0; i < 3; ++i)
        mean(i) = oscillator_code(data.X(i, 0), v.head(5));
    KernelSpec disc{KernelFamily::matern3_2, 2e-3, Eigen::VectorXd::Constant(1, 0.7)};
    Eigen::MatrixXd cov = covariance_matrix(disc, data.X, data.X);
    cov.diagonal().array() += 1e-4;
    CHECK(log_likelihood(spec, v) ==
          Approx(dense_mvn_log_density(data.y, mean, cov)).margin(1e-8));
}

TEST_CASE("M2 matches explicit Gaussian conditioning on a 2-point emulator") {
    Eigen::MatrixXd X(2, 1);
    X << 0.2, 0.8;
    Eigen::VectorXd y(2);
    y << 0.9, -0.2;
    ObservationSet data(X, y);

    // hand-built 1-parameter emulator on (x, theta)
    Eigen::MatrixXd D(2, 2);
    D << 0.2, 0.5, 0.8, 0.5;
    Eigen::VectorXd yc(2);
    yc << 1.0, -0.3;
    KernelSpec kernel{KernelFamily::gauss, 1.4, Eigen::VectorXd::Constant(2, 0.6)};
    const double nugget = 1e-8, beta = 0.1;
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(2), hi = Eigen::VectorXd::Ones(2);
    auto emulator = std::make_shared<EmulatorModel>(D, yc, lo, hi, kernel, TrendSpec{beta},
                                                    nugget);

    StatModelSpec spec;
    spec.kind = ModelKind::M2;
    spec.emulator = emulator;
    spec.data = data;
    spec.layout = ParameterLayout{1, false};
    Eigen::VectorXd v(2);
    v << 0.5, 1e-3;

    // oracle: conditional Gaussian of the test block given the training block
    Eigen::MatrixXd T(2, 2);
    T << 0.2, 0.5, 0.8, 0.5;
    KernelSpec corr = kernel;
    corr.variance = 1.0;
    Eigen::MatrixXd r11 = covariance_matrix(corr, D, D);
    r11.diagonal().array() += nugget;
    Eigen::MatrixXd r12 = covariance_matrix(corr, T, D);
    Eigen::MatrixXd r22 = covariance_matrix(corr, T, T);
    Eigen::VectorXd mean_oracle =
        Eigen::VectorXd::Constant(2, beta) +
        r12 * r11.inverse() * (yc - Eigen::VectorXd::Constant(2, beta));
    Eigen::MatrixXd cov_oracle =
        kernel.variance * (r22 - r12 * r11.inverse() * r12.transpose());

    auto [mean, cov] = model_mean_cov(spec, v);
    CHECK((mean - mean_oracle).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::MatrixXd expected = cov_oracle;
    expected.diagonal().array() += 1e-3;
    CHECK((cov - expected).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(log_likelihood(spec, v) ==
          Approx(dense_mvn_log_density(y, mean_oracle, expected)).margin(1e-8));
}

TEST_CASE("perfect fit likelihood has the closed form") {
    Eigen::VectorXd theta(5);
    theta << 1, 0.3, 6, 0.05, M_PI / 2;
    const int n = 7;
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 2.0 * i / (n - 1);
        y(i) = oscillator_code(X(i, 0), theta);
    }
    StatModelSpec spec = m1_spec(ObservationSet(X, y));
    const double s2 = 1e-4;
    Eigen::VectorXd v(6);
    v << theta, s2;
    CHECK(log_likelihood(spec, v) ==
          Approx(-0.5 * n * std::log(2 * M_PI * s2)).margin(1e-8));
}

TEST_CASE("log_posterior short-circuits outside the prior support") {
    ObservationSet data = oscillator_observations(5, 0.01, 6);
    StatModelSpec spec = m1_spec(data);
    // a counting code would be called only through the likelihood
    int calls = 0;
    spec.code = std::make_shared<SimulatorCode>(SimulatorCode{
        [&calls](const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
            ++calls;
            return oscillator_code(x(0), theta);
        },
        5});
    PriorSet priors;
    priors.slots = {PriorSpec(PriorFamily::uniform, 0.5, 1.5),
                    PriorSpec(PriorFamily::uniform, 0, 0.9),
                    PriorSpec(PriorFamily::uniform, 5, 7),
                    PriorSpec(PriorFamily::uniform, 0.01, 0.1),
                    PriorSpec(PriorFamily::uniform, 1, 2),
                    PriorSpec(PriorFamily::gamma, 1, 1e-3)};
    Eigen::VectorXd v(6);
    v << 3.0, 0.3, 6, 0.05, M_PI / 2, 1e-3;  // amplitude outside its box
    CHECK(log_posterior(spec, priors, v) == -std::numeric_limits<double>::infinity());
    CHECK(calls == 0);

    v(0) = 1.0;
    const double lp = log_posterior(spec, priors, v);
    CHECK(std::isfinite(lp));
    CHECK(lp == Approx(log_prior_total(priors, v) + log_likelihood(spec, v)).margin(1e-10));
    CHECK(calls > 0);
}

TEST_CASE("flat priors reduce posterior differences to likelihood differences") {
    ObservationSet data = oscillator_observations(5, 0.01, 7);
    StatModelSpec spec = m1_spec(data);
    PriorSet priors;
    priors.slots = {PriorSpec(PriorFamily::uniform, 0, 2),
                    PriorSpec(PriorFamily::uniform, 0, 0.9),
                    PriorSpec(PriorFamily::uniform, 4, 8),
                    PriorSpec(PriorFamily::uniform, 0.01, 0.1),
                    PriorSpec(PriorFamily::uniform, 0, 3),
                    PriorSpec(PriorFamily::uniform, 0, 1)};
    Eigen::VectorXd a(6), b(6);
    a << 1, 0.3, 6, 0.05, M_PI / 2, 1e-3;
    b << 1.05, 0.25, 6.1, 0.05, 1.5, 2e-3;
    CHECK(log_posterior(spec, priors, a) - log_posterior(spec, priors, b) ==
          Approx(log_likelihood(spec, a) - log_likelihood(spec, b)).margin(1e-9));
}

TEST_CASE("pr1 posterior at thetaInit equals the component sum") {
    ObservationSet data = oscillator_observations(20, 0.01, 8);
    StatModelSpec spec = m1_spec(data);
    PriorSet priors = pr1_priors();
    Eigen::VectorXd v(6);
    v << 1, 0.25, 6, 0.05, M_PI / 2, 1e-3;
    const double lp = log_posterior(spec, priors, v);
    CHECK(std::isfinite(lp));
    CHECK(lp == Approx(log_prior_total(priors, v) + log_likelihood(spec, v)).margin(1e-10));
}

TEST_CASE("covariances are symmetric PSD for all kinds") {
    ObservationSet data = oscillator_observations(6, 0.01, 9);
    auto emulator = oscillator_emulator(data, 40, 10);
    Rng rng(11);
    for (int kind = 0; kind < 4; ++kind) {
        StatModelSpec spec;
        spec.kind = static_cast<ModelKind>(kind);
        spec.data = data;
        spec.layout = ParameterLayout{5, uses_discrepancy(spec.kind)};
        spec.code = std::make_shared<SimulatorCode>(oscillator_simulator());
        spec.emulator = emulator;
        for (int rep = 0; rep < 5; ++rep) {
            Eigen::VectorXd v(spec.layout.total());
            v.head(5) << 0.9 + 0.2 * runif(rng), 0.15 + 0.3 * runif(rng),
                5.8 + 0.4 * runif(rng), 0.048 + 0.004 * runif(rng), 1.49 + 0.11 * runif(rng);
            if (spec.layout.has_discrepancy) {
                v(5) = 1e-4 + 1e-3 * runif(rng);
                v(6) = 0.1 + runif(rng);
            }
            v(v.size() - 1) = 1e-5 + 1e-4 * runif(rng);
            auto [mean, cov] = model_mean_cov(spec, v);
            CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
            Eigen::MatrixXd jittered = cov;
            jittered.diagonal().array() += 1e-10 * cov.diagonal().mean();
            CHECK(Eigen::LLT<Eigen::MatrixXd>(jittered).info() == Eigen::Success);
        }
    }
}

TEST_CASE("M2 approaches M1 with a dense design") {
    ObservationSet data = oscillator_observations(6, 0.01, 12);
    StatModelSpec m1 = m1_spec(data);
    StatModelSpec m2 = m1;
    m2.kind = ModelKind::M2;
    m2.emulator = oscillator_emulator(data, 200, 13);
    Eigen::VectorXd v(6);
    // generous noise keeps the GP variance inflation negligible
    v << 1, 0.3, 6, 0.05, M_PI / 2, 1e-2;
    CHECK(std::abs(log_likelihood(m2, v) - log_likelihood(m1, v)) < 0.5);
}

TEST_CASE("M1 err band has constant half width") {
    ObservationSet data = oscillator_observations(10, 0.01, 14);
    StatModelSpec spec = m1_spec(data);
    Eigen::VectorXd v(6);
    v << 1, 0.3, 6, 0.05, M_PI / 2, 1e-4;
    auto bands = predictive_bands(spec, v);
    REQUIRE(bands.size() == 1);
    CHECK(bands[0].kind == "err");
    const double hw = kZ95 * std::sqrt(1e-4);
    for (Eigen::Index i = 0; i < 10; ++i) {
        CHECK(bands[0].upper(i) - bands[0].mean(i) == Approx(hw).margin(1e-12));
        CHECK(bands[0].mean(i) - bands[0].lower(i) == Approx(hw).margin(1e-12));
    }
    CHECK_THROWS_AS(predictive_bands(spec, v, 0.95, BandKind::gp), unsupported_error);
    CHECK_THROWS_AS(predictive_bands(spec, v, 0.90), unsupported_error);
}

TEST_CASE("err band achieves nominal coverage on simulated replicates") {
    Eigen::VectorXd theta(5);
    theta << 1, 0.3, 6, 0.05, M_PI / 2;
    const double sd = 0.05;
    ObservationSet data = oscillator_observations(10, sd, 15);
    StatModelSpec spec = m1_spec(data);
    Eigen::VectorXd v(6);
    v << theta, sd * sd;
    auto bands = predictive_bands(spec, v);
    Rng rng(16);
    int inside = 0, total = 0;
    for (int rep = 0; rep < 2000; ++rep)
        for (Eigen::Index i = 0; i < data.n(); ++i) {
            const double sample = bands[0].mean(i) + sd * rnorm(rng);
            inside += (sample >= bands[0].lower(i) && sample <= bands[0].upper(i));
            ++total;
        }
    const double coverage = static_cast<double>(inside) / total;
    CHECK(coverage > 0.94);
    CHECK(coverage < 0.96);
}

TEST_CASE("M4 band variance additivity") {
    ObservationSet data = oscillator_observations(6, 0.01, 17);
    StatModelSpec spec;
    spec.kind = ModelKind::M4;
    spec.data = data;
    spec.layout = ParameterLayout{5, true};
    spec.emulator = oscillator_emulator(data, 40, 18);
    Eigen::VectorXd v(8);
    v << 1, 0.3, 6, 0.05, M_PI / 2, 1e-3, 0.5, 1e-4;
    auto bands = predictive_bands(spec, v);
    REQUIRE(bands.size() == 2);
    CHECK(bands[0].kind == "err");
    CHECK(bands[1].kind == "GP");
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double err_hw = bands[0].upper(i) - bands[0].mean(i);
        const double gp_hw = bands[1].upper(i) - bands[1].mean(i);
        const double combined = kZ95 * std::sqrt(std::pow(err_hw / kZ95, 2) +
                                                 std::pow(gp_hw / kZ95, 2));
        CHECK(gp_hw <= combined + 1e-12);
        CHECK(err_hw <= combined + 1e-12);
    }
}
