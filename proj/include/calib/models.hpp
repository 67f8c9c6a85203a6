#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "calib/core.hpp"
#include "calib/emulator.hpp"
#include "calib/errors.hpp"
#include "calib/kernels.hpp"
#include "calib/linalg.hpp"
#include "calib/priors.hpp"

namespace calib {

enum class ModelKind { M1, M2, M3, M4 };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::M1: return "model1";
        case ModelKind::M2: return "model2";
        case ModelKind::M3: return "model3";
        case ModelKind::M4: return "model4";
    }
    throw domain_error("unknown model kind");
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "model1") return ModelKind::M1;
    if (s == "model2") return ModelKind::M2;
    if (s == "model3") return ModelKind::M3;
    if (s == "model4") return ModelKind::M4;
    throw config_error("unknown model '" + s + "'");
}

inline bool uses_emulator(ModelKind k) { return k == ModelKind::M2 || k == ModelKind::M4; }
inline bool uses_discrepancy(ModelKind k) { return k == ModelKind::M3 || k == ModelKind::M4; }

// Binds code or emulator, the discrepancy option and the data into the
// Gaussian observation model for one of the four statistical models.
struct StatModelSpec {
    ModelKind kind = ModelKind::M1;
    std::shared_ptr<const SimulatorCode> code;       // required for M1/M3
    std::shared_ptr<const EmulatorModel> emulator;   // required for M2/M4
    KernelFamily discrepancy_family = KernelFamily::gauss;  // M3/M4
    ObservationSet data;
    ParameterLayout layout;

    void validate() const {
        if (!uses_emulator(kind) && !code)
            throw structural_error(to_string(kind) + " requires a simulator code");
        if (uses_emulator(kind) && !emulator)
            throw structural_error(to_string(kind) + " requires a fitted emulator");
        if (layout.has_discrepancy != uses_discrepancy(kind))
            throw structural_error("layout discrepancy flag inconsistent with model kind");
        if (code && code->p != layout.p)
            throw structural_error("code parameter count does not match layout");
    }
};

namespace detail {

inline Eigen::MatrixXd emulator_inputs(const ObservationSet& data, const Eigen::VectorXd& theta) {
    Eigen::MatrixXd T(data.n(), data.d() + theta.size());
    T.leftCols(data.d()) = data.X;
    T.rightCols(theta.size()).rowwise() = theta.transpose();
    return T;
}

// Zero-mean discrepancy covariance on raw X distances, isotropic lengthscale.
inline Eigen::MatrixXd discrepancy_cov(const StatModelSpec& spec, double sigma_delta2,
                                       double psi_delta) {
    KernelSpec k{spec.discrepancy_family, sigma_delta2,
                 Eigen::VectorXd::Constant(1, psi_delta)};
    return covariance_matrix(k, spec.data.X, spec.data.X);
}

}  // namespace detail

// Observation-model mean and covariance at parameter vector v.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> model_mean_cov(const StatModelSpec& spec,
                                                                  const Eigen::VectorXd& v) {
    spec.validate();
    SplitParams s = split_parameters(v, spec.layout);
    const Eigen::Index n = spec.data.n();

    Eigen::VectorXd mean(n);
    Eigen::MatrixXd cov;
    if (uses_emulator(spec.kind)) {
        auto [gp_mean, gp_cov] = spec.emulator->predict(detail::emulator_inputs(spec.data, s.theta));
        mean = gp_mean;
        cov = gp_cov;
    } else {
        for (Eigen::Index i = 0; i < n; ++i)
            mean(i) = (*spec.code)(spec.data.X.row(i), s.theta);
        cov = Eigen::MatrixXd::Zero(n, n);
    }
    if (s.disc) cov += detail::discrepancy_cov(spec, s.disc->first, s.disc->second);
    cov.diagonal().array() += s.noise_var;
    return {std::move(mean), std::move(cov)};
}

inline double log_likelihood(const StatModelSpec& spec, const Eigen::VectorXd& v) {
    auto [mean, cov] = model_mean_cov(spec, v);
    return mvn_log_density(spec.data.y, mean, cholesky_with_jitter(cov));
}

// Log prior + log likelihood; short-circuits to -inf on prior-support
// violations without touching the simulator. A code that signals an
// out-of-domain parameter set also rejects the point rather than aborting.
inline double log_posterior(const StatModelSpec& spec, const PriorSet& priors,
                            const Eigen::VectorXd& v) {
    priors.validate_for(spec.layout);
    if (!parameters_valid(v, spec.layout))
        return -std::numeric_limits<double>::infinity();
    double lp = log_prior_total(priors, v);
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    try {
        return lp + log_likelihood(spec, v);
    } catch (const domain_error&) {
        return -std::numeric_limits<double>::infinity();
    }
}

enum class BandKind { err, gp, all };

inline BandKind band_kind_from_string(const std::string& s) {
    if (s == "err") return BandKind::err;
    if (s == "GP") return BandKind::gp;
    if (s == "all") return BandKind::all;
    throw config_error("unknown CI option '" + s + "'");
}

struct BandTable {
    std::string kind;  // "err" or "GP"
    Eigen::VectorXd mean, lower, upper;
};

// 95% credibility bands at v. The err band carries measurement error (plus
// discrepancy for M3/M4); the GP band exists only for emulated models.
inline std::vector<BandTable> predictive_bands(const StatModelSpec& spec,
                                               const Eigen::VectorXd& v, double level = 0.95,
                                               BandKind which = BandKind::all) {
    spec.validate();
    if (which == BandKind::gp && !uses_emulator(spec.kind))
        throw unsupported_error("CI=\"GP\" requires an emulated model (M2/M4)");
    if (std::abs(level - 0.95) > 1e-12)
        throw unsupported_error("only the 95% level is implemented");
    const double z = kZ95;
    SplitParams s = split_parameters(v, spec.layout);
    const Eigen::Index n = spec.data.n();

    Eigen::VectorXd mean(n);
    Eigen::VectorXd gp_var = Eigen::VectorXd::Zero(n);
    if (uses_emulator(spec.kind)) {
        auto [gp_mean, gp_cov] = spec.emulator->predict(detail::emulator_inputs(spec.data, s.theta));
        mean = gp_mean;
        gp_var = gp_cov.diagonal().cwiseMax(0.0);
    } else {
        for (Eigen::Index i = 0; i < n; ++i)
            mean(i) = (*spec.code)(spec.data.X.row(i), s.theta);
    }

    Eigen::VectorXd err_var = Eigen::VectorXd::Constant(n, s.noise_var);
    if (s.disc)
        err_var += detail::discrepancy_cov(spec, s.disc->first, s.disc->second).diagonal();

    std::vector<BandTable> out;
    if (which == BandKind::err || which == BandKind::all) {
        Eigen::VectorXd hw = (err_var.array().sqrt() * z).matrix();
        out.push_back({"err", mean, mean - hw, mean + hw});
    }
    if ((which == BandKind::gp || which == BandKind::all) && uses_emulator(spec.kind)) {
        Eigen::VectorXd hw = (gp_var.array().sqrt() * z).matrix();
        out.push_back({"GP", mean, mean - hw, mean + hw});
    }
    return out;
}

}  // namespace calib
