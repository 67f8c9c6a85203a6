#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "calib/csv.hpp"
#include "calib/design.hpp"
#include "calib/errors.hpp"
#include "calib/kernels.hpp"
#include "calib/linalg.hpp"
#include "calib/optim.hpp"
#include "calib/rng.hpp"

namespace calib {

// Constant trend h(t) = 1 with coefficient beta.
struct TrendSpec {
    double beta = 0.0;
};

// Fitted Gaussian-process surrogate. Kernel lengthscales live in unit-cube
// coordinates defined by [lower, upper]; hyperparameters are frozen after
// fitting (plug-in use during MCMC).
class EmulatorModel {
  public:
    EmulatorModel() = default;

    EmulatorModel(Eigen::MatrixXd design, Eigen::VectorXd outputs, Eigen::VectorXd lower,
                  Eigen::VectorXd upper, KernelSpec kernel, TrendSpec trend, double nugget)
        : design_(std::move(design)),
          outputs_(std::move(outputs)),
          lower_(std::move(lower)),
          upper_(std::move(upper)),
          kernel_(std::move(kernel)),
          trend_(trend),
          nugget_(nugget) {
        if (design_.rows() != outputs_.size())
            throw structural_error("design rows must match output count");
        if (lower_.size() != design_.cols() || upper_.size() != design_.cols())
            throw structural_error("emulator bounds must match design dimension");
        kernel_.validate();
        unit_design_ = to_unit_cube(design_, lower_, upper_);
        KernelSpec corr = kernel_;
        corr.variance = 1.0;
        Eigen::MatrixXd r = covariance_matrix(corr, unit_design_, unit_design_);
        r.diagonal().array() += nugget_;
        llt_.compute(r);
        if (llt_.info() != Eigen::Success)
            throw conditioning_error("emulator correlation matrix not positive definite");
        alpha_ = llt_.solve(outputs_ - Eigen::VectorXd::Constant(outputs_.size(), trend_.beta));
    }

    const Eigen::MatrixXd& design() const { return design_; }
    const Eigen::VectorXd& outputs() const { return outputs_; }
    const Eigen::VectorXd& lower() const { return lower_; }
    const Eigen::VectorXd& upper() const { return upper_; }
    const KernelSpec& kernel() const { return kernel_; }
    const TrendSpec& trend() const { return trend_; }
    double nugget() const { return nugget_; }

    // Lower Cholesky factor of the training covariance (with nugget).
    Eigen::MatrixXd covariance_cholesky() const {
        return std::sqrt(kernel_.variance) * llt_.matrixL().toDenseMatrix();
    }

    // BLUP conditional mean and covariance at rows of T (original units).
    std::pair<Eigen::VectorXd, Eigen::MatrixXd> predict(const Eigen::MatrixXd& T) const {
        if (T.cols() != design_.cols())
            throw structural_error("prediction input dimension does not match design");
        KernelSpec corr = kernel_;
        corr.variance = 1.0;
        Eigen::MatrixXd unit_t = to_unit_cube(T, lower_, upper_);
        Eigen::MatrixXd cross = covariance_matrix(corr, unit_t, unit_design_);  // m x n_d
        Eigen::VectorXd mean =
            Eigen::VectorXd::Constant(T.rows(), trend_.beta) + cross * alpha_;
        Eigen::MatrixXd prior = covariance_matrix(corr, unit_t, unit_t);
        Eigen::MatrixXd reduction = cross * llt_.solve(cross.transpose());
        Eigen::MatrixXd cov = kernel_.variance * (prior - reduction);
        cov = 0.5 * (cov + cov.transpose().eval());
        return {std::move(mean), std::move(cov)};
    }

  private:
    Eigen::MatrixXd design_;
    Eigen::VectorXd outputs_;
    Eigen::VectorXd lower_, upper_;
    KernelSpec kernel_;
    TrendSpec trend_;
    double nugget_ = 0;
    Eigen::MatrixXd unit_design_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd alpha_;
};

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> gp_predict(const EmulatorModel& model,
                                                              const Eigen::MatrixXd& T) {
    return model.predict(T);
}

// Log marginal likelihood of y under mean beta*1 and covariance
// sigma2 * (R(psi) + nugget I), kernel evaluated on the rows of D as given.
inline double gp_log_marginal_likelihood(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                         const KernelSpec& kernel, const TrendSpec& trend,
                                         double nugget) {
    if (D.rows() != y.size()) throw structural_error("design rows must match output count");
    Eigen::MatrixXd cov = covariance_matrix(kernel, D, D);
    cov.diagonal().array() += kernel.variance * nugget;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw conditioning_error("GP covariance not positive definite");
    return mvn_log_density(y, Eigen::VectorXd::Constant(y.size(), trend.beta), llt);
}

struct EmulatorFitOptions {
    int restarts = 5;
    std::uint64_t seed = 0;
    double psi_lower = 1e-2;  // unit-cube coordinates
    double psi_upper = 10.0;
    double nugget_rel_start = 1e-8;
    double nugget_rel_max = 1e-4;
};

namespace detail {

// Profile log-likelihood pieces for fixed correlation lengthscales.
struct GpProfile {
    double beta = 0, sigma2 = 0, log_likelihood = 0;
    bool ok = false;
};

inline GpProfile gp_profile(const Eigen::MatrixXd& unit_design, const Eigen::VectorXd& y,
                            KernelFamily family, const Eigen::VectorXd& psi, double nugget,
                            double sigma2_floor) {
    const Eigen::Index n = y.size();
    KernelSpec corr{family, 1.0, psi};
    Eigen::MatrixXd r = covariance_matrix(corr, unit_design, unit_design);
    r.diagonal().array() += nugget;
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    GpProfile out;
    if (llt.info() != Eigen::Success) return out;
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd rinv_y = llt.solve(y);
    Eigen::VectorXd rinv_1 = llt.solve(ones);
    out.beta = ones.dot(rinv_y) / ones.dot(rinv_1);
    Eigen::VectorXd resid = y - out.beta * ones;
    out.sigma2 = std::max(resid.dot(llt.solve(resid)) / n, sigma2_floor);
    out.log_likelihood = -0.5 * n * std::log(2 * M_PI * out.sigma2) -
                         0.5 * log_det_from_llt(llt) - 0.5 * n;
    out.ok = true;
    return out;
}

}  // namespace detail

// Maximum-likelihood fit: beta and sigma2 profiled in closed form, anisotropic
// lengthscales by multi-start Nelder-Mead over log-psi. Bounds [lower, upper]
// define the unit-cube mapping (pass design column ranges when unknown).
inline EmulatorModel fit_emulator(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                  KernelFamily family, const Eigen::VectorXd& lower,
                                  const Eigen::VectorXd& upper,
                                  const EmulatorFitOptions& opts = {}) {
    if (D.rows() != y.size()) throw structural_error("design rows must match output count");
    if (D.rows() < 2) throw domain_error("emulator fit requires at least 2 design points");
    if (!y.allFinite()) throw domain_error("non-finite emulator outputs");

    const Eigen::Index q = D.cols();
    Eigen::MatrixXd unit = to_unit_cube(D, lower, upper);
    const double var_y = (y.array() - y.mean()).square().sum() / std::max<Eigen::Index>(y.size() - 1, 1);
    const double sigma2_floor = 1e-12 * var_y + 1e-300;

    const double log_lo = std::log(opts.psi_lower), log_hi = std::log(opts.psi_upper);
    Eigen::VectorXd nm_lower = Eigen::VectorXd::Constant(q, log_lo);
    Eigen::VectorXd nm_upper = Eigen::VectorXd::Constant(q, log_hi);

    double nugget = std::max(opts.nugget_rel_start * var_y, 1e-12);
    const double nugget_max = std::max(opts.nugget_rel_max * var_y, 1e-8);

    Rng rng(derive_seed(opts.seed, 0x6d756c61746f72ULL));
    for (;; nugget *= 10) {
        bool any_ok = false;
        double best_ll = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd best_psi;
        auto objective = [&](const Eigen::VectorXd& log_psi) {
            auto prof = detail::gp_profile(unit, y, family, log_psi.array().exp(), nugget,
                                           sigma2_floor);
            if (!prof.ok) return 1e100;
            return -prof.log_likelihood;
        };
        for (int restart = 0; restart < std::max(opts.restarts, 1); ++restart) {
            Eigen::VectorXd start(q);
            if (restart == 0)
                start.setConstant(std::log(0.5));
            else
                for (Eigen::Index i = 0; i < q; ++i)
                    start(i) = log_lo + (log_hi - log_lo) * runif(rng);
            NelderMeadOptions nm;
            nm.f_tolerance = 1e-8;
            nm.x_tolerance = 1e-6;
            auto res = nelder_mead(objective, start, nm_lower, nm_upper, nm);
            if (res.f < 1e99 && -res.f > best_ll) {
                best_ll = -res.f;
                best_psi = res.x.array().exp();
                any_ok = true;
            }
        }
        if (any_ok) {
            auto prof = detail::gp_profile(unit, y, family, best_psi, nugget, sigma2_floor);
            KernelSpec kernel{family, prof.sigma2, best_psi};
            return EmulatorModel(D, y, lower, upper, kernel, TrendSpec{prof.beta}, nugget);
        }
        if (nugget * 10 > nugget_max)
            throw conditioning_error("emulator fit failed for every restart and nugget level");
    }
}

inline EmulatorModel fit_emulator(const DesignOfExperiments& doe, const Eigen::VectorXd& y,
                                  KernelFamily family, const EmulatorFitOptions& opts = {}) {
    return fit_emulator(doe.points, y, family, doe.binf, doe.bsup, opts);
}

// --- persistence -----------------------------------------------------------

inline void save_emulator(const EmulatorModel& model, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["kernel"] = {{"family", to_string(model.kernel().family)},
                          {"variance", model.kernel().variance},
                          {"lengthscales", std::vector<double>(
                               model.kernel().lengthscales.data(),
                               model.kernel().lengthscales.data() + model.kernel().lengthscales.size())}};
    manifest["trend_beta"] = model.trend().beta;
    manifest["nugget"] = model.nugget();
    manifest["lower"] = std::vector<double>(model.lower().data(),
                                            model.lower().data() + model.lower().size());
    manifest["upper"] = std::vector<double>(model.upper().data(),
                                            model.upper().data() + model.upper().size());
    std::ofstream((fs::path(dir) / "emulator.json").string()) << manifest.dump(2) << '\n';

    Eigen::MatrixXd table(model.design().rows(), model.design().cols() + 1);
    table.leftCols(model.design().cols()) = model.design();
    table.col(model.design().cols()) = model.outputs();
    std::vector<std::string> header;
    for (Eigen::Index j = 0; j < model.design().cols(); ++j)
        header.push_back("t" + std::to_string(j + 1));
    header.push_back("y");
    write_csv((fs::path(dir) / "emulator_design.csv").string(), header, table);
}

inline EmulatorModel load_emulator(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in((fs::path(dir) / "emulator.json").string());
    if (!in) throw config_error("missing emulator manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(in);
    CsvTable table = read_csv((fs::path(dir) / "emulator_design.csv").string());
    const Eigen::Index q = table.values.cols() - 1;
    auto vec = [](const nlohmann::json& arr) {
        Eigen::VectorXd v(arr.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = arr[static_cast<size_t>(i)].get<double>();
        return v;
    };
    KernelSpec kernel{kernel_family_from_string(manifest["kernel"]["family"].get<std::string>()),
                      manifest["kernel"]["variance"].get<double>(),
                      vec(manifest["kernel"]["lengthscales"])};
    return EmulatorModel(table.values.leftCols(q), table.values.col(q), vec(manifest["lower"]),
                         vec(manifest["upper"]), kernel,
                         TrendSpec{manifest["trend_beta"].get<double>()},
                         manifest["nugget"].get<double>());
}

}  // namespace calib
