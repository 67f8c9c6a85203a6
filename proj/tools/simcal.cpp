// simcal: Bayesian calibration of simulator codes from a JSON configuration.
//
// Subcommands: calibrate | validate | forecast | design | plotdata.
// Exit codes: 0 success, 1 runtime/numeric failure, 2 configuration/input failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "calib/calibration.hpp"
#include "calib/density.hpp"
#include "calib/persist.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = "result";
    std::uint64_t seed = 0;
    bool seed_given = false;
    int workers = 0;
    bool mh_restart_init = false;
};

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw calib::config_error("cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw calib::config_error(path + ": " + e.what());
    }
}

// Everything a workflow needs, assembled from one config document.
struct Setup {
    calib::StatModelSpec spec;
    calib::PriorSet priors;
    calib::EstimOptions opts;
    calib::CodeBinding binding;
    std::uint64_t seed = 0;
};

calib::CodeBinding parse_binding(const json& config) {
    calib::CodeBinding binding;
    if (!config.contains("code") || config["code"].is_null()) return binding;
    const json& code = config["code"];
    if (code.contains("builtin")) {
        binding.kind = calib::CodeBinding::Kind::builtin;
        binding.value = code["builtin"].get<std::string>();
    } else if (code.contains("command")) {
        binding.kind = calib::CodeBinding::Kind::command;
        binding.value = code["command"].get<std::string>();
    } else {
        throw calib::config_error("code binding must contain \"builtin\" or \"command\"");
    }
    return binding;
}

Eigen::VectorXd json_vector(const json& arr, const std::string& what) {
    if (!arr.is_array() || arr.empty())
        throw calib::config_error(what + " must be a nonempty array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = arr[static_cast<size_t>(i)].get<double>();
    return v;
}

calib::EstimOptions parse_estim(const json& config, int total, const GlobalArgs& args) {
    if (!config.contains("estim")) throw calib::config_error("missing \"estim\" block");
    const json& e = config["estim"];
    calib::EstimOptions opts;
    opts.ngibbs = e.value("Ngibbs", 1000);
    opts.nmh = e.value("Nmh", 5000);
    opts.burn_in = e.value("burnIn", 0);
    opts.nchains = e.value("Nchains", 1);
    if (!e.contains("thetaInit")) throw calib::config_error("estim.thetaInit is required");
    opts.theta_init = json_vector(e["thetaInit"], "estim.thetaInit");
    if (e.contains("r")) {
        Eigen::VectorXd r = json_vector(e["r"], "estim.r");
        if (r.size() != 2) throw calib::config_error("estim.r must have 2 entries");
        opts.r = r;
    }
    if (!e.contains("sig") || (e["sig"].is_string() && e["sig"] == "identity")) {
        opts.sig = Eigen::MatrixXd::Identity(total, total);
    } else if (e["sig"].is_array() && !e["sig"].empty() && e["sig"][0].is_array()) {
        opts.sig.resize(static_cast<Eigen::Index>(e["sig"].size()), total);
        for (Eigen::Index i = 0; i < opts.sig.rows(); ++i)
            opts.sig.row(i) = json_vector(e["sig"][static_cast<size_t>(i)], "estim.sig row");
    } else {
        Eigen::VectorXd diag = json_vector(e["sig"], "estim.sig");
        opts.sig = diag.asDiagonal();
    }
    opts.mh_restart_init = e.value("mh_restart_init", false) || args.mh_restart_init;
    try {
        opts.validate();
    } catch (const calib::error& err) {
        throw calib::config_error(std::string("estim: ") + err.what());
    }
    if (opts.theta_init.size() != total)
        throw calib::config_error("estim.thetaInit length " +
                                  std::to_string(opts.theta_init.size()) +
                                  " does not match the parameter layout total " +
                                  std::to_string(total));
    return opts;
}

// Builds the emulator for M2/M4 per the three supported bindings: generated
// DOE + code, user DOE + code, or user DOE + precomputed outputs.
std::shared_ptr<const calib::EmulatorModel> build_emulator(
    const json& config, const calib::ObservationSet& data,
    const std::shared_ptr<const calib::SimulatorCode>& code, int p, std::uint64_t seed) {
    if (!config.contains("emulator"))
        throw calib::config_error("surrogate models need an \"emulator\" block");
    const json& e = config["emulator"];
    const calib::KernelFamily family =
        calib::kernel_family_from_string(e.value("kernel", std::string("matern5_2")));
    calib::EmulatorFitOptions fit_opts;
    fit_opts.restarts = e.value("restarts", 5);
    fit_opts.seed = calib::derive_seed(seed, 0xE3031ULL);

    Eigen::MatrixXd design;
    Eigen::VectorXd lower, upper;
    if (e.contains("doe")) {
        calib::CsvTable t = calib::read_csv(e["doe"].get<std::string>());
        design = t.values;
        if (design.cols() != data.d() + p)
            throw calib::config_error("DOE column count must equal d + p");
        lower = design.colwise().minCoeff();
        upper = design.colwise().maxCoeff();
    } else {
        if (!e.contains("binf") || !e.contains("bsup"))
            throw calib::config_error("emulator needs binf/bsup when no DOE file is given");
        Eigen::VectorXd binf = json_vector(e["binf"], "emulator.binf");
        Eigen::VectorXd bsup = json_vector(e["bsup"], "emulator.bsup");
        Eigen::VectorXd x_low, x_high, t_low, t_high;
        if (binf.size() == p) {
            x_low = data.X.colwise().minCoeff();
            x_high = data.X.colwise().maxCoeff();
            t_low = binf;
            t_high = bsup;
        } else if (binf.size() == data.d() + p) {
            x_low = binf.head(data.d());
            x_high = bsup.head(data.d());
            t_low = binf.tail(p);
            t_high = bsup.tail(p);
        } else {
            throw calib::config_error("emulator bounds must have length p or d+p");
        }
        const int n_emul = e.value("n_emul", 60);
        calib::DesignOfExperiments doe = calib::joint_design(
            x_low, x_high, t_low, t_high, n_emul, calib::derive_seed(seed, 0xD0EULL));
        design = doe.points;
        lower = doe.binf;
        upper = doe.bsup;
    }

    Eigen::VectorXd outputs;
    if (e.contains("outputs")) {
        calib::CsvTable t = calib::read_csv(e["outputs"].get<std::string>());
        if (t.values.cols() != 1 || t.values.rows() != design.rows())
            throw calib::config_error("emulator outputs must be one column matching the DOE rows");
        outputs = t.values.col(0);
    } else {
        if (!code)
            throw calib::config_error(
                "emulator needs either an \"outputs\" file or a code binding");
        outputs.resize(design.rows());
        const Eigen::Index d = data.d();
        for (Eigen::Index i = 0; i < design.rows(); ++i)
            outputs(i) = (*code)(design.row(i).head(d), design.row(i).tail(p));
    }
    return std::make_shared<calib::EmulatorModel>(
        calib::fit_emulator(design, outputs, family, lower, upper, fit_opts));
}

Setup build_setup(const json& config, const GlobalArgs& args) {
    Setup setup;
    if (!config.contains("model")) throw calib::config_error("missing \"model\"");
    setup.spec.kind = calib::model_kind_from_string(config["model"].get<std::string>());
    if (!config.contains("data")) throw calib::config_error("missing \"data\" path");
    setup.spec.data = calib::read_observations_csv(config["data"].get<std::string>());
    setup.seed = args.seed_given ? args.seed : config.value("seed", std::uint64_t{0});

    setup.binding = parse_binding(config);
    if (!config.contains("priors") || !config["priors"].is_array())
        throw calib::config_error("missing \"priors\" array");
    try {
        setup.priors = calib::prior_set_from_json(config["priors"]);
    } catch (const calib::error& e) {
        throw calib::config_error(std::string("priors: ") + e.what());
    }

    const bool disc = calib::uses_discrepancy(setup.spec.kind);
    int p;
    if (config.contains("p"))
        p = config["p"].get<int>();
    else if (setup.binding.kind == calib::CodeBinding::Kind::builtin &&
             setup.binding.value == "oscillator")
        p = 5;
    else
        p = static_cast<int>(setup.priors.slots.size()) - (disc ? 3 : 1);
    if (p < 1) throw calib::config_error("parameter count p must be >= 1");
    setup.spec.layout = calib::ParameterLayout{p, disc};

    const auto names = calib::parameter_names(setup.spec.layout);
    if (setup.priors.slots.size() != names.size())
        throw calib::config_error(
            setup.priors.slots.size() < names.size()
                ? "missing prior for slot '" + names[setup.priors.slots.size()] + "'"
                : "too many priors: layout has " + std::to_string(names.size()) + " slots");

    setup.spec.code = calib::make_code(setup.binding, p);
    if (calib::uses_emulator(setup.spec.kind))
        setup.spec.emulator =
            build_emulator(config, setup.spec.data, setup.spec.code, p, setup.seed);
    else if (!setup.spec.code)
        throw calib::config_error(calib::to_string(setup.spec.kind) +
                                  " requires a code binding");
    if (disc && config.contains("discrepancy") && config["discrepancy"].contains("kernel"))
        setup.spec.discrepancy_family =
            calib::kernel_family_from_string(config["discrepancy"]["kernel"].get<std::string>());

    setup.opts = parse_estim(config, setup.spec.layout.total(), args);
    try {
        setup.spec.validate();
        setup.priors.validate_for(setup.spec.layout);
    } catch (const calib::error& e) {
        throw calib::config_error(e.what());
    }
    return setup;
}

std::string describe_code(const calib::CodeBinding& binding) {
    switch (binding.kind) {
        case calib::CodeBinding::Kind::none: return "none (emulator only)";
        case calib::CodeBinding::Kind::builtin: return "builtin:" + binding.value;
        case calib::CodeBinding::Kind::command: return "command:" + binding.value;
    }
    return "?";
}

std::string percent(double rate) { return calib::format_double(rate * 100); }

void print_summary(const calib::CalibrationResult& result, const calib::CodeBinding& binding) {
    std::cout << "Call:\n\nWith the code:\n" << describe_code(binding) << "\n\n"
              << "Selected model : " << calib::to_string(result.spec.kind) << "\n\n";
    double gibbs = 0, mh = 0;
    for (const auto& c : result.chains) {
        gibbs += c.accept_gibbs.mean();
        mh += c.accept_mh;
    }
    gibbs /= static_cast<double>(result.chains.size());
    mh /= static_cast<double>(result.chains.size());
    std::cout << "Acceptation rate of the Metropolis within Gibbs algorithm:\n"
              << percent(gibbs) << "%\n\n"
              << "Acceptation rate of the Metropolis Hastings algorithm:\n"
              << percent(mh) << "%\n\n";
    std::cout << "Maximum a posteriori:\n";
    for (Eigen::Index i = 0; i < result.map.size(); ++i)
        std::cout << calib::format_double(result.map(i)) << (i + 1 < result.map.size() ? " " : "\n");
    std::cout << "\nMean a posteriori:\n";
    for (Eigen::Index i = 0; i < result.mean.size(); ++i)
        std::cout << calib::format_double(result.mean(i))
                  << (i + 1 < result.mean.size() ? " " : "\n");
    if (result.diagnostics) {
        std::cout << "\nPotential scale reduction factors:\n";
        for (Eigen::Index i = 0; i < result.diagnostics->psrf.size(); ++i)
            std::cout << calib::format_double(result.diagnostics->psrf(i))
                      << (i + 1 < result.diagnostics->psrf.size() ? " " : "\n");
        std::cout << "Multivariate psrf: " << calib::format_double(result.diagnostics->mpsrf)
                  << "\n";
    }
}

void print_cv(const calib::CVReport& cv) {
    std::cout << "\nCross validation:\n Method: " << cv.method << "\n";
    std::cout << "      predicted         real        error\n";
    const size_t head = std::min<size_t>(cv.rows.size(), 6);
    for (size_t i = 0; i < head; ++i)
        std::cout << (i + 1) << " " << calib::format_double(cv.rows[i].predicted) << " "
                  << calib::format_double(cv.rows[i].real) << " "
                  << calib::format_double(cv.rows[i].error) << "\n";
    std::cout << "\nRMSE: " << calib::format_double(cv.rmse) << "\n\n"
              << "Cover rate:\n" << percent(cv.cover_rate) << "%\n";
}

int effective_workers(const GlobalArgs& args) {
    if (args.workers > 0) return args.workers;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void write_preview(const json& config, const Setup& setup, const std::string& out_dir) {
    if (!config.contains("preview_params")) return;
    Eigen::VectorXd v = json_vector(config["preview_params"], "preview_params");
    auto bands = calib::predictive_bands(setup.spec, v);
    const Eigen::Index d = setup.spec.data.d();
    std::ofstream out(fs::path(out_dir) / "preview_bands.csv");
    for (Eigen::Index j = 1; j <= d; ++j) out << "x" << j << ',';
    out << "mean,lower,upper,band\n";
    for (const auto& b : bands)
        for (Eigen::Index i = 0; i < b.mean.size(); ++i) {
            for (Eigen::Index j = 0; j < d; ++j)
                out << calib::format_double(setup.spec.data.X(i, j)) << ',';
            out << calib::format_double(b.mean(i)) << ',' << calib::format_double(b.lower(i))
                << ',' << calib::format_double(b.upper(i)) << ',' << b.kind << '\n';
        }
}

int cmd_calibrate(const GlobalArgs& args, bool with_cv) {
    json config = load_config(args.config_path);
    Setup setup = build_setup(config, args);
    fs::create_directories(args.out_dir);
    write_preview(config, setup, args.out_dir);

    calib::CVOptions cv;
    if (with_cv) {
        if (!config.contains("valid") || !config["valid"].contains("nCV"))
            throw calib::config_error("validate needs a \"valid\" block with nCV");
        cv.n_cv = config["valid"]["nCV"].get<int>();
        const std::string type = config["valid"].value("type_CV", std::string("loo"));
        if (type != "loo") throw calib::config_error("type_CV: only \"loo\" is implemented");
        if (cv.n_cv < 1 || cv.n_cv > setup.spec.data.n())
            throw calib::config_error("valid.nCV must lie in [1, n]");
    }
    calib::CalibrationResult result = calib::calibrate(setup.spec, setup.priors, setup.opts, cv,
                                                       setup.seed, effective_workers(args));
    calib::save_result(result, setup.binding, args.out_dir);
    print_summary(result, setup.binding);
    if (result.cv) print_cv(*result.cv);
    return 0;
}

int cmd_forecast(const GlobalArgs& args) {
    json config = load_config(args.config_path);
    if (!config.contains("result")) throw calib::config_error("forecast needs \"result\" directory");
    calib::CalibrationResult result = calib::load_result(config["result"].get<std::string>());

    Eigen::MatrixXd x_new(0, result.spec.data.d());
    if (config.contains("x_new")) {
        calib::CsvTable t = calib::read_csv(config["x_new"].get<std::string>());
        for (size_t j = 0; j < t.header.size(); ++j)
            if (t.header[j] != "x" + std::to_string(j + 1))
                throw calib::config_error("x_new columns must be named x1..xd");
        x_new = t.values;
    }
    calib::ForecastTable table = calib::forecast(result, x_new);
    fs::create_directories(args.out_dir);
    std::ofstream out(fs::path(args.out_dir) / "forecast.csv");
    const Eigen::Index d = table.x.cols();
    for (Eigen::Index j = 1; j <= d; ++j) out << "x" << j << ',';
    out << "mean,lower,upper,band,region\n";
    for (Eigen::Index i = 0; i < table.mean.size(); ++i) {
        for (Eigen::Index j = 0; j < d; ++j) out << calib::format_double(table.x(i, j)) << ',';
        out << calib::format_double(table.mean(i)) << ',' << calib::format_double(table.lower(i))
            << ',' << calib::format_double(table.upper(i)) << ','
            << table.band_kind[static_cast<size_t>(i)] << ','
            << table.region[static_cast<size_t>(i)] << '\n';
    }
    std::cout << "forecast rows: " << table.mean.size() << "\n";
    return 0;
}

int cmd_design(const GlobalArgs& args) {
    json config = load_config(args.config_path);
    Setup setup = build_setup(config, args);
    if (!calib::uses_emulator(setup.spec.kind))
        throw calib::config_error("sequential design requires a surrogate model (model2/model4)");
    if (!setup.spec.code)
        throw calib::config_error("sequential design requires a live code binding");
    int k = 0, candidates = 200;
    if (config.contains("design")) {
        k = config["design"].value("k", 0);
        candidates = config["design"].value("candidates", 200);
    }
    calib::SequentialDesignResult res = calib::sequential_design(
        setup.spec, setup.priors, setup.opts, k, candidates,
        calib::derive_seed(setup.seed, 0x5E9DULL));
    fs::create_directories(args.out_dir);
    const Eigen::MatrixXd& design = res.spec.emulator->design();
    std::vector<std::string> header =
        calib::doe_header(setup.spec.data.d(), setup.spec.layout.p);
    header.push_back("y");
    Eigen::MatrixXd table(design.rows(), design.cols() + 1);
    table.leftCols(design.cols()) = design;
    table.col(design.cols()) = res.spec.emulator->outputs();
    calib::write_csv((fs::path(args.out_dir) / "design.csv").string(), header, table);

    std::ofstream trace(fs::path(args.out_dir) / "trace.csv");
    trace << "step,ei,ss";
    for (int j = 1; j <= setup.spec.layout.p; ++j) trace << ",theta" << j;
    trace << "\n";
    for (size_t s = 0; s < res.trace.size(); ++s) {
        trace << (s + 1) << ',' << calib::format_double(res.trace[s].ei) << ','
              << calib::format_double(res.trace[s].ss);
        for (Eigen::Index j = 0; j < res.trace[s].theta_star.size(); ++j)
            trace << ',' << calib::format_double(res.trace[s].theta_star(j));
        trace << '\n';
    }
    std::cout << "design rows: " << design.rows() << (res.converged ? " (converged)" : "")
              << "\n";
    return 0;
}

int cmd_plotdata(const GlobalArgs& args) {
    json config = load_config(args.config_path);
    if (!config.contains("result")) throw calib::config_error("plotdata needs \"result\" directory");
    calib::CalibrationResult result = calib::load_result(config["result"].get<std::string>());
    if (result.chains.empty()) throw calib::config_error("result directory has no chains");
    fs::create_directories(args.out_dir);
    const auto names = calib::parameter_names(result.spec.layout);
    const Eigen::Index dim = result.map.size();

    {
        std::ofstream out(fs::path(args.out_dir) / "acf.csv");
        out << "chain,parameter,lag,rho\n";
        const int max_lag = 40;
        for (size_t c = 0; c < result.chains.size(); ++c)
            for (Eigen::Index j = 0; j < dim; ++j) {
                Eigen::VectorXd acf =
                    calib::autocorrelation(result.chains[c].mh_samples.col(j), max_lag);
                for (int lag = 0; lag <= max_lag; ++lag)
                    out << (c + 1) << ',' << names[static_cast<size_t>(j)] << ',' << lag << ','
                        << calib::format_double(acf(lag)) << '\n';
            }
    }
    {
        std::ofstream out(fs::path(args.out_dir) / "trace.csv");
        out << "chain,iteration";
        for (const auto& n : names) out << ',' << n;
        out << '\n';
        for (size_t c = 0; c < result.chains.size(); ++c) {
            const auto& s = result.chains[c].mh_samples;
            for (Eigen::Index i = 0; i < s.rows(); ++i) {
                out << (c + 1) << ',' << (i + 1);
                for (Eigen::Index j = 0; j < dim; ++j)
                    out << ',' << calib::format_double(s(i, j));
                out << '\n';
            }
        }
    }
    Eigen::MatrixXd pooled = result.pooled_samples();
    {
        std::ofstream out(fs::path(args.out_dir) / "density.csv");
        out << "parameter,grid,prior,posterior\n";
        for (Eigen::Index j = 0; j < dim; ++j) {
            auto [grid, posterior] = calib::gaussian_kde(pooled.col(j), 512);
            const auto& prior = result.priors.slots[static_cast<size_t>(j)];
            for (int g = 0; g < 512; ++g)
                out << names[static_cast<size_t>(j)] << ','
                    << calib::format_double(grid(g)) << ','
                    << calib::format_double(std::exp(prior.log_density(grid(g)))) << ','
                    << calib::format_double(posterior(g)) << '\n';
        }
    }
    {
        const Eigen::Index thin =
            std::max<Eigen::Index>(1, (pooled.rows() + 1999) / 2000);
        std::ofstream out(fs::path(args.out_dir) / "pairs.csv");
        for (size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
        out << '\n';
        for (Eigen::Index i = 0; i < pooled.rows(); i += thin) {
            for (Eigen::Index j = 0; j < dim; ++j)
                out << (j ? "," : "") << calib::format_double(pooled(i, j));
            out << '\n';
        }
    }
    {
        std::ofstream out(fs::path(args.out_dir) / "out.csv");
        const Eigen::Index d = result.spec.data.d();
        for (Eigen::Index j = 1; j <= d; ++j) out << "x" << j << ',';
        out << "observed,mean,lower,upper,band\n";
        for (const auto& b : result.bands)
            for (Eigen::Index i = 0; i < b.mean.size(); ++i) {
                for (Eigen::Index j = 0; j < d; ++j)
                    out << calib::format_double(result.spec.data.X(i, j)) << ',';
                out << calib::format_double(result.spec.data.y(i)) << ','
                    << calib::format_double(b.mean(i)) << ','
                    << calib::format_double(b.lower(i)) << ','
                    << calib::format_double(b.upper(i)) << ',' << b.kind << '\n';
            }
    }
    std::cout << "plot data written to " << args.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian calibration of simulator codes"};
    app.require_subcommand(1);
    GlobalArgs args;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        sub->add_option("--config", args.config_path, "JSON configuration file")
            ->required(config_required);
        sub->add_option("--out", args.out_dir, "output directory");
        sub->add_option("--seed", args.seed, "master RNG seed")
            ->each([&](const std::string&) { args.seed_given = true; });
        sub->add_option("--workers", args.workers, "max concurrent workers");
        sub->add_flag("--mh-restart-init", args.mh_restart_init,
                      "restart the MH stage from thetaInit instead of the Gibbs state");
    };
    CLI::App* calibrate = app.add_subcommand("calibrate", "run a calibration");
    CLI::App* validate = app.add_subcommand("validate", "calibration + cross validation");
    CLI::App* forecast = app.add_subcommand("forecast", "predict over new inputs");
    CLI::App* design = app.add_subcommand("design", "EI sequential design enrichment");
    CLI::App* plotdata = app.add_subcommand("plotdata", "export plot-ready CSV data");
    for (CLI::App* sub : {calibrate, validate, forecast, design, plotdata})
        add_common(sub, true);

    CLI11_PARSE(app, argc, argv);
    try {
        if (calibrate->parsed()) return cmd_calibrate(args, false);
        if (validate->parsed()) return cmd_calibrate(args, true);
        if (forecast->parsed()) return cmd_forecast(args);
        if (design->parsed()) return cmd_design(args);
        if (plotdata->parsed()) return cmd_plotdata(args);
    } catch (const calib::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const calib::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
