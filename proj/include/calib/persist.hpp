#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "calib/calibration.hpp"
#include "calib/csv.hpp"
#include "calib/errors.hpp"
#include "calib/models.hpp"
#include "calib/subprocess.hpp"

namespace calib {

// How a result directory can rebuild its simulator: a builtin code by name, a
// shell command evaluated per point, or nothing (emulator-only).
struct CodeBinding {
    enum class Kind { none, builtin, command };
    Kind kind = Kind::none;
    std::string value;
};

inline std::shared_ptr<const SimulatorCode> make_code(const CodeBinding& binding, int p) {
    switch (binding.kind) {
        case CodeBinding::Kind::none:
            return nullptr;
        case CodeBinding::Kind::builtin:
            if (binding.value == "oscillator")
                return std::make_shared<SimulatorCode>(oscillator_simulator());
            throw config_error("unknown builtin code '" + binding.value + "'");
        case CodeBinding::Kind::command:
            return std::make_shared<SimulatorCode>(
                subprocess_simulator(SubprocessSpec{binding.value}, p));
    }
    throw config_error("invalid code binding");
}

inline std::vector<std::string> parameter_names(const ParameterLayout& layout) {
    std::vector<std::string> names;
    for (int j = 1; j <= layout.p; ++j) names.push_back("theta" + std::to_string(j));
    if (layout.has_discrepancy) {
        names.emplace_back("sigma_delta2");
        names.emplace_back("psi_delta");
    }
    names.emplace_back("sigma_e2");
    return names;
}

namespace detail {

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd json_vec(const nlohmann::json& arr) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = arr[static_cast<size_t>(i)].get<double>();
    return v;
}

inline nlohmann::json mat_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i)));
    return rows;
}

inline Eigen::MatrixXd json_mat(const nlohmann::json& rows) {
    if (rows.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows[0].size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) = json_vec(rows[static_cast<size_t>(i)]);
    return m;
}

}  // namespace detail

// Writes a self-contained result directory: manifest.json, observations.csv,
// one chain CSV per chain (retained samples plus log posterior), bands.csv,
// optionally cv.csv and an emulator/ subdirectory.
inline void save_result(const CalibrationResult& result, const CodeBinding& binding,
                        const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["model"] = to_string(result.spec.kind);
    manifest["layout"] = {{"p", result.spec.layout.p},
                          {"has_discrepancy", result.spec.layout.has_discrepancy}};
    if (uses_discrepancy(result.spec.kind))
        manifest["discrepancy_kernel"] = to_string(result.spec.discrepancy_family);
    manifest["priors"] = to_json(result.priors);
    manifest["seed"] = result.seed;
    manifest["options"] = {{"Ngibbs", result.opts.ngibbs},
                           {"Nmh", result.opts.nmh},
                           {"burnIn", result.opts.burn_in},
                           {"Nchains", result.opts.nchains},
                           {"thetaInit", detail::vec_json(result.opts.theta_init)},
                           {"r", {result.opts.r(0), result.opts.r(1)}},
                           {"sig", detail::mat_json(result.opts.sig)},
                           {"mh_restart_init", result.opts.mh_restart_init}};
    switch (binding.kind) {
        case CodeBinding::Kind::none: manifest["code"] = {{"kind", "none"}}; break;
        case CodeBinding::Kind::builtin:
            manifest["code"] = {{"kind", "builtin"}, {"name", binding.value}};
            break;
        case CodeBinding::Kind::command:
            manifest["code"] = {{"kind", "command"}, {"command", binding.value}};
            break;
    }
    manifest["map"] = detail::vec_json(result.map);
    manifest["mean"] = detail::vec_json(result.mean);
    manifest["map_log_post"] = result.map_log_post;
    nlohmann::json accept = nlohmann::json::array();
    for (const auto& c : result.chains)
        accept.push_back({{"gibbs", detail::vec_json(c.accept_gibbs)}, {"mh", c.accept_mh}});
    manifest["acceptance"] = accept;
    if (result.diagnostics) {
        manifest["psrf"] = detail::vec_json(result.diagnostics->psrf);
        manifest["mpsrf"] = result.diagnostics->mpsrf;
    }
    if (result.cv) {
        manifest["cv"] = {{"method", result.cv->method},
                          {"rmse", result.cv->rmse},
                          {"cover_rate", result.cv->cover_rate}};
    }
    std::ofstream((fs::path(dir) / "manifest.json").string()) << manifest.dump(2) << '\n';

    write_observations_csv((fs::path(dir) / "observations.csv").string(), result.spec.data);

    std::vector<std::string> header = parameter_names(result.spec.layout);
    header.emplace_back("log_post");
    for (size_t c = 0; c < result.chains.size(); ++c) {
        const auto& chain = result.chains[c];
        Eigen::MatrixXd table(chain.mh_samples.rows(), chain.mh_samples.cols() + 1);
        table.leftCols(chain.mh_samples.cols()) = chain.mh_samples;
        table.col(chain.mh_samples.cols()) = chain.log_post;
        write_csv((fs::path(dir) / ("chain" + std::to_string(c + 1) + ".csv")).string(), header,
                  table);
    }

    {
        Eigen::Index rows = 0;
        for (const auto& b : result.bands) rows += b.mean.size();
        const Eigen::Index d = result.spec.data.d();
        std::vector<std::string> bheader;
        for (Eigen::Index j = 1; j <= d; ++j) bheader.push_back("x" + std::to_string(j));
        bheader.insert(bheader.end(), {"mean", "lower", "upper"});
        Eigen::MatrixXd btable(rows, d + 3);
        std::vector<std::string> kinds;
        Eigen::Index row = 0;
        for (const auto& b : result.bands)
            for (Eigen::Index i = 0; i < b.mean.size(); ++i, ++row) {
                btable.row(row).head(d) = result.spec.data.X.row(i);
                btable(row, d) = b.mean(i);
                btable(row, d + 1) = b.lower(i);
                btable(row, d + 2) = b.upper(i);
                kinds.push_back(b.kind);
            }
        // band kind is text, so assemble the CSV by hand around write_csv's format
        std::ofstream out((fs::path(dir) / "bands.csv").string());
        for (const auto& h : bheader) out << h << ',';
        out << "band\n";
        for (Eigen::Index i = 0; i < btable.rows(); ++i) {
            for (Eigen::Index j = 0; j < btable.cols(); ++j)
                out << format_double(btable(i, j)) << ',';
            out << kinds[static_cast<size_t>(i)] << '\n';
        }
    }

    if (result.cv) {
        Eigen::MatrixXd table(static_cast<Eigen::Index>(result.cv->rows.size()), 4);
        for (Eigen::Index i = 0; i < table.rows(); ++i) {
            const auto& r = result.cv->rows[static_cast<size_t>(i)];
            table.row(i) << r.index, r.predicted, r.real, r.error;
        }
        write_csv((fs::path(dir) / "cv.csv").string(),
                  {"index", "predicted", "real", "error"}, table);
    }

    if (uses_emulator(result.spec.kind))
        save_emulator(*result.spec.emulator, (fs::path(dir) / "emulator").string());
}

// Rebuilds a result from a directory written by save_result. The Gibbs-stage
// samples are not persisted; everything needed for forecasting and plots is.
inline CalibrationResult load_result(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in((fs::path(dir) / "manifest.json").string());
    if (!in) throw config_error("missing manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(in);

    CalibrationResult result;
    result.spec.kind = model_kind_from_string(manifest["model"].get<std::string>());
    result.spec.layout.p = manifest["layout"]["p"].get<int>();
    result.spec.layout.has_discrepancy = manifest["layout"]["has_discrepancy"].get<bool>();
    if (manifest.contains("discrepancy_kernel"))
        result.spec.discrepancy_family =
            kernel_family_from_string(manifest["discrepancy_kernel"].get<std::string>());
    result.priors = prior_set_from_json(manifest["priors"]);
    result.seed = manifest["seed"].get<std::uint64_t>();

    const auto& o = manifest["options"];
    result.opts.ngibbs = o["Ngibbs"].get<int>();
    result.opts.nmh = o["Nmh"].get<int>();
    result.opts.burn_in = o["burnIn"].get<int>();
    result.opts.nchains = o["Nchains"].get<int>();
    result.opts.theta_init = detail::json_vec(o["thetaInit"]);
    result.opts.r << o["r"][0].get<double>(), o["r"][1].get<double>();
    result.opts.sig = detail::json_mat(o["sig"]);
    result.opts.mh_restart_init = o["mh_restart_init"].get<bool>();

    CodeBinding binding;
    const std::string code_kind = manifest["code"]["kind"].get<std::string>();
    if (code_kind == "builtin") {
        binding.kind = CodeBinding::Kind::builtin;
        binding.value = manifest["code"]["name"].get<std::string>();
    } else if (code_kind == "command") {
        binding.kind = CodeBinding::Kind::command;
        binding.value = manifest["code"]["command"].get<std::string>();
    }
    result.spec.code = make_code(binding, result.spec.layout.p);

    result.spec.data = read_observations_csv((fs::path(dir) / "observations.csv").string());
    if (uses_emulator(result.spec.kind))
        result.spec.emulator =
            std::make_shared<EmulatorModel>(load_emulator((fs::path(dir) / "emulator").string()));

    result.map = detail::json_vec(manifest["map"]);
    result.mean = detail::json_vec(manifest["mean"]);
    result.map_log_post = manifest["map_log_post"].get<double>();

    for (int c = 1;; ++c) {
        fs::path chain_path = fs::path(dir) / ("chain" + std::to_string(c) + ".csv");
        if (!fs::exists(chain_path)) break;
        CsvTable t = read_csv(chain_path.string());
        ChainResult chain;
        const Eigen::Index dim = t.values.cols() - 1;
        chain.mh_samples = t.values.leftCols(dim);
        chain.log_post = t.values.col(dim);
        result.chains.push_back(std::move(chain));
    }
    if (result.chains.empty()) throw config_error("no chain CSVs in " + dir);

    {
        // bands.csv carries a text column, so parse it by hand
        std::ifstream bin((fs::path(dir) / "bands.csv").string());
        if (!bin) throw config_error("missing bands.csv in " + dir);
        std::string line;
        std::getline(bin, line);
        const size_t ncols = split_csv_line(line).size();
        const Eigen::Index d = result.spec.data.d();
        std::vector<BandTable> bands;
        while (std::getline(bin, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto fields = split_csv_line(line);
            if (fields.size() != ncols)
                throw config_error(dir + "/bands.csv: inconsistent column count");
            const std::string kind = fields.back();
            if (bands.empty() || bands.back().kind != kind) {
                bands.push_back(BandTable{kind, {}, {}, {}});
            }
            auto append = [](Eigen::VectorXd& v, double value) {
                v.conservativeResize(v.size() + 1);
                v(v.size() - 1) = value;
            };
            append(bands.back().mean, parse_double(fields[static_cast<size_t>(d)]));
            append(bands.back().lower, parse_double(fields[static_cast<size_t>(d) + 1]));
            append(bands.back().upper, parse_double(fields[static_cast<size_t>(d) + 2]));
        }
        result.bands = std::move(bands);
    }

    if (manifest.contains("psrf")) {
        GelmanRubinResult gr;
        gr.psrf = detail::json_vec(manifest["psrf"]);
        gr.mpsrf = manifest["mpsrf"].get<double>();
        result.diagnostics = gr;
    }
    if (manifest.contains("cv")) {
        CVReport cv;
        cv.method = manifest["cv"]["method"].get<std::string>();
        cv.rmse = manifest["cv"]["rmse"].get<double>();
        cv.cover_rate = manifest["cv"]["cover_rate"].get<double>();
        fs::path cv_path = fs::path(dir) / "cv.csv";
        if (fs::exists(cv_path)) {
            CsvTable t = read_csv(cv_path.string());
            for (Eigen::Index i = 0; i < t.values.rows(); ++i)
                cv.rows.push_back({static_cast<int>(t.values(i, 0)), t.values(i, 1),
                                   t.values(i, 2), t.values(i, 3)});
        }
        result.cv = std::move(cv);
    }
    return result;
}

}  // namespace calib
