#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calib/errors.hpp"

namespace calib {

// Shortest decimal text that round-trips through IEEE-754 binary64.
inline std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, int row_for_error = -1) {
    double v = 0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{}) {
        std::string where = row_for_error >= 0 ? " at row " + std::to_string(row_for_error) : "";
        throw config_error("cannot parse number '" + s + "'" + where);
    }
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    Eigen::MatrixXd values;

    int column(const std::string& name) const {
        for (size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return static_cast<int>(j);
        throw config_error("missing CSV column '" + name + "'");
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw config_error("empty CSV file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    CsvTable t;
    t.header = split_csv_line(line);
    std::vector<std::vector<double>> rows;
    int row = 1;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        auto fields = split_csv_line(line);
        if (fields.size() != t.header.size())
            throw config_error(path + ": row " + std::to_string(row) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(t.header.size()));
        std::vector<double> r;
        r.reserve(fields.size());
        for (auto& f : fields) r.push_back(parse_double(f, row));
        rows.push_back(std::move(r));
    }
    t.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(t.header.size()));
    for (Eigen::Index i = 0; i < t.values.rows(); ++i)
        for (Eigen::Index j = 0; j < t.values.cols(); ++j)
            t.values(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return t;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values) {
    if (static_cast<Eigen::Index>(header.size()) != values.cols())
        throw structural_error("CSV header length does not match column count");
    std::ofstream out(path);
    if (!out) throw config_error("cannot write file: " + path);
    for (size_t j = 0; j < header.size(); ++j) {
        if (j) out << ',';
        out << header[j];
    }
    out << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            if (j) out << ',';
            out << format_double(values(i, j));
        }
        out << '\n';
    }
}

}  // namespace calib
