#pragma once

#include "openmig/ingest.hpp"
#include "openmig/io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace testutil {

inline openmig::io::CsvTable csv(const std::string& text) {
    std::istringstream in(text);
    return openmig::io::parse_csv(in);
}

inline double rel_diff(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

// relative difference with an absolute floor for entries near zero
inline double max_rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
    double m = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    return m;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("openmig_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Hand-built panel row with the default FE keys filled in.
inline openmig::PanelRow row(const std::string& o, const std::string& d, int year, double stock) {
    openmig::PanelRow r;
    r.origin = o;
    r.destination = d;
    r.year = year;
    r.stock = stock;
    r.pop_d = 1e6;
    r.log_pop_d = std::log(r.pop_d);
    r.origin_fe_key = o;
    r.origin_year_fe_key = openmig::origin_year_key(o, year);
    r.year_fe_key = std::to_string(year);
    return r;
}

inline openmig::EstimationPanel panel_of(std::vector<openmig::PanelRow> rows) {
    openmig::EstimationPanel p;
    std::vector<int> years;
    for (const auto& r : rows) years.push_back(r.year);
    std::sort(years.begin(), years.end());
    years.erase(std::unique(years.begin(), years.end()), years.end());
    p.years = years;
    p.rows = std::move(rows);
    p.rows_in = p.rows.size();
    return p;
}

} // namespace testutil
