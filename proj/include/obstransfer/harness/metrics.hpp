#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "obstransfer/common.hpp"

namespace obstransfer::harness {

inline constexpr const char* kMetricsHeader =
    "step,episode,eval_return_mean,eval_return_std,loss_base,loss_P,loss_R,epsilon,wallclock_s";

// Unset optionals are written as empty fields.
struct MetricsRow {
    std::size_t step = 0;
    std::size_t episode = 0;
    double eval_return_mean = 0.0;
    double eval_return_std = 0.0;
    std::optional<double> loss_base, loss_P, loss_R;
    double epsilon = 0.0;
    std::optional<double> wallclock_s;
};

inline std::string format_number(double v)
{
    if (!std::isfinite(v)) throw NumericError("metrics: non-finite value");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_row(const MetricsRow& r)
{
    auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    std::ostringstream os;
    os << r.step << ',' << r.episode << ',' << format_number(r.eval_return_mean) << ','
       << format_number(r.eval_return_std) << ',' << opt(r.loss_base) << ',' << opt(r.loss_P) << ','
       << opt(r.loss_R) << ',' << format_number(r.epsilon) << ',' << opt(r.wallclock_s);
    return os.str();
}

inline void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows)
{
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].step <= rows[i - 1].step) throw StateError("metrics: steps must increase");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metrics file '" + path + "'");
    out << kMetricsHeader << '\n';
    for (const auto& r : rows) out << format_row(r) << '\n';
    if (!out) throw std::runtime_error("error writing metrics file '" + path + "'");
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::vector<MetricsRow> read_metrics(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read metrics file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kMetricsHeader))
        throw std::runtime_error("metrics file '" + path + "' has an unexpected header");
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 9)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 9 fields");
        auto opt = [](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return std::stod(s);
        };
        try {
            MetricsRow r;
            r.step = std::stoull(f[0]);
            r.episode = std::stoull(f[1]);
            r.eval_return_mean = std::stod(f[2]);
            r.eval_return_std = std::stod(f[3]);
            r.loss_base = opt(f[4]);
            r.loss_P = opt(f[5]);
            r.loss_R = opt(f[6]);
            r.epsilon = std::stod(f[7]);
            r.wallclock_s = opt(f[8]);
            rows.push_back(r);
        } catch (const std::logic_error&) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

// Area under the learning curve: sum of the periodic evaluation returns.
inline double auc(const std::vector<MetricsRow>& rows)
{
    double s = 0.0;
    for (const auto& r : rows) s += r.eval_return_mean;
    return s;
}

}  // namespace obstransfer::harness
