#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "evacflow/common.hpp"
#include "evacflow/graph.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Hourly detector series aligned with a DetectorNetwork (column i holds the
// node at index i). One missing flag covers both flow and speed for an hour.
// ---------------------------------------------------------------------------

struct DetectorSeries {
    int n = 0;
    int hours = 0;
    int start_hour = 0;  // absolute hour of row 0; hour 0 is a midnight
    std::vector<double> flow;           // hours*n, vehicles/h
    std::vector<double> speed;          // hours*n, mph
    std::vector<std::uint8_t> missing;  // hours*n, 1 = missing

    static DetectorSeries empty(int n, int hours, int start_hour = 0) {
        DetectorSeries s;
        s.n = n;
        s.hours = hours;
        s.start_hour = start_hour;
        const std::size_t cells = static_cast<std::size_t>(n) * hours;
        s.flow.assign(cells, 0.0);
        s.speed.assign(cells, 0.0);
        s.missing.assign(cells, 0);
        return s;
    }

    std::size_t at(int t, int i) const {
        return static_cast<std::size_t>(t) * n + i;
    }

    void validate() const {
        require<DataError>(n >= 1 && hours >= 1, "series needs nodes and hours");
        const std::size_t cells = static_cast<std::size_t>(n) * hours;
        require<DataError>(flow.size() == cells && speed.size() == cells &&
                               missing.size() == cells,
                           "series buffers do not match hours x nodes");
        for (std::size_t k = 0; k < cells; ++k) {
            if (missing[k]) continue;
            require<DataError>(std::isfinite(flow[k]) && flow[k] >= 0.0,
                               "present flow must be finite and >= 0");
            require<DataError>(std::isfinite(speed[k]) && speed[k] > 0.0,
                               "present speed must be finite and > 0");
        }
    }

    double missing_fraction(int i) const {
        int cnt = 0;
        for (int t = 0; t < hours; ++t) cnt += missing[at(t, i)];
        return static_cast<double>(cnt) / hours;
    }

    std::vector<std::vector<double>> speed_rows() const {
        std::vector<std::vector<double>> rows(static_cast<std::size_t>(hours));
        for (int t = 0; t < hours; ++t) {
            rows[t].resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) rows[t][i] = speed[at(t, i)];
        }
        return rows;
    }

    /// Appends another series that continues this one hour-for-hour.
    DetectorSeries concat(const DetectorSeries& tail) const {
        require<DataError>(tail.n == n, "concat: node counts differ");
        require<DataError>(tail.start_hour == start_hour + hours,
                           "concat: series are not contiguous");
        DetectorSeries out = *this;
        out.hours += tail.hours;
        out.flow.insert(out.flow.end(), tail.flow.begin(), tail.flow.end());
        out.speed.insert(out.speed.end(), tail.speed.begin(), tail.speed.end());
        out.missing.insert(out.missing.end(), tail.missing.begin(),
                           tail.missing.end());
        return out;
    }

    /// Rows [t0, t0+len) as a series with the matching absolute start hour.
    DetectorSeries slice(int t0, int len) const {
        require<DataError>(t0 >= 0 && len >= 1 && t0 + len <= hours,
                           "slice out of range");
        DetectorSeries out = empty(n, len, start_hour + t0);
        const std::size_t from = at(t0, 0);
        const std::size_t cnt = static_cast<std::size_t>(len) * n;
        std::copy_n(flow.begin() + from, cnt, out.flow.begin());
        std::copy_n(speed.begin() + from, cnt, out.speed.begin());
        std::copy_n(missing.begin() + from, cnt, out.missing.begin());
        return out;
    }
};

// ---------------------------------------------------------------------------
// Cleaning pipeline: drop sparse detectors, re-flag super-capacity outliers
// as missing, then fill every gap by iterative regression imputation.
// ---------------------------------------------------------------------------

struct DroppedDetector {
    int id = 0;
    double missing_fraction = 0.0;
};

struct CleaningReport {
    std::vector<DroppedDetector> dropped;
    std::vector<int> kept_original_ids;  // new index -> original id
    int outliers_flagged = 0;
    int imputed_cells = 0;
    int imputation_rounds = 0;
};

/// Removes detectors whose missing fraction is strictly above max_missing.
/// Survivors are renumbered 1..M in original order; the report keeps the
/// original ids.
inline std::pair<DetectorNetwork, DetectorSeries> drop_sparse_detectors(
    const DetectorNetwork& net, const DetectorSeries& series, CleaningReport& report,
    double max_missing = 0.20) {
    require<ConfigError>(max_missing >= 0.0 && max_missing <= 1.0,
                         "max_missing must lie in [0,1]");
    require<DataError>(series.n == net.size(), "series does not match network");
    std::vector<int> keep;
    for (int i = 0; i < net.size(); ++i) {
        const double frac = series.missing_fraction(i);
        if (frac > max_missing)
            report.dropped.push_back({net.nodes()[i].id, frac});
        else
            keep.push_back(i);
    }
    require<DataError>(!keep.empty(), "every detector exceeded the missing "
                                      "threshold; nothing left to model");

    std::vector<DetectorNode> nodes;
    std::vector<int> new_index(static_cast<std::size_t>(net.size()), -1);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        DetectorNode nd = net.nodes()[keep[k]];
        report.kept_original_ids.push_back(nd.id);
        new_index[keep[k]] = static_cast<int>(k);
        nd.id = static_cast<int>(k) + 1;
        nodes.push_back(nd);
    }
    std::vector<DetectorEdge> edges;
    for (const auto& e : net.edges()) {
        const int a = new_index[net.index_of(e.i)];
        const int b = new_index[net.index_of(e.j)];
        if (a < 0 || b < 0) continue;
        edges.push_back({a + 1, b + 1, e.distance_miles});
    }
    DetectorNetwork out_net(nodes, edges);

    const int m = static_cast<int>(keep.size());
    DetectorSeries out = DetectorSeries::empty(m, series.hours, series.start_hour);
    for (int t = 0; t < series.hours; ++t)
        for (int k = 0; k < m; ++k) {
            const std::size_t src = series.at(t, keep[k]);
            const std::size_t dst = out.at(t, k);
            out.flow[dst] = series.flow[src];
            out.speed[dst] = series.speed[src];
            out.missing[dst] = series.missing[src];
        }
    return {std::move(out_net), std::move(out)};
}

/// Marks hourly flows strictly above lanes x capacity as missing.
inline DetectorSeries flag_outliers(const DetectorNetwork& net,
                                    const DetectorSeries& series,
                                    CleaningReport& report,
                                    double capacity_per_lane = 2500.0) {
    require<ConfigError>(capacity_per_lane > 0.0, "capacity must be positive");
    require<DataError>(series.n == net.size(), "series does not match network");
    DetectorSeries out = series;
    for (int i = 0; i < out.n; ++i) {
        const double cap = net.nodes()[i].lanes * capacity_per_lane;
        for (int t = 0; t < out.hours; ++t) {
            const std::size_t k = out.at(t, i);
            if (!out.missing[k] && out.flow[k] > cap) {
                out.missing[k] = 1;
                ++report.outliers_flagged;
            }
        }
    }
    return out;
}

namespace detail {

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double ma = a.mean(), mb = b.mean();
    const Eigen::VectorXd da = a.array() - ma, db = b.array() - mb;
    const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
    if (denom <= 0.0) return 0.0;
    return da.dot(db) / denom;
}

/// One channel of round-robin least-squares imputation over a filled matrix.
/// Returns the number of rounds run; `filled` is updated in place.
inline int impute_channel(Eigen::MatrixXd& filled,
                          const std::vector<std::uint8_t>& missing, int hours,
                          int n, double lo_clamp,
                          const std::vector<double>& hi_clamp, int k_predictors,
                          int max_rounds, double tol) {
    std::vector<int> gappy;
    std::vector<std::vector<int>> gaps(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < hours; ++t)
            if (missing[static_cast<std::size_t>(t) * n + i])
                gaps[i].push_back(t);
        if (!gaps[i].empty()) gappy.push_back(i);
    }
    if (gappy.empty()) return 0;

    int round = 0;
    for (; round < max_rounds; ++round) {
        double max_change = 0.0;
        for (int i : gappy) {
            const int k = std::min(k_predictors, n - 1);
            double fallback = 0.0;
            {
                double sum = 0.0;
                int cnt = 0;
                for (int t = 0; t < hours; ++t)
                    if (!missing[static_cast<std::size_t>(t) * n + i]) {
                        sum += filled(t, i);
                        ++cnt;
                    }
                fallback = cnt > 0 ? sum / cnt : 0.0;
            }
            std::vector<double> pred(gaps[i].size(), fallback);
            if (k >= 1) {
                std::vector<std::pair<double, int>> scored;
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    scored.push_back(
                        {std::abs(pearson(filled.col(i), filled.col(j))), j});
                }
                std::sort(scored.begin(), scored.end(), [](auto& a, auto& b) {
                    if (a.first != b.first) return a.first > b.first;
                    return a.second < b.second;
                });
                std::vector<int> preds;
                for (int q = 0; q < k; ++q) preds.push_back(scored[q].second);

                std::vector<int> obs_rows;
                for (int t = 0; t < hours; ++t)
                    if (!missing[static_cast<std::size_t>(t) * n + i])
                        obs_rows.push_back(t);
                Eigen::MatrixXd x(obs_rows.size(), k + 1);
                Eigen::VectorXd y(obs_rows.size());
                for (std::size_t r = 0; r < obs_rows.size(); ++r) {
                    x(r, 0) = 1.0;
                    for (int q = 0; q < k; ++q)
                        x(r, q + 1) = filled(obs_rows[r], preds[q]);
                    y(r) = filled(obs_rows[r], i);
                }
                Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
                if (qr.rank() == k + 1) {
                    Eigen::VectorXd beta = qr.solve(y);
                    for (std::size_t g = 0; g < gaps[i].size(); ++g) {
                        double v = beta(0);
                        for (int q = 0; q < k; ++q)
                            v += beta(q + 1) * filled(gaps[i][g], preds[q]);
                        pred[g] = v;
                    }
                }
            }
            for (std::size_t g = 0; g < gaps[i].size(); ++g) {
                double v = std::clamp(pred[g], lo_clamp, hi_clamp[i]);
                max_change = std::max(max_change, std::abs(v - filled(gaps[i][g], i)));
                filled(gaps[i][g], i) = v;
            }
        }
        if (max_change < tol) {
            ++round;
            break;
        }
    }
    return round;
}

}  // namespace detail

/// Fills every missing cell: column-mean start, then rounds of least-squares
/// regression on the most-correlated columns until the largest per-cell
/// change drops below tol. Imputed flows are clamped to [0, lanes x capacity],
/// speeds to a sane positive band. The result carries no missing flags.
inline DetectorSeries impute_iterative(const DetectorNetwork& net,
                                       const DetectorSeries& series,
                                       CleaningReport& report, int max_rounds = 10,
                                       double tol = 1e-3, int k_predictors = 5,
                                       double capacity_per_lane = 2500.0) {
    require<DataError>(series.n == net.size(), "series does not match network");
    const int n = series.n, hours = series.hours;
    for (int i = 0; i < n; ++i)
        require<DataError>(series.missing_fraction(i) <= 0.5,
                           "detector " + std::to_string(net.nodes()[i].id) +
                               " has under 50% observed values; drop it first");

    Eigen::MatrixXd flow(hours, n), speed(hours, n);
    int missing_cells = 0;
    for (int i = 0; i < n; ++i) {
        double fsum = 0.0, ssum = 0.0;
        int cnt = 0;
        for (int t = 0; t < hours; ++t) {
            const std::size_t k = series.at(t, i);
            if (!series.missing[k]) {
                fsum += series.flow[k];
                ssum += series.speed[k];
                ++cnt;
            }
        }
        require<DataError>(cnt > 0, "detector " + std::to_string(net.nodes()[i].id) +
                                        " has no observed values");
        const double fmean = fsum / cnt, smean = ssum / cnt;
        for (int t = 0; t < hours; ++t) {
            const std::size_t k = series.at(t, i);
            if (series.missing[k]) {
                flow(t, i) = fmean;
                speed(t, i) = smean;
                ++missing_cells;
            } else {
                flow(t, i) = series.flow[k];
                speed(t, i) = series.speed[k];
            }
        }
    }
    report.imputed_cells += missing_cells;

    std::vector<double> flow_cap(static_cast<std::size_t>(n));
    std::vector<double> speed_cap(static_cast<std::size_t>(n), 150.0);
    for (int i = 0; i < n; ++i)
        flow_cap[i] = net.nodes()[i].lanes * capacity_per_lane;

    const int rounds = detail::impute_channel(flow, series.missing, hours, n, 0.0,
                                              flow_cap, k_predictors, max_rounds, tol);
    detail::impute_channel(speed, series.missing, hours, n, 1.0, speed_cap,
                           k_predictors, max_rounds, tol);
    report.imputation_rounds = std::max(report.imputation_rounds, rounds);

    DetectorSeries out = DetectorSeries::empty(n, hours, series.start_hour);
    for (int t = 0; t < hours; ++t)
        for (int i = 0; i < n; ++i) {
            out.flow[out.at(t, i)] = flow(t, i);
            out.speed[out.at(t, i)] = std::max(speed(t, i), 1.0);
        }
    return out;
}

struct CleanResult {
    DetectorNetwork net;
    DetectorSeries series;
    CleaningReport report;
};

/// Full cleaning pass: drop sparse, flag outliers, impute.
inline CleanResult clean_series(const DetectorNetwork& net,
                                const DetectorSeries& series,
                                double max_missing = 0.20,
                                double capacity_per_lane = 2500.0,
                                int max_rounds = 10, double tol = 1e-3,
                                int k_predictors = 5) {
    CleaningReport report;
    auto [net2, dropped] = drop_sparse_detectors(net, series, report, max_missing);
    DetectorSeries flagged = flag_outliers(net2, dropped, report, capacity_per_lane);
    DetectorSeries full = impute_iterative(net2, flagged, report, max_rounds, tol,
                                           k_predictors, capacity_per_lane);
    return {std::move(net2), std::move(full), std::move(report)};
}

// ---------------------------------------------------------------------------
// CSV persistence. Rows are `timestamp,node_id,flow,speed,missing_flag` with
// the timestamp as an absolute hour index; flow in vehicles/h, speed in mph.
// ---------------------------------------------------------------------------

inline void save_series_csv(const std::string& path, const DetectorNetwork& net,
                            const DetectorSeries& series) {
    require<DataError>(series.n == net.size(), "series does not match network");
    std::ofstream out(path);
    require<DataError>(out.good(), "cannot open '" + path + "' for writing");
    out << "timestamp,node_id,flow,speed,missing_flag\n";
    for (int t = 0; t < series.hours; ++t)
        for (int i = 0; i < series.n; ++i) {
            const std::size_t k = series.at(t, i);
            out << (series.start_hour + t) << ',' << net.nodes()[i].id << ','
                << format_double(series.flow[k]) << ','
                << format_double(series.speed[k]) << ','
                << int(series.missing[k]) << '\n';
        }
    require<DataError>(out.good(), "short write to '" + path + "'");
}

inline DetectorSeries load_series_csv(const std::string& path,
                                      const DetectorNetwork& net) {
    std::ifstream in(path);
    require<DataError>(in.good(), "cannot open '" + path + "'");
    std::string line;
    require<DataError>(static_cast<bool>(std::getline(in, line)),
                       "'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require<DataError>(line == "timestamp,node_id,flow,speed,missing_flag",
                       "'" + path + "' has an unexpected header: " + line);

    struct Row {
        int t, id;
        double flow, speed;
        int miss;
    };
    std::vector<Row> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 5> f;
        std::size_t pos = 0;
        for (int c = 0; c < 5; ++c) {
            const std::size_t comma = line.find(',', pos);
            const bool last = c == 4;
            require<DataError>(last == (comma == std::string::npos),
                               path + ":" + std::to_string(lineno) +
                                   ": expected 5 comma-separated fields");
            f[c] = line.substr(pos, last ? std::string::npos : comma - pos);
            pos = last ? pos : comma + 1;
        }
        try {
            rows.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]),
                            std::stod(f[3]), std::stoi(f[4])});
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": malformed numeric field");
        }
    }
    require<DataError>(!rows.empty(), "'" + path + "' has no data rows");

    const int n = net.size();
    require<DataError>(rows.size() % static_cast<std::size_t>(n) == 0,
                       "'" + path + "' row count is not a multiple of the " +
                           std::to_string(n) + "-node network");
    const int hours = static_cast<int>(rows.size()) / n;
    const int start = rows.front().t;
    DetectorSeries s = DetectorSeries::empty(n, hours, start);
    std::vector<std::uint8_t> seen(rows.size(), 0);
    for (const auto& r : rows) {
        const int t = r.t - start;
        require<DataError>(t >= 0 && t < hours,
                           "'" + path + "' timestamps are not contiguous");
        const int i = net.index_of(r.id);
        const std::size_t k = s.at(t, i);
        require<DataError>(!seen[k], "'" + path + "' repeats hour " +
                                         std::to_string(r.t) + " node " +
                                         std::to_string(r.id));
        seen[k] = 1;
        s.flow[k] = r.flow;
        s.speed[k] = r.speed;
        s.missing[k] = r.miss ? 1 : 0;
    }
    for (std::size_t k = 0; k < seen.size(); ++k)
        require<DataError>(seen[k], "'" + path + "' is missing hour/node rows");
    s.validate();
    return s;
}

}  // namespace evacflow
