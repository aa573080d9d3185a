#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacflow/common.hpp"
#include "evacflow/data.hpp"
#include "evacflow/graph.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Feature extraction. Hours run on an absolute clock where hour 0 is a
// midnight; the day splits into six 4-hour periods:
//   0 Late Night 12am-4am, 1 Early Morning 4am-8am, 2 Morning 8am-12pm,
//   3 Mid-day 12pm-4pm, 4 Evening 4pm-8pm, 5 Night 8pm-12am.
// ---------------------------------------------------------------------------

inline constexpr int kPeriods = 6;
inline constexpr int kRegularFeatures = 12;
inline constexpr int kDemandFeatures = 9;
inline constexpr int kDemandLagHours = 18;
inline constexpr int kWarmupHours = 48;

inline int period_of_hour(int absolute_hour) {
    const int h = ((absolute_hour % 24) + 24) % 24;
    return h / 4;
}

struct FeatureFrame {
    int start_hour = 0;  // absolute hour of row 0
    int hours = 0;
    int n = 0;
    int c = 0;
    std::vector<double> x;  // hours*n*c, [hour][node][feature]

    std::size_t at(int t, int i, int f) const {
        return (static_cast<std::size_t>(t) * n + i) * c + f;
    }
};

namespace detail {

inline void mean_std(const DetectorSeries& s, int i, int t0, int len, double& mean,
                     double& sd) {
    double sum = 0.0;
    for (int t = t0; t < t0 + len; ++t) sum += s.flow[s.at(t, i)];
    mean = sum / len;
    double acc = 0.0;
    for (int t = t0; t < t0 + len; ++t) {
        const double d = s.flow[s.at(t, i)] - mean;
        acc += d * d;
    }
    sd = std::sqrt(acc / len);
}

}  // namespace detail

/// The 12 regular traffic features per node-hour: normalized zone id, the six
/// period indicators, current flow, previous-day same-period mean/std, and
/// previous-period mean/std. Emission starts two full days into the series so
/// every statistic has real history behind it.
inline FeatureFrame extract_regular_features(const DetectorNetwork& net,
                                             const DetectorSeries& series) {
    require<DataError>(series.n == net.size(), "series does not match network");
    for (std::size_t k = 0; k < series.missing.size(); ++k)
        require<ContractError>(!series.missing[k],
                               "feature extraction needs a cleaned, complete "
                               "series; impute first");
    const int first = kWarmupHours;
    require<DataError>(
        series.hours > first,
        "need more than " + std::to_string(kWarmupHours) +
            " hours of history; first valid hour is absolute hour " +
            std::to_string(series.start_hour + first));

    FeatureFrame f;
    f.start_hour = series.start_hour + first;
    f.hours = series.hours - first;
    f.n = series.n;
    f.c = kRegularFeatures;
    f.x.assign(static_cast<std::size_t>(f.hours) * f.n * f.c, 0.0);

    for (int r = 0; r < f.hours; ++r) {
        const int t = first + r;                 // row in the series
        const int abs_hour = series.start_hour + t;
        const int period = period_of_hour(abs_hour);
        // Same 4-hour clock period, one day earlier.
        const int day_start_abs = abs_hour - (((abs_hour % 24) + 24) % 24);
        const int prev_day_t = (day_start_abs - 24 + 4 * period) - series.start_hour;
        // The period immediately before this hour's period.
        const int period_start_abs = abs_hour - (((abs_hour % 4) + 4) % 4);
        const int prev_period_t = (period_start_abs - 4) - series.start_hour;
        require<DataError>(prev_day_t >= 0 && prev_period_t >= 0,
                           "insufficient history before absolute hour " +
                               std::to_string(abs_hour));
        for (int i = 0; i < f.n; ++i) {
            double* row = &f.x[f.at(r, i, 0)];
            row[0] = static_cast<double>(net.nodes()[i].id) / f.n;
            row[1 + period] = 1.0;
            row[7] = series.flow[series.at(t, i)];
            detail::mean_std(series, i, prev_day_t, 4, row[8], row[9]);
            detail::mean_std(series, i, prev_period_t, 4, row[10], row[11]);
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Evacuation zones and demand-side features.
// ---------------------------------------------------------------------------

struct EvacZone {
    int id = 0;
    double population = 0.0;
    int order_issue_hour = 0;  // absolute hour the evacuation order goes out
    double lat = std::numeric_limits<double>::quiet_NaN();
    double lon = std::numeric_limits<double>::quiet_NaN();
};

inline void validate_zones(const std::vector<EvacZone>& zones) {
    for (const auto& z : zones) {
        require<ConfigError>(z.population > 0.0,
                             "zone " + std::to_string(z.id) +
                                 " must have positive population");
        require<ConfigError>(std::isfinite(z.lat) && std::isfinite(z.lon),
                             "zone " + std::to_string(z.id) + " has no location");
    }
}

/// Cumulative population under evacuation orders, as seen through the 18-hour
/// response lag: a zone ordered at hour o contributes from hour o+18 on.
inline double lagged_ordered_population(const std::vector<EvacZone>& zones,
                                        int absolute_hour) {
    double total = 0.0;
    for (const auto& z : zones)
        if (z.order_issue_hour <= absolute_hour - kDemandLagHours)
            total += z.population;
    return total;
}

inline double nearest_zone_distance(const DetectorNode& node,
                                    const std::vector<EvacZone>& zones) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& z : zones) {
        const double dx = node.lon - z.lon;
        const double dy = node.lat - z.lat;
        best = std::min(best, std::sqrt(dx * dx + dy * dy));
    }
    return best;
}

/// The 9 demand features per node-hour: six period indicators, the lagged
/// ordered population P_evc, straight-line distance to the nearest zone
/// d_evc, and hours-to-landfall T_l clamped at zero.
inline FeatureFrame extract_demand_features(const DetectorNetwork& net,
                                            const std::vector<EvacZone>& zones,
                                            int landfall_hour, int start_hour,
                                            int hours) {
    require<ConfigError>(hours >= 1, "demand features need at least one hour");
    validate_zones(zones);
    require<ConfigError>(!zones.empty(), "demand features need at least one zone");

    FeatureFrame f;
    f.start_hour = start_hour;
    f.hours = hours;
    f.n = net.size();
    f.c = kDemandFeatures;
    f.x.assign(static_cast<std::size_t>(f.hours) * f.n * f.c, 0.0);

    std::vector<double> dist(static_cast<std::size_t>(f.n));
    for (int i = 0; i < f.n; ++i)
        dist[i] = nearest_zone_distance(net.nodes()[i], zones);

    for (int r = 0; r < hours; ++r) {
        const int abs_hour = start_hour + r;
        const int period = period_of_hour(abs_hour);
        const double p_evc = lagged_ordered_population(zones, abs_hour);
        const double t_l = std::max(0.0, static_cast<double>(landfall_hour - abs_hour));
        for (int i = 0; i < f.n; ++i) {
            double* row = &f.x[f.at(r, i, 0)];
            row[period] = 1.0;
            row[6] = p_evc;
            row[7] = dist[i];
            row[8] = t_l;
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Zones JSON: [{id, population, order_issue_hour, lat, lon}].
// ---------------------------------------------------------------------------

inline nlohmann::json zones_to_json(const std::vector<EvacZone>& zones) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& z : zones)
        arr.push_back({{"id", z.id},
                       {"population", z.population},
                       {"order_issue_hour", z.order_issue_hour},
                       {"lat", z.lat},
                       {"lon", z.lon}});
    return arr;
}

inline std::vector<EvacZone> zones_from_json(const nlohmann::json& arr) {
    require<DataError>(arr.is_array(), "zones file must be a JSON array");
    std::vector<EvacZone> zones;
    for (const auto& item : arr) {
        EvacZone z;
        try {
            z.id = item.at("id").get<int>();
            z.population = item.at("population").get<double>();
            z.order_issue_hour = item.at("order_issue_hour").get<int>();
            z.lat = item.at("lat").get<double>();
            z.lon = item.at("lon").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("malformed zone entry: ") + e.what());
        }
        zones.push_back(z);
    }
    return zones;
}

inline void save_zones(const std::string& path, const std::vector<EvacZone>& zones) {
    std::ofstream out(path);
    require<DataError>(out.good(), "cannot open '" + path + "' for writing");
    out << zones_to_json(zones).dump(2) << '\n';
    require<DataError>(out.good(), "short write to '" + path + "'");
}

inline std::vector<EvacZone> load_zones(const std::string& path) {
    std::ifstream in(path);
    require<DataError>(in.good(), "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "' is not valid JSON: " + e.what());
    }
    return zones_from_json(j);
}

}  // namespace evacflow
