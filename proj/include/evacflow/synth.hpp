#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacflow/common.hpp"
#include "evacflow/data.hpp"
#include "evacflow/features.hpp"
#include "evacflow/graph.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Seeded synthetic scenario generator: a corridor network with diurnal
// traffic, congestion-coupled flow propagation, speed that degrades with
// load, and an evacuation phase that injects a population-conserving surge.
// ---------------------------------------------------------------------------

struct ScenarioConfig {
    int corridors = 2;
    int nodes_per_corridor = 20;
    double spacing_miles = 2.0;
    double corridor_gap_miles = 5.0;
    int interchange_every = 5;  // cross-corridor link every k nodes; 0 = none
    int lanes = 3;
    double capacity_per_lane = 2500.0;  // vehicles/h/lane
    double free_flow_mph = 65.0;

    int regular_hours = 2148;
    int evac_hours = 120;
    int landfall_hour = 2148 + 96;

    double base_flow_low = 1100.0;
    double base_flow_high = 3200.0;
    double noise_level = 45.0;   // flow noise sigma, vehicles/h
    double speed_noise = 2.0;    // mph sigma
    double weekend_factor = 0.85;

    // How strongly last hour's kernel-weighted neighborhood flow feeds the
    // next hour. Zero decouples the nodes entirely.
    double coupling = 0.6;

    // Localized slow episodes (crashes, work zones, stalled vehicles): each
    // node independently enters one with this probability per hour, and while
    // the episode lasts (4-12 hours) its speed is scaled by a factor drawn
    // from [incident_depth, incident_depth + 0.25]. The slowdown throttles
    // the coupled flux, so episodes dent the flows of the node and its
    // neighbors for as long as they persist.
    double incident_rate = 0.012;
    double incident_depth = 0.4;

    double missing_rate = 0.02;
    double outlier_rate = 0.002;

    double trips_per_capita = 0.8;
    double surge_sigma_miles = 12.0;

    std::vector<EvacZone> zones;  // order hours are absolute
    std::uint64_t seed = 1;

    int node_count() const { return corridors * nodes_per_corridor; }
    int total_hours() const { return regular_hours + evac_hours; }

    void validate() const {
        require<ConfigError>(corridors >= 1 && nodes_per_corridor >= 1,
                             "need at least one corridor and one node");
        require<ConfigError>(spacing_miles > 0.0 && corridor_gap_miles > 0.0,
                             "spacings must be positive");
        require<ConfigError>(lanes >= 1 && capacity_per_lane > 0.0,
                             "lane capacity must be positive");
        require<ConfigError>(free_flow_mph > 0.0, "free-flow speed must be positive");
        require<ConfigError>(regular_hours >= 1 && evac_hours >= 1,
                             "both phases need hours");
        require<ConfigError>(landfall_hour >= regular_hours &&
                                 landfall_hour <= total_hours(),
                             "landfall must fall inside the evacuation window");
        require<ConfigError>(base_flow_low > 0.0 && base_flow_high >= base_flow_low,
                             "base flow band is invalid");
        require<ConfigError>(noise_level >= 0.0 && speed_noise >= 0.0,
                             "noise levels must be >= 0");
        require<ConfigError>(coupling >= 0.0 && coupling < 1.0,
                             "coupling must lie in [0,1)");
        require<ConfigError>(incident_rate >= 0.0 && incident_rate < 1.0,
                             "incident_rate must lie in [0,1)");
        require<ConfigError>(incident_depth > 0.0 && incident_depth <= 1.0,
                             "incident_depth must lie in (0,1]");
        require<ConfigError>(missing_rate >= 0.0 && missing_rate < 1.0 &&
                                 outlier_rate >= 0.0 && outlier_rate < 1.0,
                             "corruption rates must lie in [0,1)");
        require<ConfigError>(trips_per_capita >= 0.0 && surge_sigma_miles > 0.0,
                             "surge parameters are invalid");
        validate_zones(zones);
    }
};

/// Three zones of hurricane scale near the low-milepost end, ordered in
/// sequence shortly after the evacuation phase opens.
inline std::vector<EvacZone> default_zones(const ScenarioConfig& cfg) {
    const int t0 = cfg.regular_hours;
    return {
        {1, 1.5e6, t0 - 12, 0.0, -4.0},
        {2, 1.2e6, t0 + 2, cfg.corridor_gap_miles, -6.0},
        {3, 1.3e6, t0 + 14, 0.5 * cfg.corridor_gap_miles, -10.0},
    };
}

/// Corridors run west-to-east with lat = corridor row in miles north and
/// lon = milepost in miles east; interchange links tie the rows together.
/// Detector spacing is jittered around spacing_miles so edge travel times
/// spread out the way mixed urban/rural deployments do; a uniform grid would
/// collapse the travel-time spread and with it the kernelized adjacency.
inline DetectorNetwork build_scenario_network(const ScenarioConfig& cfg) {
    std::vector<DetectorNode> nodes;
    std::vector<DetectorEdge> edges;
    Rng rng(mix_seed(cfg.seed, 0x746f706fULL));
    for (int k = 0; k < cfg.corridors; ++k) {
        const std::string name = "SR-" + std::to_string(10 * (k + 1));
        double pos = 0.0;
        for (int j = 0; j < cfg.nodes_per_corridor; ++j) {
            const double gap = cfg.spacing_miles * rng.uniform(0.35, 1.8);
            if (j > 0) pos += gap;
            DetectorNode nd;
            nd.id = k * cfg.nodes_per_corridor + j + 1;
            nd.corridor = name;
            nd.milepost = pos;
            nd.lanes = cfg.lanes;
            nd.lat = k * cfg.corridor_gap_miles;
            nd.lon = pos;
            nodes.push_back(nd);
            if (j > 0) edges.push_back({nd.id - 1, nd.id, gap});
        }
    }
    if (cfg.interchange_every > 0) {
        for (int k = 0; k + 1 < cfg.corridors; ++k)
            for (int j = 0; j < cfg.nodes_per_corridor; j += cfg.interchange_every)
                edges.push_back({k * cfg.nodes_per_corridor + j + 1,
                                 (k + 1) * cfg.nodes_per_corridor + j + 1,
                                 cfg.corridor_gap_miles});
    }
    return DetectorNetwork(nodes, edges);
}

struct SyntheticScenario {
    ScenarioConfig config;
    DetectorNetwork net;
    DetectorSeries regular;        // corrupted, as a sensor feed would arrive
    DetectorSeries evacuation;
    DetectorSeries regular_truth;  // uncorrupted ground truth
    DetectorSeries evacuation_truth;
    std::vector<EvacZone> zones;
    std::vector<double> surge_injected;  // evac_hours * n, vehicles/h added
};

namespace detail {

inline double diurnal_profile(int hour_of_day) {
    const double h = static_cast<double>(hour_of_day);
    const double morning = 0.55 * std::exp(-(h - 8.0) * (h - 8.0) / (2.0 * 4.0));
    const double evening = 0.65 * std::exp(-(h - 17.0) * (h - 17.0) / (2.0 * 6.25));
    return 0.35 + morning + evening;
}

inline bool is_weekend(int absolute_hour) {
    const int day = absolute_hour / 24;
    return day % 7 >= 5;
}

}  // namespace detail

/// Deterministic per seed. Regular hours follow a two-peak diurnal profile
/// with weekend damping and a congestion-coupling term that pulls each node
/// toward its kernel-weighted neighborhood; speeds fall off quadratically
/// with the volume/capacity ratio. Evacuation hours damp the diurnal shape
/// and add a surge that distributes trips_per_capita x ordered population
/// over nodes (by distance to the ordering zones) and hours (weighted toward
/// daytime and the approach of landfall).
inline SyntheticScenario generate_synthetic(const ScenarioConfig& cfg_in) {
    ScenarioConfig cfg = cfg_in;
    if (cfg.zones.empty()) cfg.zones = default_zones(cfg);
    cfg.validate();

    SyntheticScenario sc;
    sc.config = cfg;
    sc.net = build_scenario_network(cfg);
    sc.zones = cfg.zones;
    const int n = cfg.node_count();
    const int hours = cfg.total_hours();
    const int evac_start = cfg.regular_hours;
    const double capacity = cfg.lanes * cfg.capacity_per_lane;

    // Independent streams so one knob never shifts another's draws.
    Rng rng_base(mix_seed(cfg.seed, 1));
    Rng rng_noise(mix_seed(cfg.seed, 2));
    Rng rng_corrupt(mix_seed(cfg.seed, 3));
    Rng rng_incident(mix_seed(cfg.seed, 4));

    std::vector<double> base(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        base[i] = rng_base.uniform(cfg.base_flow_low, cfg.base_flow_high);

    const double mean_profile = [] {
        double s = 0.0;
        for (int h = 0; h < 24; ++h) s += detail::diurnal_profile(h);
        return s / 24.0;
    }();

    // Surge plan: per zone, a normalized temporal weight over its eligible
    // hours and a normalized spatial share over nodes. Injected surge then
    // sums to trips_per_capita x population exactly, zone by zone.
    sc.surge_injected.assign(static_cast<std::size_t>(cfg.evac_hours) * n, 0.0);
    {
        std::vector<double> share(static_cast<std::size_t>(n));
        for (const auto& z : cfg.zones) {
            const int from = std::max(z.order_issue_hour + kDemandLagHours, evac_start);
            if (from >= hours || cfg.trips_per_capita <= 0.0) continue;
            double wsum = 0.0;
            std::vector<double> w(static_cast<std::size_t>(hours - from), 0.0);
            for (int t = from; t < hours; ++t) {
                const int period = period_of_hour(t);
                const double day_amp = (period >= 1 && period <= 4) ? 1.5 : 1.0;
                const double t_l = std::max(0.0, double(cfg.landfall_hour - t));
                const double t_l0 = std::max(1.0, double(cfg.landfall_hour - from));
                const double urgency = 1.0 + (1.0 - std::min(t_l / t_l0, 1.0));
                w[t - from] = day_amp * urgency;
                wsum += w[t - from];
            }
            double ssum = 0.0;
            for (int i = 0; i < n; ++i) {
                const auto& nd = sc.net.nodes()[i];
                const double dx = nd.lon - z.lon, dy = nd.lat - z.lat;
                const double d2 = dx * dx + dy * dy;
                share[i] = std::exp(-d2 / (2.0 * cfg.surge_sigma_miles *
                                           cfg.surge_sigma_miles));
                ssum += share[i];
            }
            const double total = cfg.trips_per_capita * z.population;
            for (int t = from; t < hours; ++t)
                for (int i = 0; i < n; ++i)
                    sc.surge_injected[static_cast<std::size_t>(t - evac_start) * n +
                                      i] += total * (w[t - from] / wsum) *
                                            (share[i] / ssum);
        }
    }

    // Kernel spread for the coupling term, from free-flow travel times. Falls
    // back to half the mean when every edge is identical.
    double kernel_std = 1.0;
    {
        std::vector<double> tt0;
        for (const auto& e : sc.net.edges())
            tt0.push_back(travel_time(e.distance_miles, cfg.free_flow_mph,
                                      cfg.free_flow_mph));
        if (!tt0.empty()) {
            double sum = 0.0;
            for (double tt : tt0) sum += tt;
            const double m = sum / static_cast<double>(tt0.size());
            double var = 0.0;
            for (double tt : tt0) var += (tt - m) * (tt - m);
            const double sd = std::sqrt(var / static_cast<double>(tt0.size()));
            kernel_std = sd > 0.0 ? 2.0 * sd : std::max(1e-3, 0.5 * m);
        }
    }

    DetectorSeries truth = DetectorSeries::empty(n, hours, 0);
    std::vector<double> prev_flow(static_cast<std::size_t>(n), 0.0);
    std::vector<double> prev_speed(static_cast<std::size_t>(n), cfg.free_flow_mph);

    // Free-flow kernel mass per node, the fixed normalizer of the coupling
    // flux. Normalizing by current kernel mass instead would turn the flux
    // into a weighted mean and cancel the very speed dynamics the adjacency
    // is supposed to expose.
    std::vector<double> den_free(static_cast<std::size_t>(n), 0.0);
    for (const auto& e : sc.net.edges()) {
        const double k0 = kernelize(
            travel_time(e.distance_miles, cfg.free_flow_mph, cfg.free_flow_mph),
            kernel_std, 0.0);
        den_free[static_cast<std::size_t>(sc.net.index_of(e.i))] += k0;
        den_free[static_cast<std::size_t>(sc.net.index_of(e.j))] += k0;
    }

    std::vector<int> inc_left(static_cast<std::size_t>(n), 0);
    std::vector<double> inc_mult(static_cast<std::size_t>(n), 1.0);

    for (int t = 0; t < hours; ++t) {
        const bool evac = t >= evac_start;
        const double prof = detail::diurnal_profile(t % 24);
        const double shape = evac ? 0.5 * prof + 0.5 * mean_profile : prof;
        const double wk =
            (!evac && detail::is_weekend(t)) ? cfg.weekend_factor : 1.0;

        for (int i = 0; i < n; ++i) {
            if (inc_left[i] > 0) continue;
            if (rng_incident.uniform() < cfg.incident_rate) {
                inc_left[i] = 4 + static_cast<int>(rng_incident.uniform() * 9.0);
                inc_mult[i] = rng_incident.uniform(cfg.incident_depth,
                                                   cfg.incident_depth + 0.25);
            }
        }

        // Arriving neighborhood flux: last hour's flows attenuated by the
        // current travel-time kernels, so congestion between two detectors
        // throttles what one hands the other.
        std::vector<double> coupled(static_cast<std::size_t>(n), 0.0);
        if (cfg.coupling > 0.0 && t > 0) {
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (const auto& e : sc.net.edges()) {
                    const int a = sc.net.index_of(e.i), b = sc.net.index_of(e.j);
                    if (a != i && b != i) continue;
                    const int j = a == i ? b : a;
                    const double tt = travel_time(e.distance_miles, prev_speed[i],
                                                  prev_speed[j]);
                    acc += kernelize(tt, kernel_std, 0.0) * prev_flow[j];
                }
                coupled[i] = den_free[static_cast<std::size_t>(i)] > 0.0
                                 ? acc / den_free[static_cast<std::size_t>(i)]
                                 : prev_flow[i];
            }
        }

        for (int i = 0; i < n; ++i) {
            double q = base[i] * shape * wk;
            if (cfg.coupling > 0.0 && t > 0)
                q = (1.0 - cfg.coupling) * q + cfg.coupling * coupled[i];
            q += cfg.noise_level * rng_noise.normal();
            if (evac)
                q += sc.surge_injected[static_cast<std::size_t>(t - evac_start) * n + i];
            // Demand beyond capacity queues upstream instead of being served,
            // so realized flow saturates at the roadway's capacity.
            q = std::min(std::max(q, 0.0), capacity);

            const double vc = q / capacity;
            double s = cfg.free_flow_mph * std::max(0.3, 1.0 - 1.1 * vc * vc);
            if (inc_left[i] > 0) s *= inc_mult[i];
            s += cfg.speed_noise * rng_noise.normal();
            s = std::max(s, 5.0);

            truth.flow[truth.at(t, i)] = q;
            truth.speed[truth.at(t, i)] = s;
        }
        for (int i = 0; i < n; ++i) {
            prev_flow[i] = truth.flow[truth.at(t, i)];
            prev_speed[i] = truth.speed[truth.at(t, i)];
            if (inc_left[i] > 0) --inc_left[i];
        }
    }

    DetectorSeries feed = truth;
    for (int t = 0; t < hours; ++t)
        for (int i = 0; i < n; ++i) {
            const std::size_t k = feed.at(t, i);
            const double u = rng_corrupt.uniform();
            if (u < cfg.missing_rate) {
                feed.missing[k] = 1;
                feed.flow[k] = 0.0;
                feed.speed[k] = 0.0;
            } else if (u < cfg.missing_rate + cfg.outlier_rate) {
                feed.flow[k] = capacity * (1.2 + rng_corrupt.uniform(0.0, 0.8));
            }
        }

    sc.regular_truth = truth.slice(0, cfg.regular_hours);
    sc.evacuation_truth = truth.slice(cfg.regular_hours, cfg.evac_hours);
    sc.regular = feed.slice(0, cfg.regular_hours);
    sc.evacuation = feed.slice(cfg.regular_hours, cfg.evac_hours);
    return sc;
}

// ---------------------------------------------------------------------------
// Scenario config JSON.
// ---------------------------------------------------------------------------

inline nlohmann::json scenario_to_json(const ScenarioConfig& cfg) {
    nlohmann::json j{{"corridors", cfg.corridors},
                     {"nodes_per_corridor", cfg.nodes_per_corridor},
                     {"spacing_miles", cfg.spacing_miles},
                     {"corridor_gap_miles", cfg.corridor_gap_miles},
                     {"interchange_every", cfg.interchange_every},
                     {"lanes", cfg.lanes},
                     {"capacity_per_lane", cfg.capacity_per_lane},
                     {"free_flow_mph", cfg.free_flow_mph},
                     {"regular_hours", cfg.regular_hours},
                     {"evac_hours", cfg.evac_hours},
                     {"landfall_hour", cfg.landfall_hour},
                     {"base_flow_low", cfg.base_flow_low},
                     {"base_flow_high", cfg.base_flow_high},
                     {"noise_level", cfg.noise_level},
                     {"speed_noise", cfg.speed_noise},
                     {"weekend_factor", cfg.weekend_factor},
                     {"coupling", cfg.coupling},
                     {"incident_rate", cfg.incident_rate},
                     {"incident_depth", cfg.incident_depth},
                     {"missing_rate", cfg.missing_rate},
                     {"outlier_rate", cfg.outlier_rate},
                     {"trips_per_capita", cfg.trips_per_capita},
                     {"surge_sigma_miles", cfg.surge_sigma_miles},
                     {"seed", cfg.seed}};
    j["zones"] = zones_to_json(cfg.zones);
    return j;
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
    ScenarioConfig cfg;
    try {
        auto opt = [&j](const char* key, auto& field) {
            if (j.contains(key))
                field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        opt("corridors", cfg.corridors);
        opt("nodes_per_corridor", cfg.nodes_per_corridor);
        opt("spacing_miles", cfg.spacing_miles);
        opt("corridor_gap_miles", cfg.corridor_gap_miles);
        opt("interchange_every", cfg.interchange_every);
        opt("lanes", cfg.lanes);
        opt("capacity_per_lane", cfg.capacity_per_lane);
        opt("free_flow_mph", cfg.free_flow_mph);
        opt("regular_hours", cfg.regular_hours);
        opt("evac_hours", cfg.evac_hours);
        opt("landfall_hour", cfg.landfall_hour);
        opt("base_flow_low", cfg.base_flow_low);
        opt("base_flow_high", cfg.base_flow_high);
        opt("noise_level", cfg.noise_level);
        opt("speed_noise", cfg.speed_noise);
        opt("weekend_factor", cfg.weekend_factor);
        opt("coupling", cfg.coupling);
        opt("incident_rate", cfg.incident_rate);
        opt("incident_depth", cfg.incident_depth);
        opt("missing_rate", cfg.missing_rate);
        opt("outlier_rate", cfg.outlier_rate);
        opt("trips_per_capita", cfg.trips_per_capita);
        opt("surge_sigma_miles", cfg.surge_sigma_miles);
        opt("seed", cfg.seed);
        if (j.contains("zones")) cfg.zones = zones_from_json(j.at("zones"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad scenario config: ") + e.what());
    }
    return cfg;
}

inline ScenarioConfig load_scenario_config(const std::string& path) {
    std::ifstream in(path);
    require<ConfigError>(in.good(), "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
    return scenario_from_json(j);
}

}  // namespace evacflow
