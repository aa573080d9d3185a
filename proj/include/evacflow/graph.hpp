#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacflow/common.hpp"
#include "evacflow/tensor.hpp"

namespace evacflow {

// ---------------------------------------------------------------------------
// Detector network topology and the per-timestep weighted adjacency stack:
// travel-time edge weights, Gaussian kernel with sparsity threshold,
// self-loops, and symmetric degree normalization.
// ---------------------------------------------------------------------------

struct DetectorNode {
    int id = 0;  // 1..N, fixed ordering shared with the flow matrices
    std::string corridor;
    double milepost = 0.0;  // miles
    int lanes = 1;
    double lat = 0.0;
    double lon = 0.0;
};

struct DetectorEdge {
    int i = 0;  // node ids, not indices
    int j = 0;
    double distance_miles = 0.0;
};

class DetectorNetwork {
public:
    DetectorNetwork() = default;
    DetectorNetwork(std::vector<DetectorNode> nodes, std::vector<DetectorEdge> edges)
        : nodes_(std::move(nodes)), edges_(std::move(edges)) {
        validate();
    }

    int size() const { return static_cast<int>(nodes_.size()); }
    const std::vector<DetectorNode>& nodes() const { return nodes_; }
    const std::vector<DetectorEdge>& edges() const { return edges_; }

    int index_of(int id) const {
        auto it = index_.find(id);
        require<DataError>(it != index_.end(),
                           "unknown detector id " + std::to_string(id));
        return it->second;
    }

    const DetectorNode& node_by_id(int id) const { return nodes_[index_of(id)]; }

private:
    void validate() {
        const int n = size();
        require<DataError>(n > 0, "network has no nodes");
        std::vector<bool> seen(static_cast<std::size_t>(n) + 1, false);
        for (int k = 0; k < n; ++k) {
            const int id = nodes_[k].id;
            require<DataError>(1 <= id && id <= n,
                               "detector id " + std::to_string(id) +
                                   " outside 1.." + std::to_string(n));
            require<DataError>(!seen[id], "duplicate detector id " + std::to_string(id));
            seen[id] = true;
            require<DataError>(nodes_[k].lanes >= 1,
                               "detector " + std::to_string(id) + " has no lanes");
            index_[id] = k;
        }
        std::map<std::pair<int, int>, double> canon;
        for (const auto& e : edges_) {
            require<DataError>(e.i != e.j,
                               "self-edge on detector " + std::to_string(e.i));
            index_of(e.i);
            index_of(e.j);
            require<ContractError>(e.distance_miles > 0.0,
                                   "edge " + std::to_string(e.i) + "-" +
                                       std::to_string(e.j) +
                                       " has nonpositive distance");
            auto key = std::minmax(e.i, e.j);
            auto found = canon.find(key);
            if (found != canon.end()) {
                require<DataError>(found->second == e.distance_miles,
                                   "edge " + std::to_string(e.i) + "-" +
                                       std::to_string(e.j) +
                                       " stored twice with different distances");
            } else {
                canon.emplace(key, e.distance_miles);
            }
        }
        edges_.clear();
        edges_.reserve(canon.size());
        for (const auto& [key, d] : canon)
            edges_.push_back({key.first, key.second, d});
    }

    std::vector<DetectorNode> nodes_;
    std::vector<DetectorEdge> edges_;
    std::unordered_map<int, int> index_;
};

/// Travel time in hours between consecutive detectors at their average speed.
/// Speeds below the floor are clamped, not rejected.
inline double travel_time(double d_miles, double s_i_mph, double s_j_mph,
                          double floor_mph = 5.0) {
    require<ContractError>(d_miles > 0.0, "travel_time: nonpositive distance");
    const double si = std::max(s_i_mph, floor_mph);
    const double sj = std::max(s_j_mph, floor_mph);
    return 2.0 * d_miles / (si + sj);
}

/// Gaussian kernel weight with sparsity threshold r: values below r drop to 0.
inline double kernelize(double tt_hours, double tt_std_hours, double r) {
    require<NumericError>(tt_std_hours > 0.0,
                          "kernelize: degenerate travel-time spread");
    require<ContractError>(0.0 <= r && r < 1.0,
                           "kernelize: threshold must be in [0, 1)");
    const double z = tt_hours / tt_std_hours;
    const double w = std::exp(-z * z);
    return w >= r ? w : 0.0;
}

enum class DegreeMode {
    weighted,    // row sums of the weighted adjacency
    link_count,  // number of nonzero entries per row
};

struct GraphConfig {
    double threshold = 0.1;      // kernel sparsity cutoff
    double speed_floor_mph = 5.0;
    // link_count keeps each node's self-weight steady as kernel weights move
    // with traffic, so adjacency dynamics show up in the cross terms only.
    DegreeMode degree_mode = DegreeMode::link_count;
};

/// Symmetric degree normalization D^{-1/2} A D^{-1/2} of a square matrix with
/// strictly positive diagonal. Degrees follow the requested mode.
inline std::vector<double> normalize(const std::vector<double>& abar, int n,
                                     DegreeMode mode = DegreeMode::weighted) {
    require<ShapeError>(static_cast<std::size_t>(n) * n == abar.size(),
                        "normalize: matrix of side " + std::to_string(n) +
                            " needs " + std::to_string(n * n) + " values, got " +
                            std::to_string(abar.size()));
    std::vector<double> deg(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double d = 0.0;
        for (int j = 0; j < n; ++j) {
            const double v = abar[static_cast<std::size_t>(i) * n + j];
            require<NumericError>(v >= 0.0 && std::isfinite(v),
                                  "normalize: negative or non-finite entry");
            d += mode == DegreeMode::weighted ? v : (v != 0.0 ? 1.0 : 0.0);
        }
        require<ContractError>(abar[static_cast<std::size_t>(i) * n + i] > 0.0,
                               "normalize: nonpositive diagonal at row " +
                                   std::to_string(i));
        require<NumericError>(d > 0.0,
                              "normalize: zero degree at row " + std::to_string(i));
        deg[i] = d;
    }
    // Dividing by sqrt(d_i * d_j) rather than multiplying by two inverse
    // roots keeps the result exactly symmetric and exact on integer degrees.
    std::vector<double> ahat(abar.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            ahat[static_cast<std::size_t>(i) * n + j] =
                abar[static_cast<std::size_t>(i) * n + j] /
                std::sqrt(deg[i] * deg[j]);
    return ahat;
}

/// Standard deviation of edge travel times over a speed window; the frozen
/// spread parameter of the kernel.
inline double travel_time_std(const DetectorNetwork& net,
                              const std::vector<std::vector<double>>& speeds,
                              double floor_mph = 5.0) {
    std::vector<double> tts;
    tts.reserve(speeds.size() * net.edges().size());
    for (const auto& row : speeds) {
        require<ShapeError>(row.size() == static_cast<std::size_t>(net.size()),
                            "speed row covers " + std::to_string(row.size()) +
                                " nodes, network has " + std::to_string(net.size()));
        for (const auto& e : net.edges())
            tts.push_back(travel_time(e.distance_miles, row[net.index_of(e.i)],
                                      row[net.index_of(e.j)], floor_mph));
    }
    require<DataError>(!tts.empty(), "no edge travel times to take a spread over");
    double sum = 0.0;
    for (double tt : tts) sum += tt;
    const double m = sum / static_cast<double>(tts.size());
    // Two-pass variance: exactly zero when every value equals the mean, which
    // the one-pass form misses under fused-multiply-add contraction.
    double var = 0.0;
    for (double tt : tts) var += (tt - m) * (tt - m);
    var /= static_cast<double>(tts.size());
    const double sd = std::sqrt(var);
    require<NumericError>(sd > 0.0, "travel-time spread is degenerate (all equal)");
    return sd;
}

/// Per-timestep adjacency stack. Immutable after construction.
class DynamicGraph {
public:
    DynamicGraph(int n, double tt_std) : n_(n), tt_std_(tt_std) {}

    int node_count() const { return n_; }
    int timesteps() const { return static_cast<int>(ahat_.size()); }
    double tt_std() const { return tt_std_; }

    const std::vector<double>& a(int t) const { return a_.at(t); }
    const std::vector<double>& abar(int t) const { return abar_.at(t); }
    const std::vector<double>& ahat(int t) const { return ahat_.at(t); }

    Tensor ahat_tensor(int t) const {
        return Tensor::from_data({n_, n_}, ahat_.at(t));
    }

    const std::vector<std::string>& warnings() const { return warnings_; }

    void push_timestep(std::vector<double> a, std::vector<double> abar,
                       std::vector<double> ahat) {
        a_.push_back(std::move(a));
        abar_.push_back(std::move(abar));
        ahat_.push_back(std::move(ahat));
    }

    void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

private:
    int n_;
    double tt_std_;
    std::vector<std::vector<double>> a_;
    std::vector<std::vector<double>> abar_;
    std::vector<std::vector<double>> ahat_;
    std::vector<std::string> warnings_;
};

/// Builds the full adjacency stack for a speed series. When tt_std_override
/// is positive it is used as the frozen kernel spread; otherwise the spread
/// is measured from this series.
inline DynamicGraph build_dynamic_graph(const DetectorNetwork& net,
                                        const std::vector<std::vector<double>>& speeds,
                                        const GraphConfig& cfg = {},
                                        double tt_std_override = 0.0) {
    require<DataError>(!speeds.empty(), "speed series is empty");
    const int n = net.size();
    const double tt_std = tt_std_override > 0.0
                              ? tt_std_override
                              : travel_time_std(net, speeds, cfg.speed_floor_mph);

    DynamicGraph graph(n, tt_std);
    std::vector<bool> ever_connected(static_cast<std::size_t>(n), false);
    for (std::size_t t = 0; t < speeds.size(); ++t) {
        const auto& row = speeds[t];
        require<ShapeError>(row.size() == static_cast<std::size_t>(n),
                            "speed row " + std::to_string(t) + " covers " +
                                std::to_string(row.size()) + " nodes, network has " +
                                std::to_string(n));
        require<NumericError>(all_finite(row),
                              "non-finite speed at timestep " + std::to_string(t));
        std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
        for (const auto& e : net.edges()) {
            const int i = net.index_of(e.i);
            const int j = net.index_of(e.j);
            const double tt =
                travel_time(e.distance_miles, row[i], row[j], cfg.speed_floor_mph);
            const double w = kernelize(tt, tt_std, cfg.threshold);
            a[static_cast<std::size_t>(i) * n + j] = w;
            a[static_cast<std::size_t>(j) * n + i] = w;
            if (w > 0.0) {
                ever_connected[i] = true;
                ever_connected[j] = true;
            }
        }
        std::vector<double> abar = a;
        for (int i = 0; i < n; ++i) abar[static_cast<std::size_t>(i) * n + i] += 1.0;
        std::vector<double> ahat = normalize(abar, n, cfg.degree_mode);
        graph.push_timestep(std::move(a), std::move(abar), std::move(ahat));
    }
    for (int i = 0; i < n; ++i) {
        if (!ever_connected[i] && !net.edges().empty())
            graph.add_warning("detector " + std::to_string(net.nodes()[i].id) +
                              " has no above-threshold neighbors; only its "
                              "self-loop keeps it reachable");
    }
    return graph;
}

// ---------------------------------------------------------------------------
// Topology file format and adjacency export.
// ---------------------------------------------------------------------------

inline DetectorNetwork network_from_json(const nlohmann::json& j) {
    require<DataError>(j.is_object() && j.contains("nodes") && j.contains("edges"),
                       "topology JSON needs 'nodes' and 'edges' arrays");
    std::vector<DetectorNode> nodes;
    for (const auto& jn : j.at("nodes")) {
        DetectorNode n;
        n.id = jn.at("id").get<int>();
        n.corridor = jn.at("corridor").get<std::string>();
        n.milepost = jn.at("milepost").get<double>();
        n.lanes = jn.at("lanes").get<int>();
        n.lat = jn.at("lat").get<double>();
        n.lon = jn.at("lon").get<double>();
        nodes.push_back(std::move(n));
    }
    std::vector<DetectorEdge> edges;
    for (const auto& je : j.at("edges")) {
        DetectorEdge e;
        e.i = je.at("i").get<int>();
        e.j = je.at("j").get<int>();
        e.distance_miles = je.at("distance_miles").get<double>();
        edges.push_back(e);
    }
    return DetectorNetwork(std::move(nodes), std::move(edges));
}

inline nlohmann::json network_to_json(const DetectorNetwork& net) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& n : net.nodes())
        j["nodes"].push_back({{"id", n.id},
                              {"corridor", n.corridor},
                              {"milepost", n.milepost},
                              {"lanes", n.lanes},
                              {"lat", n.lat},
                              {"lon", n.lon}});
    j["edges"] = nlohmann::json::array();
    for (const auto& e : net.edges())
        j["edges"].push_back(
            {{"i", e.i}, {"j", e.j}, {"distance_miles", e.distance_miles}});
    return j;
}

inline DetectorNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    require<DataError>(in.good(), "cannot open topology file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("topology file " + path + " is not valid JSON: " + e.what());
    }
    return network_from_json(j);
}

inline void save_network(const DetectorNetwork& net, const std::string& path) {
    std::ofstream out(path);
    require<DataError>(out.good(), "cannot write topology file " + path);
    out << network_to_json(net).dump(2) << "\n";
}

/// Nonzero entries of the normalized adjacency, one row per (t, i, j).
/// Node ids are 1-based to match the topology file.
inline void write_adjacency_csv(std::ostream& out, const DetectorNetwork& net,
                                const DynamicGraph& graph) {
    const int n = graph.node_count();
    out << "t,i,j,weight\n";
    for (int t = 0; t < graph.timesteps(); ++t) {
        const auto& ahat = graph.ahat(t);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double w = ahat[static_cast<std::size_t>(i) * n + j];
                if (w != 0.0)
                    out << t << "," << net.nodes()[i].id << "," << net.nodes()[j].id
                        << "," << format_double(w) << "\n";
            }
    }
}

}  // namespace evacflow
