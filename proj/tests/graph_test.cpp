#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "evacflow/graph.hpp"
#include "test_oracles.hpp"

using namespace evacflow;

TEST(TravelTime, HandValues) {
    EXPECT_DOUBLE_EQ(travel_time(2.0, 60.0, 60.0), 1.0 / 30.0);
    EXPECT_DOUBLE_EQ(travel_time(3.0, 20.0, 40.0), 0.1);
    for (double s : {5.0, 12.5, 30.0, 65.0})
        EXPECT_DOUBLE_EQ(travel_time(1.0, s, s), 1.0 / s);
}

TEST(TravelTime, SpeedsClampedToFloor) {
    EXPECT_DOUBLE_EQ(travel_time(1.0, 0.0, 0.0), 2.0 / 10.0);
    EXPECT_DOUBLE_EQ(travel_time(1.0, 3.0, 60.0), 2.0 / 65.0);
    EXPECT_DOUBLE_EQ(travel_time(1.0, 0.0, 0.0, 10.0), 0.1);
}

TEST(TravelTime, NonpositiveDistanceRejected) {
    EXPECT_THROW(travel_time(0.0, 60.0, 60.0), ContractError);
    EXPECT_THROW(travel_time(-1.0, 60.0, 60.0), ContractError);
}

TEST(Kernelize, HandValues) {
    EXPECT_DOUBLE_EQ(kernelize(0.0, 1.0, 0.1), 1.0);
    EXPECT_NEAR(kernelize(0.5, 0.5, 0.1), std::exp(-1.0), 1e-15);
    EXPECT_DOUBLE_EQ(kernelize(1.0, 0.5, 0.1), 0.0);  // exp(-4) < 0.1
    EXPECT_NEAR(kernelize(2.0, 2.0, 0.3), std::exp(-1.0), 1e-15);
}

TEST(Kernelize, ErrorsAndThresholdMonotonicity) {
    EXPECT_THROW(kernelize(1.0, 0.0, 0.1), NumericError);
    EXPECT_THROW(kernelize(1.0, -1.0, 0.1), NumericError);
    EXPECT_THROW(kernelize(1.0, 1.0, 1.0), ContractError);
    EXPECT_THROW(kernelize(1.0, 1.0, -0.1), ContractError);

    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double tt = rng.uniform(0.0, 3.0);
        const double lo = rng.uniform(0.0, 0.5);
        const double hi = lo + rng.uniform(0.0, 0.999 - lo);
        const double w_lo = kernelize(tt, 1.0, lo);
        const double w_hi = kernelize(tt, 1.0, hi);
        if (w_lo == 0.0) EXPECT_EQ(w_hi, 0.0);
        EXPECT_TRUE(w_hi == w_lo || w_hi == 0.0);
    }
}

TEST(Kernelize, DoublingTravelTimeNeverIncreasesWeight) {
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        const double tt = rng.uniform(0.0, 2.0);
        const double std_ = rng.uniform(0.1, 1.5);
        EXPECT_LE(kernelize(2.0 * tt, std_, 0.1), kernelize(tt, std_, 0.1));
    }
}

TEST(Normalize, IdentityFixedPoint) {
    std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    EXPECT_EQ(normalize(eye, 3), eye);
}

TEST(Normalize, HandTwoByTwo) {
    std::vector<double> abar = {1, 1, 1, 1};
    std::vector<double> ahat = normalize(abar, 2);
    for (double v : ahat) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Normalize, LinkCountDegreeDiffersFromWeighted) {
    std::vector<double> abar = {1.0, 0.5, 0.5, 1.0};
    std::vector<double> weighted = normalize(abar, 2, DegreeMode::weighted);
    EXPECT_NEAR(weighted[0], 1.0 / 1.5, 1e-15);
    EXPECT_NEAR(weighted[1], 0.5 / 1.5, 1e-15);
    std::vector<double> linkct = normalize(abar, 2, DegreeMode::link_count);
    EXPECT_DOUBLE_EQ(linkct[0], 0.5);
    EXPECT_DOUBLE_EQ(linkct[1], 0.25);
}

TEST(Normalize, ContractErrors) {
    EXPECT_THROW(normalize({1, 2, 3}, 2), ShapeError);
    EXPECT_THROW(normalize({0, 1, 1, 1}, 2), ContractError);   // zero diagonal
    EXPECT_THROW(normalize({1, -1, -1, 1}, 2), NumericError);  // negative entry
}

TEST(Normalize, MatchesDenseOracle) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(mix_seed(seed, 0xabc));
        const int n = 3 + static_cast<int>(rng.below(6));
        auto abar = oracles::random_abar(rng, n);
        auto ahat = normalize(abar, n);
        oracles::Mat want = oracles::normalize_dense(oracles::to_mat(abar, n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                EXPECT_NEAR(ahat[static_cast<std::size_t>(i) * n + j], want(i, j),
                            1e-12)
                    << "seed " << seed << " at (" << i << "," << j << ")";
    }
}

TEST(Normalize, SpectralRadiusBounded) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(mix_seed(seed, 0xdef));
        const int n = 3 + static_cast<int>(rng.below(6));
        auto abar = oracles::random_abar(rng, n);
        auto ahat = normalize(abar, n);
        const double rho = oracles::spectral_radius(oracles::to_mat(ahat, n), rng);
        EXPECT_LE(rho, 1.0 + 1e-9) << "seed " << seed;
        EXPECT_GT(rho, 0.1);
    }
}

TEST(Network, ValidationRules) {
    std::vector<DetectorNode> nodes = {{1, "I-75", 0.0, 2, 27.0, -82.0},
                                       {2, "I-75", 3.0, 2, 27.1, -82.0}};
    EXPECT_NO_THROW(DetectorNetwork(nodes, {{1, 2, 3.0}}));

    auto dup = nodes;
    dup[1].id = 1;
    EXPECT_THROW(DetectorNetwork(dup, {}), DataError);

    auto out_of_range = nodes;
    out_of_range[1].id = 5;
    EXPECT_THROW(DetectorNetwork(out_of_range, {}), DataError);

    EXPECT_THROW(DetectorNetwork(nodes, {{1, 1, 2.0}}), DataError);   // self edge
    EXPECT_THROW(DetectorNetwork(nodes, {{1, 3, 2.0}}), DataError);   // unknown id
    EXPECT_THROW(DetectorNetwork(nodes, {{1, 2, 0.0}}), ContractError);
    EXPECT_THROW(DetectorNetwork(nodes, {{1, 2, 3.0}, {2, 1, 4.0}}), DataError);

    DetectorNetwork deduped(nodes, {{1, 2, 3.0}, {2, 1, 3.0}});
    EXPECT_EQ(deduped.edges().size(), 1u);
    EXPECT_EQ(deduped.size(), 2);
    EXPECT_EQ(deduped.index_of(2), 1);
}

TEST(Network, JsonRoundTrip) {
    Rng rng(42);
    DetectorNetwork net = oracles::random_network(rng, 7);
    nlohmann::json j = network_to_json(net);
    DetectorNetwork back = network_from_json(j);
    ASSERT_EQ(back.size(), net.size());
    for (int k = 0; k < net.size(); ++k) {
        EXPECT_EQ(back.nodes()[k].id, net.nodes()[k].id);
        EXPECT_EQ(back.nodes()[k].corridor, net.nodes()[k].corridor);
        EXPECT_EQ(back.nodes()[k].milepost, net.nodes()[k].milepost);
        EXPECT_EQ(back.nodes()[k].lanes, net.nodes()[k].lanes);
    }
    ASSERT_EQ(back.edges().size(), net.edges().size());
    for (std::size_t k = 0; k < net.edges().size(); ++k)
        EXPECT_EQ(back.edges()[k].distance_miles, net.edges()[k].distance_miles);
}

TEST(Network, FileRoundTripAndErrors) {
    Rng rng(43);
    DetectorNetwork net = oracles::random_network(rng, 5);
    const std::string path = "graph_test_topology.json";
    save_network(net, path);
    DetectorNetwork back = load_network(path);
    EXPECT_EQ(back.size(), net.size());
    std::remove(path.c_str());

    EXPECT_THROW(load_network("no_such_dir/topology.json"), DataError);

    std::ofstream bad("graph_test_bad.json");
    bad << "{ not json";
    bad.close();
    EXPECT_THROW(load_network("graph_test_bad.json"), DataError);
    std::remove("graph_test_bad.json");
}

TEST(DynamicGraphBuild, TwoNodeZeroTravelTimeLimit) {
    std::vector<DetectorNode> nodes = {{1, "I-75", 0.0, 2, 27.0, -82.0},
                                       {2, "I-75", 1.0, 2, 27.1, -82.0}};
    DetectorNetwork net(nodes, {{1, 2, 1.0}});
    std::vector<std::vector<double>> speeds = {{2e9, 2e9}};
    DynamicGraph g = build_dynamic_graph(net, speeds, {}, 1.0);
    EXPECT_EQ(g.abar(0), (std::vector<double>{1, 1, 1, 1}));
    EXPECT_EQ(g.ahat(0), (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
    EXPECT_EQ(g.a(0), (std::vector<double>{0, 1, 1, 0}));
}

TEST(DynamicGraphBuild, SingleNode) {
    DetectorNetwork net({{1, "I-75", 0.0, 2, 27.0, -82.0}}, {});
    DynamicGraph g = build_dynamic_graph(net, {{{55.0}}}, {}, 1.0);
    EXPECT_EQ(g.abar(0), (std::vector<double>{1.0}));
    EXPECT_EQ(g.ahat(0), (std::vector<double>{1.0}));
}

TEST(DynamicGraphBuild, ThreeNodePathMatchesDenseOracle) {
    Rng rng(77);
    DetectorNetwork net = oracles::random_network(rng, 3);
    auto speeds = oracles::random_speeds(rng, 4, 3);
    DynamicGraph g = build_dynamic_graph(net, speeds);
    for (int t = 0; t < g.timesteps(); ++t) {
        oracles::Mat want = oracles::normalize_dense(oracles::to_mat(g.abar(t), 3));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                EXPECT_NEAR(g.ahat(t)[static_cast<std::size_t>(i) * 3 + j],
                            want(i, j), 1e-12);
    }
}

TEST(DynamicGraphBuild, StructuralInvariantsOnRandomInstances) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(mix_seed(seed, 0x9a));
        const int n = 2 + static_cast<int>(rng.below(8));
        DetectorNetwork net = oracles::random_network(rng, n);
        auto speeds = oracles::random_speeds(rng, 3, n);
        DynamicGraph g = build_dynamic_graph(net, speeds);
        EXPECT_GT(g.tt_std(), 0.0);
        for (int t = 0; t < g.timesteps(); ++t) {
            const auto& a = g.a(t);
            const auto& abar = g.abar(t);
            const auto& ahat = g.ahat(t);
            for (int i = 0; i < n; ++i) {
                EXPECT_EQ(a[static_cast<std::size_t>(i) * n + i], 0.0);
                EXPECT_GE(abar[static_cast<std::size_t>(i) * n + i], 1.0);
                for (int j = 0; j < n; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                    const std::size_t ji = static_cast<std::size_t>(j) * n + i;
                    EXPECT_GE(ahat[ij], 0.0);
                    EXPECT_NEAR(ahat[ij], ahat[ji], 1e-12);
                    EXPECT_EQ(ahat[ij] == 0.0, abar[ij] == 0.0);
                }
            }
        }
    }
}

TEST(DynamicGraphBuild, RaisingThresholdOnlyRemovesEdges) {
    Rng rng(91);
    DetectorNetwork net = oracles::random_network(rng, 6);
    auto speeds = oracles::random_speeds(rng, 5, 6, 8.0, 70.0);
    GraphConfig lo_cfg, hi_cfg;
    lo_cfg.threshold = 0.05;
    hi_cfg.threshold = 0.6;
    const double tt_std = travel_time_std(net, speeds);
    DynamicGraph lo = build_dynamic_graph(net, speeds, lo_cfg, tt_std);
    DynamicGraph hi = build_dynamic_graph(net, speeds, hi_cfg, tt_std);
    bool any_removed = false;
    for (int t = 0; t < lo.timesteps(); ++t) {
        for (std::size_t k = 0; k < lo.a(t).size(); ++k) {
            if (lo.a(t)[k] == 0.0) EXPECT_EQ(hi.a(t)[k], 0.0);
            if (hi.a(t)[k] == 0.0 && lo.a(t)[k] != 0.0) any_removed = true;
            if (hi.a(t)[k] != 0.0) EXPECT_EQ(hi.a(t)[k], lo.a(t)[k]);
        }
    }
    EXPECT_TRUE(any_removed);
}

TEST(DynamicGraphBuild, DisconnectedNodeWarnsAndStaysSelfAccessible) {
    std::vector<DetectorNode> nodes = {{1, "I-75", 0.0, 2, 27.0, -82.0},
                                       {2, "I-75", 500.0, 2, 31.0, -83.0}};
    DetectorNetwork net(nodes, {{1, 2, 500.0}});
    std::vector<std::vector<double>> speeds = {{20.0, 20.0}};
    DynamicGraph g = build_dynamic_graph(net, speeds, {}, 0.5);
    EXPECT_EQ(g.a(0), (std::vector<double>{0, 0, 0, 0}));
    EXPECT_EQ(g.ahat(0), (std::vector<double>{1, 0, 0, 1}));
    EXPECT_FALSE(g.warnings().empty());
}

TEST(DynamicGraphBuild, InputContracts) {
    Rng rng(3);
    DetectorNetwork net = oracles::random_network(rng, 3);
    EXPECT_THROW(build_dynamic_graph(net, {}), DataError);
    EXPECT_THROW(build_dynamic_graph(net, {{1.0, 2.0}}), ShapeError);
    std::vector<std::vector<double>> nan_speeds = {{50.0, std::nan(""), 40.0}};
    EXPECT_THROW(build_dynamic_graph(net, nan_speeds, {}, 1.0), NumericError);

    DetectorNetwork pair({{1, "A", 0.0, 2, 0, 0}, {2, "A", 1.0, 2, 0, 0}},
                         {{1, 2, 2.0}});
    std::vector<std::vector<double>> flat = {{50.0, 50.0}, {50.0, 50.0}};
    EXPECT_THROW(build_dynamic_graph(pair, flat), NumericError);  // zero spread
}

TEST(TravelTimeStd, MatchesHandComputation) {
    std::vector<DetectorNode> nodes = {{1, "A", 0.0, 2, 0, 0},
                                       {2, "A", 1.0, 2, 0, 0},
                                       {3, "A", 2.0, 2, 0, 0}};
    DetectorNetwork net(nodes, {{1, 2, 1.0}, {2, 3, 2.0}});
    std::vector<std::vector<double>> speeds = {{50, 50, 50}, {25, 25, 25}};
    // tts: 1/50, 2/50, 1/25, 2/25
    const std::vector<double> tts = {0.02, 0.04, 0.04, 0.08};
    double m = 0.0;
    for (double v : tts) m += v;
    m /= 4.0;
    double var = 0.0;
    for (double v : tts) var += (v - m) * (v - m);
    var /= 4.0;
    EXPECT_NEAR(travel_time_std(net, speeds), std::sqrt(var), 1e-15);
}

TEST(AdjacencyCsv, DeterministicNonzeroDump) {
    std::vector<DetectorNode> nodes = {{1, "I-75", 0.0, 2, 27.0, -82.0},
                                       {2, "I-75", 1.0, 2, 27.1, -82.0}};
    DetectorNetwork net(nodes, {{1, 2, 1.0}});
    std::vector<std::vector<double>> speeds = {{2e9, 2e9}};
    DynamicGraph g = build_dynamic_graph(net, speeds, {}, 1.0);
    std::ostringstream out1, out2;
    write_adjacency_csv(out1, net, g);
    write_adjacency_csv(out2, net, g);
    EXPECT_EQ(out1.str(), out2.str());
    EXPECT_EQ(out1.str(),
              "t,i,j,weight\n"
              "0,1,1,0.5\n0,1,2,0.5\n0,2,1,0.5\n0,2,2,0.5\n");
}
