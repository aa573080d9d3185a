// End-to-end tests that drive the installed CLI binary through std::system,
// checking exit codes and the files each subcommand leaves behind.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

std::string cli() { return std::string(EVACFLOW_CLI_PATH); }

int run(const std::string& args) {
    const std::string cmd = cli() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in.good()) << "cannot open " << path;
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char ch : text)
        if (ch == '\n') ++n;
    return n;
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() /
                       ("evacflow_cli_" + tag + "_" +
                        std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Scenario shared by most tests: 8 detectors, short phases, generated once.
const fs::path& shared_data() {
    static const fs::path dir = [] {
        const fs::path root = fresh_dir("shared");
        const fs::path cfg = root / "scenario_config.json";
        std::ofstream out(cfg);
        out << R"({"corridors": 2, "nodes_per_corridor": 4, "interchange_every": 2,
 "regular_hours": 192, "evac_hours": 48, "landfall_hour": 216,
 "zones": [{"id": 1, "population": 50000, "order_issue_hour": 190, "lat": 0.0, "lon": -4.0},
           {"id": 2, "population": 80000, "order_issue_hour": 196, "lat": 5.0, "lon": -6.0}],
 "seed": 7})";
        out.close();
        const fs::path data = root / "data";
        EXPECT_EQ(run("synth --config " + cfg.string() + " --out " + data.string()), 0);
        return data;
    }();
    return dir;
}

std::string train_small(const fs::path& out, const std::string& model,
                        int epochs) {
    EXPECT_EQ(run("train --data " + shared_data().string() + " --out " +
                  out.string() + " --model " + model + " --epochs " +
                  std::to_string(epochs) +
                  " --hidden 16 --seed 5 --no-timestamps"),
              0);
    return (out / "model.json").string();
}

TEST(Synth, SameSeedIsByteIdenticalDifferentSeedIsNot) {
    const fs::path root = fresh_dir("synth_det");
    const std::string cfg = (shared_data().parent_path() / "scenario_config.json").string();
    ASSERT_EQ(run("synth --config " + cfg + " --out " + (root / "a").string()), 0);
    ASSERT_EQ(run("synth --config " + cfg + " --out " + (root / "b").string()), 0);
    ASSERT_EQ(run("synth --config " + cfg + " --seed 99 --out " + (root / "c").string()), 0);
    for (const char* name :
         {"regular.csv", "evacuation.csv", "network.json", "zones.json"}) {
        EXPECT_EQ(slurp(root / "a" / name), slurp(root / "b" / name)) << name;
    }
    EXPECT_NE(slurp(root / "a" / "regular.csv"), slurp(root / "c" / "regular.csv"));
    EXPECT_EQ(slurp(root / "a" / "zones.json"), slurp(root / "c" / "zones.json"));
}

TEST(Synth, NodeFlagControlsNetworkSize) {
    const fs::path root = fresh_dir("synth_nodes");
    ASSERT_EQ(run("synth --nodes 12 --seed 3 --out " + root.string()), 0);
    const auto net = nlohmann::json::parse(slurp(root / "network.json"));
    EXPECT_EQ(net.at("nodes").size(), 12u);
    EXPECT_EQ(run("synth --nodes 7 --seed 3 --out " + root.string()), 2)
        << "7 nodes cannot split over 2 corridors";
}

TEST(Train, WritesArtifactHistoryAndMetrics) {
    const fs::path out = fresh_dir("train");
    train_small(out, "dgcnlstm", 2);
    EXPECT_TRUE(fs::exists(out / "model.json"));
    EXPECT_EQ(line_count(slurp(out / "loss_history.csv")), 3u);
    const auto metrics = nlohmann::json::parse(slurp(out / "metrics.json"));
    EXPECT_TRUE(metrics.contains("test"));
    EXPECT_GT(metrics.at("test").at("rmse").get<double>(), 0.0);
    EXPECT_FALSE(metrics.contains("generated_at"));
}

TEST(Train, RejectsTransferKind) {
    const fs::path out = fresh_dir("train_transfer");
    EXPECT_EQ(run("train --data " + shared_data().string() + " --out " +
                  out.string() + " --model transfer --epochs 1"),
              2);
}

TEST(Transfer, MissingPretrainedArtifactExitsThree) {
    const fs::path out = fresh_dir("transfer_missing");
    EXPECT_EQ(run("transfer --data " + shared_data().string() + " --out " +
                  out.string() + " --pretrained " +
                  (out / "nope.json").string()),
              3);
}

TEST(Transfer, TrainsAgainstPretrainedArtifact) {
    const fs::path pre = fresh_dir("transfer_pre");
    const std::string model = train_small(pre, "dgcnlstm", 2);
    const fs::path out = fresh_dir("transfer_run");
    ASSERT_EQ(run("transfer --data " + shared_data().string() + " --out " +
                  out.string() + " --pretrained " + model +
                  " --epochs 2 --hidden 16 --no-timestamps"),
              0);
    EXPECT_TRUE(fs::exists(out / "transfer_model.json"));
    const auto metrics = nlohmann::json::parse(slurp(out / "metrics.json"));
    EXPECT_TRUE(metrics.contains("transfer"));
    EXPECT_TRUE(metrics.contains("direct_pretrained"));
}

TEST(Predict, CsvHasHeaderAndOneRowPerForecastCell) {
    const fs::path runp = fresh_dir("predict_model");
    const std::string model = train_small(runp, "lstm", 1);
    const fs::path out = fresh_dir("predict_out");
    ASSERT_EQ(run("predict --data " + shared_data().string() + " --model " +
                  model + " --split test --out " + out.string()),
              0);
    const std::string csv = slurp(out / "predictions.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "sample,horizon_step,node_id,flow_pred,flow_true");
    // 192 raw hours lose a 48 h history warm-up: 144 feature hours give 133
    // windows, 5% test -> 6 samples, each 6 steps x 8 nodes.
    EXPECT_EQ(line_count(csv), 1u + 6u * 6u * 8u);
}

TEST(Evaluate, WritesMetricsCsvRow) {
    const fs::path runp = fresh_dir("eval_model");
    const std::string model = train_small(runp, "lstm", 1);
    const fs::path out = fresh_dir("eval_out");
    ASSERT_EQ(run("evaluate --data " + shared_data().string() + " --model " +
                  model + " --phase regular --split val --out " + out.string() +
                  " --no-timestamps"),
              0);
    const std::string csv = slurp(out / "metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,phase,split,rmse,mae,r2");
    EXPECT_NE(csv.find("lstm,regular,val,"), std::string::npos);
    EXPECT_EQ(run("evaluate --data " + shared_data().string() + " --model " +
                  model + " --split bogus --out " + out.string()),
              2);
}

TEST(Gradcheck, PassesForEveryModelKind) {
    EXPECT_EQ(run("gradcheck"), 0);
}

TEST(Experiment, RepeatedRunsProduceByteIdenticalMetrics) {
    const fs::path a = fresh_dir("exp_a");
    const fs::path b = fresh_dir("exp_b");
    const std::string base = "experiment --data " + shared_data().string() +
                             " --models lstm,dgcnlstm --seeds 2 --epochs 2 "
                             "--hidden 16 --seed 11 --no-timestamps --out ";
    ASSERT_EQ(run(base + a.string()), 0);
    ASSERT_EQ(run(base + b.string()), 0);
    EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
    EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
    EXPECT_EQ(line_count(slurp(a / "metrics.csv")), 1u + 4u)
        << "2 models x 2 seeds plus header";
}

TEST(CongestionMap, RowsAreCompleteAndSorted) {
    const fs::path pre = fresh_dir("map_pre");
    const std::string model = train_small(pre, "dgcnlstm", 1);
    const fs::path out = fresh_dir("map_out");
    ASSERT_EQ(run("congestion-map --data " + shared_data().string() +
                  " --model " + model + " --hour 220 --hour 210 --out " +
                  out.string()),
              0);
    const std::string csv = slurp(out / "congestion_map.csv");
    EXPECT_EQ(line_count(csv), 1u + 2u * 6u * 8u);
    std::stringstream ss(csv);
    std::string line;
    std::getline(ss, line);
    EXPECT_EQ(line, "hour,node_id,lat,lon,corridor,milepost,flow_pred");
    int prev_hour = -1;
    std::string prev_corridor;
    double prev_milepost = -1.0;
    while (std::getline(ss, line)) {
        std::stringstream row(line);
        std::string hour_s, id_s, lat_s, lon_s, corridor, mile_s;
        std::getline(row, hour_s, ',');
        std::getline(row, id_s, ',');
        std::getline(row, lat_s, ',');
        std::getline(row, lon_s, ',');
        std::getline(row, corridor, ',');
        std::getline(row, mile_s, ',');
        const int hour = std::stoi(hour_s);
        const double mile = std::stod(mile_s);
        if (hour == prev_hour && corridor == prev_corridor)
            EXPECT_GE(mile, prev_milepost) << line;
        EXPECT_GE(hour, prev_hour) << line;
        prev_hour = hour;
        prev_corridor = corridor;
        prev_milepost = mile;
    }

    EXPECT_EQ(run("congestion-map --data " + shared_data().string() +
                  " --model " + model + " --hour 9999 --out " + out.string()),
              2);
}

TEST(ExitCodes, UsageAndDataErrorsMapToTwo) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("bogus-subcommand"), 2);
    EXPECT_EQ(run("train --data /nonexistent_dir_for_test"), 2);
    EXPECT_EQ(run("train --data " + shared_data().string() + " --model nope"), 2);
}

}  // namespace
