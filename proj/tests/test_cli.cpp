#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mlmmvb;

namespace {

const std::string kCli = MLMMVB_CLI_PATH;

struct RunOut {
    int code = 0;
    std::string out;
};

RunOut run(const std::string& args) {
    const fs::path tmp = fs::temp_directory_path() / "mlmmvb_cli_out.txt";
    const std::string cmd = kCli + " " + args + " > " + tmp.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunOut r;
    r.code = WEXITSTATUS(raw);
    std::ifstream in(tmp);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("mlmmvb_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_toy_config(const fs::path& dir, const fs::path& data_dir, int k = 1) {
    json cfg;
    cfg["seed"] = 5;
    cfg["data"] = {{"csv", (data_dir / "dataset.csv").string()},
                   {"clusters_csv", (data_dir / "clusters.csv").string()},
                   {"p", 2},  {"s1", 1}, {"s2", 6}, {"d", 1}, {"g", 1}};
    cfg["hyper"] = {{"preset", "default"}};
    cfg["fit"] = {{"parametrization", "uncentered"}, {"k", k}};
    cfg["vga"] = {{"M", 3}, {"max_rounds", 6}};
    std::ofstream out(dir / "config.json");
    out << cfg.dump(1);
}

}  // namespace

TEST_CASE("simulate emits a loadable, deterministic dataset") {
    const auto d1 = fresh_dir("sim1");
    const auto d2 = fresh_dir("sim2");
    json cfg;
    cfg["seed"] = 9;
    cfg["simulate"] = {{"preset", "one-component-toy"}};
    std::ofstream(d1 / "c.json") << cfg.dump();
    std::ofstream(d2 / "c.json") << cfg.dump();
    REQUIRE(run("simulate --config " + (d1 / "c.json").string() + " --out " + d1.string()).code == 0);
    REQUIRE(run("simulate --config " + (d2 / "c.json").string() + " --out " + d2.string()).code == 0);
    REQUIRE(fs::exists(d1 / "dataset.csv"));
    REQUIRE(fs::exists(d1 / "clusters.csv"));
    REQUIRE(fs::exists(d1 / "labels.csv"));
    REQUIRE(slurp(d1 / "dataset.csv") == slurp(d2 / "dataset.csv"));
    REQUIRE(slurp(d1 / "labels.csv") == slurp(d2 / "labels.csv"));
}

TEST_CASE("zero-variance simulation returns exactly the fixed-effect curve") {
    const auto dir = fresh_dir("simzero");
    json cfg;
    cfg["seed"] = 4;
    cfg["simulate"] = {{"preset", "one-component-toy"}, {"zero_variance", true}, {"n", 5}};
    std::ofstream(dir / "c.json") << cfg.dump();
    REQUIRE(run("simulate --config " + (dir / "c.json").string() + " --out " + dir.string()).code == 0);
    CsvSchema schema;
    schema.p = 2;
    schema.s1 = 1;
    schema.s2 = 6;
    const GroupedDataset data = load_dataset((dir / "dataset.csv").string(),
                                             (dir / "clusters.csv").string(), schema);
    const json truth = read_json((dir / "truth.json").string());
    Vec beta(2);
    beta << truth["beta"][0][0].get<double>(), truth["beta"][0][1].get<double>();
    for (const auto& c : data.clusters)
        REQUIRE((c.y - c.X * beta).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit subcommand produces deterministic results and sane exit codes") {
    const auto dir = fresh_dir("fit");
    json sim;
    sim["seed"] = 5;
    sim["simulate"] = {{"preset", "one-component-toy"}};
    std::ofstream(dir / "sim.json") << sim.dump();
    REQUIRE(run("simulate --config " + (dir / "sim.json").string() + " --out " + dir.string()).code == 0);
    write_toy_config(dir, dir);

    const auto r1 = run("fit --config " + (dir / "config.json").string() + " --out " + dir.string());
    REQUIRE(r1.code == 0);
    REQUIRE(fs::exists(dir / "result.json"));
    REQUIRE(fs::exists(dir / "lb_trace.csv"));
    REQUIRE(fs::exists(dir / "summary.csv"));
    const std::string first = slurp(dir / "result.json");
    const json res = json::parse(first);
    REQUIRE(res["converged"].get<bool>());
    REQUIRE(res["schema_version"].get<int>() == 1);

    REQUIRE(run("fit --config " + (dir / "config.json").string() + " --out " + dir.string()).code == 0);
    REQUIRE(slurp(dir / "result.json") == first);

    SECTION("malformed CSV maps to the parse exit code and names the line") {
        std::ofstream bad(dir / "dataset.csv", std::ios::app);
        bad << "1,zz,1,1,1,1,1,1,1,1\n";
        bad.close();
        const auto r = run("fit --config " + (dir / "config.json").string() + " --out " + dir.string());
        REQUIRE(r.code == 3);
        REQUIRE(r.out.find("dataset.csv:") != std::string::npos);
    }
    SECTION("bad tolerance maps to the config exit code") {
        json cfg = json::parse(slurp(dir / "config.json"));
        cfg["fit"]["tol_rel"] = -1.0;
        std::ofstream(dir / "bad.json") << cfg.dump();
        REQUIRE(run("fit --config " + (dir / "bad.json").string() + " --out " + dir.string()).code == 2);
    }
    SECTION("k > 1 without a warm start is a config error") {
        json cfg = json::parse(slurp(dir / "config.json"));
        cfg["fit"]["k"] = 2;
        std::ofstream(dir / "k2.json") << cfg.dump();
        REQUIRE(run("fit --config " + (dir / "k2.json").string() + " --out " + dir.string()).code == 2);
    }
}

TEST_CASE("warm start round trip drives a k=2 refit") {
    const auto dir = fresh_dir("warm");
    // two-group data via the library, written as CSV
    TrueParameters truth;
    truth.k = 2;
    Vec b1(2), b2(2);
    b1 << 2.0, 0.0;
    b2 << -2.0, 1.0;
    truth.beta = {b1, b2};
    truth.sigma_a2 = {0.05, 0.05};
    truth.sigma_b2 = {0.02, 0.02};
    truth.sigma_e2 = {{0.1}, {0.1}};
    truth.delta = Mat::Zero(1, 1);
    Rng rng(21);
    std::vector<ClusterDesign> designs;
    for (int i = 0; i < 30; ++i) {
        ClusterDesign de;
        de.X = Mat::NullaryExpr(6, 2, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
        de.W = Mat::Ones(6, 1);
        de.V = Mat::Identity(6, 6);
        de.u = Vec::Ones(1);
        de.kappa = {6};
        designs.push_back(de);
    }
    auto [data, labels] = simulate_dataset(truth, designs, 21);
    write_dataset(data, (dir / "dataset.csv").string(), (dir / "clusters.csv").string());

    json cfg;
    cfg["seed"] = 21;
    cfg["data"] = {{"csv", (dir / "dataset.csv").string()},
                   {"clusters_csv", (dir / "clusters.csv").string()},
                   {"p", 2},  {"s1", 1}, {"s2", 6}, {"d", 1}, {"g", 1}};
    cfg["vga"] = {{"M", 3}};
    std::ofstream(dir / "vga.json") << cfg.dump();
    REQUIRE(run("vga --config " + (dir / "vga.json").string() + " --out " + dir.string()).code == 0);
    const json hist = json::parse(slurp(dir / "history.json"));
    REQUIRE(hist["k_selected"].get<int>() == 2);

    cfg["fit"] = {{"k", 2}, {"warm_start", (dir / "result.json").string()}};
    std::ofstream(dir / "refit.json") << cfg.dump();
    const auto refit_dir = fresh_dir("warm_refit");
    REQUIRE(run("fit --config " + (dir / "refit.json").string() + " --out " + refit_dir.string()).code == 0);
    const json res = json::parse(slurp(refit_dir / "result.json"));
    REQUIRE(res["k"].get<int>() == 2);
}

TEST_CASE("vga subcommand on one-component data selects k = 1") {
    const auto dir = fresh_dir("vgak1");
    json sim;
    sim["seed"] = 6;
    sim["simulate"] = {{"preset", "one-component-toy"}};
    std::ofstream(dir / "sim.json") << sim.dump();
    REQUIRE(run("simulate --config " + (dir / "sim.json").string() + " --out " + dir.string()).code == 0);
    write_toy_config(dir, dir);
    json cfg = json::parse(slurp(dir / "config.json"));
    cfg["vga"]["enable_merge_suggestions"] = true;
    std::ofstream(dir / "config.json") << cfg.dump();
    const auto r = run("vga --config " + (dir / "config.json").string() + " --out " + dir.string());
    REQUIRE(r.code == 0);
    const json hist = json::parse(slurp(dir / "history.json"));
    REQUIRE(hist["k_selected"].get<int>() == 1);
    REQUIRE(fs::exists(dir / "merge_suggestions.csv"));
}

TEST_CASE("ari subcommand reference values") {
    const auto dir = fresh_dir("ari");
    {
        std::ofstream a(dir / "a.csv"), b(dir / "b.csv"), c(dir / "c.csv");
        a << "cluster_id,label\n1,1\n2,1\n3,2\n";
        b << "cluster_id,label\n1,2\n2,2\n3,1\n";  // permuted labels
        c << "cluster_id,label\n1,1\n2,2\n3,2\n";  // the -0.5 case
    }
    auto value = [&](const std::string& x, const std::string& y) {
        const auto r = run("ari --a " + (dir / x).string() + " --b " + (dir / y).string());
        REQUIRE(r.code == 0);
        return std::stod(r.out);
    };
    REQUIRE(value("a.csv", "a.csv") == 1.0);
    REQUIRE(value("a.csv", "b.csv") == 1.0);
    REQUIRE(value("a.csv", "c.csv") == -0.5);
}

TEST_CASE("rates subcommand writes the grid and the theorem report") {
    const auto dir = fresh_dir("rates");
    json cfg;
    cfg["seed"] = 2;
    cfg["rates"] = {{"targets", 12}};
    std::ofstream(dir / "c.json") << cfg.dump();
    const auto r = run("rates --config " + (dir / "c.json").string() + " --out " + dir.string());
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("12/12") != std::string::npos);
    REQUIRE(fs::exists(dir / "rates.csv"));
    REQUIRE(fs::exists(dir / "theorem_check.csv"));
    // centered column must undercut the uncentered one on the ratio >= 10 rows
    std::ifstream in(dir / "rates.csv");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("variance_ratio", 0) == 0) continue;
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        const double ratio = std::stod(line.substr(0, c1));
        const double unc = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        const double cen = std::stod(line.substr(c2 + 1));
        if (ratio >= 10.0) REQUIRE(cen < unc);
    }
}
