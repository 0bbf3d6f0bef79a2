// Command-line frontend: simulate / fit / vga / rates / ari over JSON run
// configs, with tidy CSV and versioned JSON outputs.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlmmvb/mlmmvb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mlmmvb;

namespace {

enum ExitCode : int {
    kOk = 0,
    kGeneric = 1,
    kConfig = 2,
    kParse = 3,
    kIngest = 4,
    kFit = 5,
    kNumeric = 6,
};

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed_override;
    int threads = 1;
};

json load_config(const CommonOpts& opts) {
    if (opts.config_path.empty()) return json::object();
    json cfg = read_json(opts.config_path);
    if (!cfg.is_object()) throw ConfigError(opts.config_path + ": config must be a JSON object");
    return cfg;
}

std::uint64_t config_seed(const json& cfg, const CommonOpts& opts) {
    if (opts.seed_override) return *opts.seed_override;
    return cfg.value("seed", 0ULL);
}

std::string out_path(const CommonOpts& opts, const std::string& name) {
    fs::create_directories(opts.out_dir);
    return (fs::path(opts.out_dir) / name).string();
}

CsvSchema schema_from_config(const json& data_cfg) {
    CsvSchema s;
    s.p = data_cfg.value("p", 1);
    s.s1 = data_cfg.value("s1", 1);
    s.s2 = data_cfg.value("s2", 1);
    s.d = data_cfg.value("d", 1);
    s.g = data_cfg.value("g", 1);
    s.x_mode = design_mode_from_string(data_cfg.value("x_mode", std::string("columns")));
    s.w_mode = design_mode_from_string(data_cfg.value("w_mode", std::string("columns")));
    s.v_mode = design_mode_from_string(data_cfg.value("v_mode", std::string("columns")));
    s.rows_per_cluster = data_cfg.value("rows_per_cluster", 0);
    const std::string na = data_cfg.value("na", std::string("drop"));
    if (na != "drop" && na != "error") throw ConfigError("data.na must be 'drop' or 'error'");
    s.na_error = na == "error";
    return s;
}

GroupedDataset dataset_from_config(const json& cfg) {
    if (!cfg.contains("data")) throw ConfigError("config needs a 'data' section");
    const json& dc = cfg.at("data");
    if (!dc.contains("csv")) throw ConfigError("data.csv path missing");
    const std::string csv = dc.at("csv").get<std::string>();
    std::string clusters = dc.value("clusters_csv", std::string());
    if (clusters.empty()) clusters = (fs::path(csv).parent_path() / "clusters.csv").string();
    return load_dataset(csv, clusters, schema_from_config(dc));
}

Hyperparameters hyper_from_config(const json& cfg, int p) {
    json hc = cfg.value("hyper", json::object());
    Hyperparameters h = hyper_preset(hc.value("preset", std::string("default")), p);
    if (hc.contains("sigma_beta_scale"))
        h.sigma_beta = hc.at("sigma_beta_scale").get<double>() * Mat::Identity(p, p);
    if (hc.contains("sigma_delta_scale")) h.sigma_delta_scale = hc.at("sigma_delta_scale").get<double>();
    for (auto [key, field] : {std::pair{"alpha_a", &h.alpha_a}, {"lambda_a", &h.lambda_a},
                              {"alpha_b", &h.alpha_b}, {"lambda_b", &h.lambda_b},
                              {"alpha_e", &h.alpha_e}, {"lambda_e", &h.lambda_e}})
        if (hc.contains(key)) *field = hc.at(key).get<double>();
    const auto bad = h.validate(p);
    if (!bad.empty()) throw ConfigError("hyperparameters invalid: " + bad.front());
    return h;
}

void write_lb_trace(const std::vector<double>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << "# schema_version 1\n";
    out << "sweep,lower_bound\n";
    for (std::size_t t = 0; t < trace.size(); ++t) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", trace[t]);
        out << (t + 1) << "," << buf << "\n";
    }
}

void write_summary(const FitResult& res, const GroupedDataset& data, const std::string& path) {
    const FitSummary s = summarize_fit(res, data);
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    out << "# schema_version 1\n";
    out << "series,cluster_id,component,index,value\n";
    for (int j = 0; j < res.state.k; ++j) {
        out << "component_size,," << (j + 1) << ",," << s.component_size[j] << "\n";
        out << "component_mass,," << (j + 1) << ",," << num(s.component_mass[j]) << "\n";
    }
    for (int i = 0; i < data.dims.n; ++i) {
        const std::string& id = data.clusters[i].id;
        out << "label," << id << "," << s.labels[i] << ",,\n";
        out << "entropy," << id << ",,," << num(s.responsibility_entropy[i]) << "\n";
        for (int j = 0; j < res.state.k; ++j)
            out << "gating," << id << "," << (j + 1) << ",," << num(s.gating_probs(i, j)) << "\n";
        for (Eigen::Index t = 0; t < s.fitted_curve[i].size(); ++t)
            out << "fitted," << id << "," << s.labels[i] << "," << (t + 1) << ","
                << num(s.fitted_curve[i](t)) << "\n";
    }
}

void write_assignments(const FitResult& res, const GroupedDataset& data, const std::string& path) {
    std::vector<std::string> ids;
    for (const auto& c : data.clusters) ids.push_back(c.id);
    write_labels(ids, hard_assignments(res.state.Q), path);
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    const json sc = cfg.value("simulate", json::object());
    SimulationPreset preset = simulation_preset(sc.value("preset", std::string("one-component-toy")));
    if (sc.value("zero_variance", false)) {
        for (int j = 0; j < preset.truth.k; ++j) {
            preset.truth.sigma_a2[j] = 0.0;
            preset.truth.sigma_b2[j] = 0.0;
            for (auto& v : preset.truth.sigma_e2[j]) v = 0.0;
        }
    }
    if (sc.contains("n")) {
        const int n = sc.at("n").get<int>();
        if (n < 1) throw ConfigError("simulate.n must be positive");
        preset.designs.assign(n, preset.designs.front());
    }
    const std::uint64_t seed = config_seed(cfg, opts);
    auto [data, labels] = simulate_dataset(preset.truth, preset.designs, seed);

    write_dataset(data, out_path(opts, "dataset.csv"), out_path(opts, "clusters.csv"));
    std::vector<std::string> ids;
    for (const auto& c : data.clusters) ids.push_back(c.id);
    write_labels(ids, labels, out_path(opts, "labels.csv"));

    json truth;
    truth["schema_version"] = kSchemaVersion;
    truth["kind"] = "simulation_truth";
    truth["k"] = preset.truth.k;
    truth["seed"] = seed;
    json betas = json::array();
    for (const auto& b : preset.truth.beta) betas.push_back(std::vector<double>(b.data(), b.data() + b.size()));
    truth["beta"] = betas;
    truth["sigma_a2"] = preset.truth.sigma_a2;
    truth["sigma_b2"] = preset.truth.sigma_b2;
    truth["sigma_e2"] = preset.truth.sigma_e2;
    write_json(truth, out_path(opts, "truth.json"));
    std::cout << "simulated n=" << data.dims.n << " clusters, N=" << data.dims.N
              << " observations, k=" << preset.truth.k << "\n";
    return kOk;
}

int cmd_fit(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    const GroupedDataset data = dataset_from_config(cfg);
    const Hyperparameters hyper = hyper_from_config(cfg, data.dims.p);
    const json fc = cfg.value("fit", json::object());
    const Parametrization par =
        parametrization_from_string(fc.value("parametrization", std::string("uncentered")));
    FitConfig conf;
    conf.tol_rel = fc.value("tol_rel", 1e-5);
    conf.max_sweeps = fc.value("max_sweeps", 2000);
    conf.seed = config_seed(cfg, opts);
    if (!(conf.tol_rel > 0)) throw ConfigError("fit.tol_rel must be positive");
    if (conf.max_sweeps < 1) throw ConfigError("fit.max_sweeps must be at least 1");

    const int k = fc.value("k", 1);
    VariationalState init;
    if (k == 1) {
        init = default_init(data, hyper, 1, par, conf.seed);
    } else {
        const std::string warm = fc.value("warm_start", std::string());
        if (warm.empty())
            throw ConfigError("fit.k > 1 needs fit.warm_start (a previous result.json)");
        FitResult prev = fit_result_from_json(read_json(warm));
        if (prev.state.k != k)
            throw ConfigError("warm start has k=" + std::to_string(prev.state.k) +
                              ", config asks k=" + std::to_string(k));
        init = prev.state;
    }
    FitResult res = fit(init, data, hyper, conf);
    relax_and_score(res, data, hyper);
    write_json(fit_result_to_json(res, data.dims), out_path(opts, "result.json"));
    write_lb_trace(res.lb_trace, out_path(opts, "lb_trace.csv"));
    write_summary(res, data, out_path(opts, "summary.csv"));
    write_assignments(res, data, out_path(opts, "assignments.csv"));
    std::cout << "fit: k=" << res.state.k << " converged=" << (res.converged ? "yes" : "no")
              << " sweeps=" << res.sweeps << " log_marginal=" << res.log_marginal_estimate << "\n";
    return kOk;
}

int cmd_vga(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    const GroupedDataset data = dataset_from_config(cfg);
    const Hyperparameters hyper = hyper_from_config(cfg, data.dims.p);
    const json vc = cfg.value("vga", json::object());
    const Parametrization par =
        parametrization_from_string(vc.value("parametrization", std::string("uncentered")));
    VgaConfig conf;
    conf.M = vc.value("M", 5);
    conf.short_run_increment = vc.value("short_run_increment", 1.0);
    conf.tol_rel = vc.value("tol_rel", 1e-5);
    conf.min_subset = vc.value("min_subset", 1);
    conf.enable_merge_suggestions = vc.value("enable_merge_suggestions", false);
    conf.unsplittable_memory = vc.value("unsplittable_memory", true);
    conf.max_rounds = vc.value("max_rounds", 60);
    conf.max_sweeps = vc.value("max_sweeps", 2000);
    conf.seed = config_seed(cfg, opts);
    if (conf.M < 1) throw ConfigError("vga.M must be at least 1");
    if (!(conf.tol_rel > 0)) throw ConfigError("vga.tol_rel must be positive");

    VgaResult res = run_vga(data, hyper, par, conf);
    write_json(fit_result_to_json(res.final, data.dims), out_path(opts, "result.json"));
    write_json(vga_history_to_json(res), out_path(opts, "history.json"));
    write_lb_trace(res.final.lb_trace, out_path(opts, "lb_trace.csv"));
    write_summary(res.final, data, out_path(opts, "summary.csv"));
    write_assignments(res.final, data, out_path(opts, "assignments.csv"));
    if (conf.enable_merge_suggestions) {
        std::ofstream out(out_path(opts, "merge_suggestions.csv"));
        out << "# schema_version 1\n";
        out << "component_a,component_b,overlap\n";
        for (const auto& s : merge_suggestions(res.final)) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", s.overlap);
            out << (s.a + 1) << "," << (s.b + 1) << "," << buf << "\n";
        }
    }
    std::cout << "vga: k_selected=" << res.k_selected
              << " rounds=" << res.history.size()
              << " log_marginal=" << res.final.log_marginal_estimate << "\n";
    return kOk;
}

int cmd_rates(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    const json rc = cfg.value("rates", json::object());
    const std::uint64_t seed = config_seed(cfg, opts);
    const int count = rc.value("targets", 200);

    // randomized equality suite, fanned out across threads deterministically
    std::vector<TheoremCheck> checks(count);
    const int threads = std::max(1, opts.threads);
    std::vector<std::future<void>> futs;
    std::atomic<int> next{0};
    for (int w = 0; w < threads; ++w)
        futs.push_back(std::async(std::launch::async, [&]() {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                Rng rng = Rng::derive(seed, {0x7A46E75ULL, static_cast<std::uint64_t>(i)});
                const GaussianTarget t = random_target(rng);
                TheoremCheck c;
                c.index = i;
                c.p = t.p();
                c.r = t.r();
                c.m = static_cast<int>(t.theta_partition.size());
                c.analytic = blocked_rate(t);
                c.empirical = measured_rate(t, rng);
                c.abs_diff = std::abs(c.analytic - c.empirical);
                checks[i] = c;
            }
        }));
    for (auto& f : futs) f.get();

    int pass = 0;
    {
        std::ofstream out(out_path(opts, "theorem_check.csv"));
        out << "# schema_version 1\n";
        out << "target,p,r,m,analytic_rate,empirical_rate,abs_diff,pass\n";
        for (const auto& c : checks) {
            const bool ok = c.abs_diff < 1e-6;
            pass += ok;
            char a[40], e[40], d[40];
            std::snprintf(a, sizeof(a), "%.17g", c.analytic);
            std::snprintf(e, sizeof(e), "%.17g", c.empirical);
            std::snprintf(d, sizeof(d), "%.3e", c.abs_diff);
            out << c.index << "," << c.p << "," << c.r << "," << c.m << "," << a << "," << e << ","
                << d << "," << (ok ? 1 : 0) << "\n";
        }
    }

    // bivariate analytic case: correlation rho gives rate rho^2
    const double rho = rc.value("bivariate_rho", 0.6);
    double bivariate_rate = 0.0;
    {
        GaussianTarget t;
        t.mu1 = Vec::Zero(1);
        t.mu2 = Vec::Zero(1);
        Mat sigma(2, 2);
        sigma << 1.0, rho, rho, 1.0;
        t.H = sigma.inverse();
        t.theta_partition = {1};
        bivariate_rate = blocked_rate(t);
    }

    // centering grid
    std::vector<double> grid = rc.value("grid", std::vector<double>{0.1, 1.0, 10.0, 100.0});
    const int n_clusters = rc.value("lmm_clusters", 8);
    Rng xrng = Rng::derive(seed, {0x4C4D4DULL});
    const int t_points = rc.value("lmm_points", 6);
    const int p = rc.value("lmm_p", 2);
    Mat X = Mat::NullaryExpr(t_points, p, [&](Eigen::Index, Eigen::Index) { return xrng.normal(); });
    {
        std::ofstream out(out_path(opts, "rates.csv"));
        out << "# schema_version 1\n";
        out << "variance_ratio,uncentered_rate,centered_rate\n";
        for (double ratio : grid) {
            LmmRatesSpec spec;
            spec.n_clusters = n_clusters;
            spec.X = X;
            spec.sigma_e2 = 1.0;
            spec.sigma_a2 = ratio;
            spec.sigma_b2 = ratio;
            const CenteringRateReport rep = centering_rate_comparison(spec);
            char u[40], ce[40];
            std::snprintf(u, sizeof(u), "%.12g", rep.uncentered_rate);
            std::snprintf(ce, sizeof(ce), "%.12g", rep.centered_rate);
            out << ratio << "," << u << "," << ce << "\n";
        }
    }
    std::printf("theorem_check: %d/%d targets within 1e-6\n", pass, count);
    std::printf("bivariate rho=%.3f: blocked rate %.12f (rho^2 = %.12f)\n", rho, bivariate_rate,
                rho * rho);
    return pass == count ? kOk : kNumeric;
}

int cmd_ari(const CommonOpts& opts, const std::string& path_a, const std::string& path_b) {
    const Partition a = Partition::from_labels(load_labels(path_a));
    const Partition b = Partition::from_labels(load_labels(path_b));
    if (a.labels.size() != b.labels.size())
        throw ValidationError("label files have different lengths");
    std::printf("%.12f\n", adjusted_rand_index(a, b));
    return kOk;
}

template <typename F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kParse;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kIngest;
    } catch (const FitError& e) {
        std::cerr << "fit error: " << e.what() << "\n";
        return kFit;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kGeneric;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variational mixtures of linear mixed models"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::uint64_t seed_flag = 0;
    bool seed_set = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON run configuration");
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--seed", seed_flag, "seed override")->each([&](const std::string&) {
            seed_set = true;
        });
        sub->add_option("--threads", opts.threads, "internal worker cap");
    };

    CLI::App* fit_cmd = app.add_subcommand("fit", "fit a fixed-size mixture");
    add_common(fit_cmd);
    CLI::App* vga_cmd = app.add_subcommand("vga", "greedy split search over the component count");
    add_common(vga_cmd);
    CLI::App* sim_cmd = app.add_subcommand("simulate", "draw a dataset from a generative preset");
    add_common(sim_cmd);
    CLI::App* rates_cmd = app.add_subcommand("rates", "convergence-rate verification and centering grid");
    add_common(rates_cmd);
    CLI::App* ari_cmd = app.add_subcommand("ari", "adjusted Rand index of two label files");
    add_common(ari_cmd);
    std::string labels_a, labels_b;
    ari_cmd->add_option("--a", labels_a, "first label file")->required();
    ari_cmd->add_option("--b", labels_b, "second label file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }
    if (seed_set) opts.seed_override = seed_flag;

    if (fit_cmd->parsed()) return guarded([&] { return cmd_fit(opts); });
    if (vga_cmd->parsed()) return guarded([&] { return cmd_vga(opts); });
    if (sim_cmd->parsed()) return guarded([&] { return cmd_simulate(opts); });
    if (rates_cmd->parsed()) return guarded([&] { return cmd_rates(opts); });
    if (ari_cmd->parsed()) return guarded([&] { return cmd_ari(opts, labels_a, labels_b); });
    return kConfig;
}
