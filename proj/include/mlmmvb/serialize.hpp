#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlmmvb/errors.hpp"
#include "mlmmvb/state.hpp"
#include "mlmmvb/vga.hpp"

namespace mlmmvb {

inline constexpr int kSchemaVersion = 1;

namespace detail {

using nlohmann::json;

inline json to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Vec vec_from_json(const json& a) {
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    return v;
}

inline Mat mat_from_json(const json& a, Eigen::Index cols_if_empty = 0) {
    if (a.empty()) return Mat(0, cols_if_empty);
    Mat m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(a[0].size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
    return m;
}

inline json state_to_json(const VariationalState& st) {
    json s;
    s["parametrization"] = to_string(st.par);
    s["k"] = st.k;
    auto vecs = [](const std::vector<Vec>& vs) {
        json a = json::array();
        for (const auto& v : vs) a.push_back(to_json(v));
        return a;
    };
    auto mats = [](const std::vector<Mat>& ms) {
        json a = json::array();
        for (const auto& m : ms) a.push_back(to_json(m));
        return a;
    };
    s["mu_beta"] = vecs(st.mu_beta);
    s["sigma_beta"] = mats(st.sigma_beta);
    s["mu_b"] = vecs(st.mu_b);
    s["sigma_b"] = mats(st.sigma_b);
    s["mu_nu"] = vecs(st.mu_nu);
    s["sigma_nu"] = mats(st.sigma_nu);
    s["alpha_a"] = to_json(st.alpha_a);
    s["lambda_a"] = to_json(st.lambda_a);
    s["alpha_b"] = to_json(st.alpha_b);
    s["lambda_b"] = to_json(st.lambda_b);
    s["alpha_e"] = to_json(st.alpha_e);
    s["lambda_e"] = to_json(st.lambda_e);
    s["mu_a"] = vecs(st.mu_a);
    s["sigma_a"] = mats(st.sigma_a);
    s["Q"] = to_json(st.Q);
    s["mu_delta"] = to_json(st.mu_delta);
    s["resp_total"] = to_json(st.resp_total);
    s["resp_kappa"] = to_json(st.resp_kappa);
    return s;
}

inline VariationalState state_from_json(const json& s, int d_cols) {
    VariationalState st;
    st.par = parametrization_from_string(s.at("parametrization").get<std::string>());
    st.k = s.at("k").get<int>();
    for (const auto& v : s.at("mu_beta")) st.mu_beta.push_back(vec_from_json(v));
    for (const auto& m : s.at("sigma_beta")) st.sigma_beta.push_back(mat_from_json(m));
    for (const auto& v : s.at("mu_b")) st.mu_b.push_back(vec_from_json(v));
    for (const auto& m : s.at("sigma_b")) st.sigma_b.push_back(mat_from_json(m));
    for (const auto& v : s.at("mu_nu")) st.mu_nu.push_back(vec_from_json(v));
    for (const auto& m : s.at("sigma_nu")) st.sigma_nu.push_back(mat_from_json(m));
    st.alpha_a = vec_from_json(s.at("alpha_a"));
    st.lambda_a = vec_from_json(s.at("lambda_a"));
    st.alpha_b = vec_from_json(s.at("alpha_b"));
    st.lambda_b = vec_from_json(s.at("lambda_b"));
    st.alpha_e = mat_from_json(s.at("alpha_e"));
    st.lambda_e = mat_from_json(s.at("lambda_e"));
    for (const auto& v : s.at("mu_a")) st.mu_a.push_back(vec_from_json(v));
    for (const auto& m : s.at("sigma_a")) st.sigma_a.push_back(mat_from_json(m));
    st.Q = mat_from_json(s.at("Q"));
    st.mu_delta = mat_from_json(s.at("mu_delta"), d_cols);
    st.resp_total = vec_from_json(s.at("resp_total"));
    st.resp_kappa = mat_from_json(s.at("resp_kappa"));
    return st;
}

}  // namespace detail

inline nlohmann::json fit_result_to_json(const FitResult& res, const Dims& dims) {
    using nlohmann::json;
    json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "fit_result";
    j["k"] = res.state.k;
    j["dims"] = {{"n", dims.n}, {"N", dims.N}, {"p", dims.p},  {"s1", dims.s1},
                 {"s2", dims.s2}, {"d", dims.d}, {"g", dims.g}};
    j["converged"] = res.converged;
    j["sweeps"] = res.sweeps;
    if (std::isfinite(res.log_marginal_estimate)) j["log_marginal_estimate"] = res.log_marginal_estimate;
    j["lb_trace"] = res.lb_trace;
    j["state"] = detail::state_to_json(res.state);
    if (res.gating_posterior) {
        j["gating_posterior"] = {{"mu_delta", detail::to_json(res.gating_posterior->mu_delta)},
                                 {"sigma_delta_q", detail::to_json(res.gating_posterior->sigma_delta_q)},
                                 {"converged", res.gating_posterior->converged}};
    } else {
        j["gating_posterior"] = nullptr;
    }
    return j;
}

inline FitResult fit_result_from_json(const nlohmann::json& j) {
    if (j.at("kind").get<std::string>() != "fit_result")
        throw ParseError("fit_result_from_json: wrong kind");
    if (j.at("schema_version").get<int>() != kSchemaVersion)
        throw ParseError("fit_result_from_json: unsupported schema version");
    FitResult res;
    const int d = j.at("dims").at("d").get<int>();
    res.state = detail::state_from_json(j.at("state"), d);
    res.converged = j.at("converged").get<bool>();
    res.sweeps = j.at("sweeps").get<int>();
    if (j.contains("log_marginal_estimate") && !j.at("log_marginal_estimate").is_null())
        res.log_marginal_estimate = j.at("log_marginal_estimate").get<double>();
    res.lb_trace = j.at("lb_trace").get<std::vector<double>>();
    if (j.contains("gating_posterior") && !j.at("gating_posterior").is_null()) {
        GatingPosterior post;
        post.mu_delta = detail::mat_from_json(j.at("gating_posterior").at("mu_delta"), d);
        post.sigma_delta_q = detail::mat_from_json(j.at("gating_posterior").at("sigma_delta_q"));
        post.converged = j.at("gating_posterior").at("converged").get<bool>();
        res.gating_posterior = post;
    }
    return res;
}

inline nlohmann::json vga_history_to_json(const VgaResult& res) {
    using nlohmann::json;
    json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "vga_history";
    j["k_selected"] = res.k_selected;
    j["log_marginal_per_round"] = res.log_marginal_per_round;
    json rounds = json::array();
    for (const auto& r : res.history) {
        json cands = json::array();
        for (const auto& c : r.candidates)
            cands.push_back({{"component", c.component + 1},
                             {"attained_bound", c.attained_bound},
                             {"collapsed", c.collapsed},
                             {"accepted", c.accepted}});
        rounds.push_back({{"k_before", r.k_before},
                          {"k_after", r.k_after},
                          {"accepted_splits", r.accepted_splits},
                          {"log_marginal", r.log_marginal},
                          {"candidates", std::move(cands)}});
    }
    j["rounds"] = std::move(rounds);
    return j;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << j.dump(1) << "\n";
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

}  // namespace mlmmvb
