#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmmvb/data.hpp"
#include "mlmmvb/errors.hpp"
#include "mlmmvb/gating.hpp"
#include "mlmmvb/linalg.hpp"

namespace mlmmvb {

enum class Parametrization { Uncentered, PartialCentered, FullCentered };

inline const char* to_string(Parametrization p) {
    switch (p) {
        case Parametrization::Uncentered: return "uncentered";
        case Parametrization::PartialCentered: return "partial_centered";
        case Parametrization::FullCentered: return "full_centered";
    }
    return "?";
}

inline Parametrization parametrization_from_string(const std::string& s) {
    if (s == "uncentered") return Parametrization::Uncentered;
    if (s == "partial_centered" || s == "partial") return Parametrization::PartialCentered;
    if (s == "full_centered" || s == "full") return Parametrization::FullCentered;
    throw ConfigError("unknown parametrization: " + s);
}

/// Requires X_i = W_i under partial centering and X_i = W_i = V_i under full
/// centering; checked at fit start.
inline void check_parametrization(const GroupedDataset& data, Parametrization par) {
    if (par == Parametrization::Uncentered) return;
    for (std::size_t i = 0; i < data.clusters.size(); ++i) {
        const ClusterData& c = data.clusters[i];
        const bool xw = c.X.rows() == c.W.rows() && c.X.cols() == c.W.cols() &&
                        (c.X.array() == c.W.array()).all();
        if (!xw)
            throw ValidationError("parametrization requires X_i = W_i (cluster " +
                                  std::to_string(i + 1) + ")");
        if (par == Parametrization::FullCentered) {
            const bool xv = c.X.rows() == c.V.rows() && c.X.cols() == c.V.cols() &&
                            (c.X.array() == c.V.array()).all();
            if (!xv)
                throw ValidationError("full centering requires X_i = V_i (cluster " +
                                      std::to_string(i + 1) + ")");
        }
    }
}

/// All variational parameters for one parametrization.
///
/// Under PartialCentered the (mu_a, sigma_a) slots hold the eta_i factors and
/// under FullCentered they hold the rho_i factors; mu_nu/sigma_nu exist only
/// under FullCentered, where the b-slots are unused.
struct VariationalState {
    Parametrization par = Parametrization::Uncentered;
    int k = 1;

    // per component j
    std::vector<Vec> mu_beta;
    std::vector<Mat> sigma_beta;
    std::vector<Vec> mu_b;
    std::vector<Mat> sigma_b;
    std::vector<Vec> mu_nu;
    std::vector<Mat> sigma_nu;
    Vec alpha_a, lambda_a;
    Vec alpha_b, lambda_b;
    Mat alpha_e, lambda_e;  // k x g

    // per cluster i
    std::vector<Vec> mu_a;
    std::vector<Mat> sigma_a;

    Mat Q;         // n x k responsibilities
    Mat mu_delta;  // (k-1) x d gating mode

    // responsibility totals captured when the conjugate shape updates ran,
    // so the step-7/9/11 identities can be checked exactly afterwards
    Vec resp_total;   // k
    Mat resp_kappa;   // k x g

    int n() const { return static_cast<int>(Q.rows()); }

    /// Random-effect dimension of the per-cluster factors (s1, or p when centered).
    int dim_a() const { return mu_a.empty() ? 0 : static_cast<int>(mu_a.front().size()); }

    double ratio_a(int j) const { return alpha_a(j) / lambda_a(j); }
    double ratio_b(int j) const { return alpha_b(j) / lambda_b(j); }
    double ratio_e(int j, int l) const { return alpha_e(j, l) / lambda_e(j, l); }

    /// Total responsibility per component under the current Q.
    Vec component_mass() const { return Q.colwise().sum(); }
};

/// Components with total responsibility below this are treated as eliminated:
/// their updates are skipped so scale parameters cannot degenerate.
inline constexpr double kEliminationThreshold = 1e-6;

struct FitConfig {
    double tol_rel = 1e-5;
    int max_sweeps = 2000;
    std::set<int> frozen_components;
    double short_run_increment = 1.0;
    bool short_run = false;
    std::uint64_t seed = 0;
};

struct FitResult {
    VariationalState state;
    std::vector<double> lb_trace;
    bool converged = false;
    double log_marginal_estimate = std::numeric_limits<double>::quiet_NaN();
    int sweeps = 0;
    std::optional<GatingPosterior> gating_posterior;

    double last_bound() const {
        return lb_trace.empty() ? -std::numeric_limits<double>::infinity() : lb_trace.back();
    }
};

/// The paper-prescribed one-component initialization for each parametrization.
/// Only precision ratios are pinned there; shapes are stored at their conjugate
/// values with scales matching the ratio. k > 1 cold starts are not a thing:
/// multi-component states only ever arise from greedy split construction.
inline VariationalState default_init(const GroupedDataset& data, const Hyperparameters& hyper,
                                     int k, Parametrization par, std::uint64_t /*seed*/ = 0) {
    if (k != 1)
        throw std::invalid_argument(
            "default_init: k > 1 has no cold start; multi-component states come from splits");
    check_parametrization(data, par);
    const Dims& dm = data.dims;
    const int p = dm.p;
    const int s1_eff = par == Parametrization::Uncentered ? dm.s1 : p;
    const int s2_eff = par == Parametrization::FullCentered ? p : dm.s2;

    double ra = 1.0, rb = 1.0, re = 1.0;
    if (par == Parametrization::PartialCentered) {
        ra = 0.1;
        rb = 1.0;
        re = 1.0;
    } else if (par == Parametrization::FullCentered) {
        ra = 0.1;
        rb = 0.01;
        re = 10.0;
    }

    VariationalState st;
    st.par = par;
    st.k = 1;
    st.mu_beta.assign(1, Vec::Zero(p));
    st.sigma_beta.assign(1, hyper.sigma_beta);
    st.mu_b.assign(1, Vec::Zero(s2_eff));
    st.sigma_b.assign(1, Mat::Identity(s2_eff, s2_eff));
    if (par == Parametrization::FullCentered) {
        st.mu_nu.assign(1, Vec::Zero(p));
        st.sigma_nu.assign(1, Mat::Identity(p, p));
    }
    st.Q = Mat::Ones(dm.n, 1);
    st.mu_delta = Mat::Zero(0, dm.d);

    st.resp_total = Vec::Constant(1, static_cast<double>(dm.n));
    st.resp_kappa = Mat::Zero(1, dm.g);
    for (const auto& c : data.clusters)
        for (int l = 0; l < dm.g; ++l) st.resp_kappa(0, l) += c.kappa[l];

    st.alpha_a = Vec::Constant(1, hyper.alpha_a + 0.5 * s1_eff * st.resp_total(0));
    st.lambda_a = st.alpha_a / ra;
    st.alpha_b = Vec::Constant(1, hyper.alpha_b + 0.5 * s2_eff);
    st.lambda_b = st.alpha_b / rb;
    st.alpha_e = Mat(1, dm.g);
    for (int l = 0; l < dm.g; ++l) st.alpha_e(0, l) = hyper.alpha_e + 0.5 * st.resp_kappa(0, l);
    st.lambda_e = st.alpha_e / re;

    st.mu_a.assign(dm.n, Vec::Zero(s1_eff));
    st.sigma_a.assign(dm.n, Mat::Identity(s1_eff, s1_eff));
    return st;
}

/// Structural validity check used by tests and by fit() preconditions.
inline std::vector<std::string> validate_state(const VariationalState& st,
                                               const GroupedDataset& data) {
    std::vector<std::string> out;
    const Dims& dm = data.dims;
    const int k = st.k;
    if (st.Q.rows() != dm.n || st.Q.cols() != k) out.push_back("Q must be n x k");
    else {
        for (int i = 0; i < dm.n; ++i) {
            const double rs = st.Q.row(i).sum();
            if (std::abs(rs - 1.0) > 1e-12) {
                out.push_back("Q row " + std::to_string(i + 1) + " does not sum to 1");
                break;
            }
        }
        if (st.Q.minCoeff() < -0.0 || st.Q.maxCoeff() > 1.0 + 1e-12)
            out.push_back("Q entries must lie in [0,1]");
    }
    if (static_cast<int>(st.mu_beta.size()) != k) out.push_back("mu_beta must have k entries");
    if (st.mu_delta.rows() != k - 1 || st.mu_delta.cols() != dm.d)
        out.push_back("mu_delta must be (k-1) x d");
    if (st.alpha_a.size() != k || st.lambda_a.size() != k || st.alpha_b.size() != k ||
        st.lambda_b.size() != k)
        out.push_back("per-component shape/scale vectors must have length k");
    else if (st.alpha_a.minCoeff() <= 0 || st.lambda_a.minCoeff() <= 0 ||
             st.alpha_b.minCoeff() <= 0 || st.lambda_b.minCoeff() <= 0)
        out.push_back("alpha/lambda parameters must be strictly positive");
    if (st.alpha_e.rows() != k || st.alpha_e.cols() != dm.g) out.push_back("alpha_e must be k x g");
    else if (st.alpha_e.minCoeff() <= 0 || st.lambda_e.minCoeff() <= 0)
        out.push_back("error-block alpha/lambda must be strictly positive");
    return out;
}

}  // namespace mlmmvb
