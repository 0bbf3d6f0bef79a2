#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmmvb/blocks.hpp"
#include "mlmmvb/data.hpp"
#include "mlmmvb/elbo.hpp"
#include "mlmmvb/gating.hpp"
#include "mlmmvb/state.hpp"

namespace mlmmvb {

namespace detail {

/// Per-sweep working quantities: block precisions E[1/sigma_jl^2] per
/// component and the start-of-sweep responsibility mass. Block precisions are
/// re-read from the state after the scale updates so every update step sees
/// current values.
struct SweepCache {
    Mat einv;  // k x g
    Vec mass;  // k, responsibilities summed at sweep start

    static SweepCache from_state(const VariationalState& st) {
        SweepCache c;
        c.einv = st.alpha_e.array() / st.lambda_e.array();
        c.mass = st.component_mass();
        return c;
    }

    void refresh_einv(const VariationalState& st) {
        einv = st.alpha_e.array() / st.lambda_e.array();
    }

    Vec einv_row(int j) const { return einv.row(j).transpose(); }
};

/// Which components get their parameters and responsibilities updated this
/// sweep: not frozen by the caller and not eliminated (empty).
inline std::vector<char> active_components(const VariationalState& st, const FitConfig& cfg,
                                           const Vec& mass) {
    std::vector<char> active(st.k, 1);
    for (int j = 0; j < st.k; ++j)
        if (cfg.frozen_components.count(j) || mass(j) < kEliminationThreshold) active[j] = 0;
    return active;
}

/// Gating coordinate update: conditional mode of the bound in mu_delta,
/// warm-started at the current mode. Global, so not subject to freezing.
inline void update_gating(VariationalState& st, const GroupedDataset& data,
                          const Hyperparameters& hyper) {
    if (st.k < 2) return;
    const Eigen::Index dim = static_cast<Eigen::Index>(st.k - 1) * data.dims.d;
    GatingProblem prob;
    prob.U = data.gating_covariates();
    prob.Q = st.Q;
    prob.sigma_delta = hyper.sigma_delta_scale * Mat::Identity(dim, dim);
    prob.delta0 = st.mu_delta;
    st.mu_delta = fit_gating(prob).first;
}

/// Responsibility update q_ij ∝ p_ij exp(c_ij) in the log domain. Inactive
/// columns are held fixed; active ones share the leftover row mass.
template <typename LogitFn>
inline void update_responsibilities(VariationalState& st, const GroupedDataset& data,
                                    const std::vector<char>& active, LogitFn&& logit) {
    const int n = st.n(), k = st.k;
    for (int i = 0; i < n; ++i) {
        const Vec logp = detail::log_mixing(st.mu_delta, data.clusters[i].u, k);
        double fixed_mass = 0.0;
        double max_logit = -std::numeric_limits<double>::infinity();
        Vec logits(k);
        for (int j = 0; j < k; ++j) {
            if (!active[j]) {
                fixed_mass += st.Q(i, j);
                continue;
            }
            logits(j) = logp(j) + logit(i, j);
            max_logit = std::max(max_logit, logits(j));
        }
        const double avail = std::max(0.0, 1.0 - fixed_mass);
        double wsum = 0.0;
        for (int j = 0; j < k; ++j)
            if (active[j]) wsum += std::exp(logits(j) - max_logit);
        for (int j = 0; j < k; ++j)
            if (active[j])
                st.Q(i, j) = avail <= 0.0 ? 0.0 : avail * std::exp(logits(j) - max_logit) / wsum;
    }
}

// ---------------------------------------------------------------------------

inline void sweep_uncentered(VariationalState& st, const GroupedDataset& data,
                             const Hyperparameters& hyper, const std::vector<char>& active,
                             SweepCache& cache) {
    const Dims& dm = data.dims;
    const int n = dm.n, k = st.k, g = dm.g;
    const Mat prior_prec = spd_inverse(hyper.sigma_beta, "sigma_beta prior");

    // q(beta_j)
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        const Vec einv = cache.einv_row(j);
        Mat prec = prior_prec;
        Vec rhs = Vec::Zero(dm.p);
        for (int i = 0; i < n; ++i) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const ClusterData& c = data.clusters[i];
            const Vec scale = q * block_scales(c.kappa, einv);
            prec.noalias() += c.X.transpose() * (scale.asDiagonal() * c.X);
            const Vec r = c.y - c.W * st.mu_a[i] - c.V * st.mu_b[j];
            rhs.noalias() += c.X.transpose() * scale.cwiseProduct(r);
        }
        st.sigma_beta[j] =
            spd_inverse(prec, "beta covariance update, component " + std::to_string(j + 1));
        st.mu_beta[j] = st.sigma_beta[j] * rhs;
    }

    // q(a_i)
    for (int i = 0; i < n; ++i) {
        const ClusterData& c = data.clusters[i];
        double shrink = 0.0;
        Vec s = Vec::Zero(g);
        for (int j = 0; j < k; ++j) {
            shrink += st.Q(i, j) * st.ratio_a(j);
            s += st.Q(i, j) * cache.einv_row(j);
        }
        Mat prec = shrink * Mat::Identity(dm.s1, dm.s1);
        prec.noalias() += c.W.transpose() * (block_scales(c.kappa, s).asDiagonal() * c.W);
        Vec rhs = Vec::Zero(dm.s1);
        for (int j = 0; j < k; ++j) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const Vec scale = q * block_scales(c.kappa, cache.einv_row(j));
            const Vec r = c.y - c.X * st.mu_beta[j] - c.V * st.mu_b[j];
            rhs.noalias() += c.W.transpose() * scale.cwiseProduct(r);
        }
        st.sigma_a[i] =
            spd_inverse(prec, "cluster effect covariance update, cluster " + std::to_string(i + 1));
        st.mu_a[i] = st.sigma_a[i] * rhs;
    }

    // q(b_j)
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        const Vec einv = cache.einv_row(j);
        Mat prec = st.ratio_b(j) * Mat::Identity(dm.s2, dm.s2);
        Vec rhs = Vec::Zero(dm.s2);
        for (int i = 0; i < n; ++i) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const ClusterData& c = data.clusters[i];
            const Vec scale = q * block_scales(c.kappa, einv);
            prec.noalias() += c.V.transpose() * (scale.asDiagonal() * c.V);
            const Vec r = c.y - c.X * st.mu_beta[j] - c.W * st.mu_a[i];
            rhs.noalias() += c.V.transpose() * scale.cwiseProduct(r);
        }
        st.sigma_b[j] =
            spd_inverse(prec, "component effect covariance update, component " + std::to_string(j + 1));
        st.mu_b[j] = st.sigma_b[j] * rhs;
    }

    // conjugate shape/scale updates
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        st.alpha_a(j) = hyper.alpha_a + 0.5 * dm.s1 * cache.mass(j);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += st.Q(i, j) * (st.mu_a[i].squaredNorm() + st.sigma_a[i].trace());
        st.lambda_a(j) = hyper.lambda_a + 0.5 * acc;

        st.alpha_b(j) = hyper.alpha_b + 0.5 * dm.s2;
        st.lambda_b(j) = hyper.lambda_b + 0.5 * (st.mu_b[j].squaredNorm() + st.sigma_b[j].trace());

        Vec kappa_mass = Vec::Zero(g);
        Vec quad = Vec::Zero(g);
        for (int i = 0; i < n; ++i) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const ClusterData& c = data.clusters[i];
            const Vec xi = c.y - c.X * st.mu_beta[j] - c.W * st.mu_a[i] - c.V * st.mu_b[j];
            const Vec lam = quad_diag(c.X, st.sigma_beta[j]) + quad_diag(c.W, st.sigma_a[i]) +
                            quad_diag(c.V, st.sigma_b[j]);
            quad += q * block_sums(xi.cwiseProduct(xi) + lam, c.kappa);
            for (int l = 0; l < g; ++l) kappa_mass(l) += q * c.kappa[l];
        }
        for (int l = 0; l < g; ++l) {
            st.alpha_e(j, l) = hyper.alpha_e + 0.5 * kappa_mass(l);
            st.lambda_e(j, l) = hyper.lambda_e + 0.5 * quad(l);
        }
        st.resp_total(j) = cache.mass(j);
        st.resp_kappa.row(j) = kappa_mass.transpose();
    }
    cache.refresh_einv(st);

    update_gating(st, data, hyper);

    update_responsibilities(st, data, active, [&](int i, int j) {
        const ClusterData& c = data.clusters[i];
        const Vec einv = cache.einv_row(j);
        const Vec xi = c.y - c.X * st.mu_beta[j] - c.W * st.mu_a[i] - c.V * st.mu_b[j];
        const Vec lam = quad_diag(c.X, st.sigma_beta[j]) + quad_diag(c.W, st.sigma_a[i]) +
                        quad_diag(c.V, st.sigma_b[j]);
        double val = 0.5 * dm.s1 * (digamma(st.alpha_a(j)) - std::log(st.lambda_a(j)));
        val -= 0.5 * st.ratio_a(j) * (st.mu_a[i].squaredNorm() + st.sigma_a[i].trace());
        for (int l = 0; l < g; ++l)
            val += 0.5 * c.kappa[l] * (digamma(st.alpha_e(j, l)) - std::log(st.lambda_e(j, l)));
        val -= 0.5 * einv.dot(block_sums(xi.cwiseProduct(xi) + lam, c.kappa));
        return val;
    });
}

inline void sweep_partial(VariationalState& st, const GroupedDataset& data,
                          const Hyperparameters& hyper, const std::vector<char>& active,
                          SweepCache& cache) {
    const Dims& dm = data.dims;
    const int n = dm.n, k = st.k, g = dm.g, p = dm.p;
    const Mat prior_prec = spd_inverse(hyper.sigma_beta, "sigma_beta prior");

    // q(eta_i)
    for (int i = 0; i < n; ++i) {
        const ClusterData& c = data.clusters[i];
        double shrink = 0.0;
        Vec s = Vec::Zero(g);
        for (int j = 0; j < k; ++j) {
            shrink += st.Q(i, j) * st.ratio_a(j);
            s += st.Q(i, j) * cache.einv_row(j);
        }
        Mat prec = shrink * Mat::Identity(p, p);
        prec.noalias() += c.X.transpose() * (block_scales(c.kappa, s).asDiagonal() * c.X);
        Vec rhs = Vec::Zero(p);
        for (int j = 0; j < k; ++j) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const Vec scale = q * block_scales(c.kappa, cache.einv_row(j));
            const Vec r = c.y - c.V * st.mu_b[j];
            rhs.noalias() += q * st.ratio_a(j) * st.mu_beta[j];
            rhs.noalias() += c.X.transpose() * scale.cwiseProduct(r);
        }
        st.sigma_a[i] = spd_inverse(
            prec, "centered cluster effect covariance update, cluster " + std::to_string(i + 1));
        st.mu_a[i] = st.sigma_a[i] * rhs;
    }

    // q(beta_j)
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        const Mat prec = prior_prec + st.ratio_a(j) * cache.mass(j) * Mat::Identity(p, p);
        st.sigma_beta[j] =
            spd_inverse(prec, "beta covariance update, component " + std::to_string(j + 1));
        Vec acc = Vec::Zero(p);
        for (int i = 0; i < n; ++i) acc += st.Q(i, j) * st.mu_a[i];
        st.mu_beta[j] = st.sigma_beta[j] * (st.ratio_a(j) * acc);
    }

    // q(b_j)
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        const Vec einv = cache.einv_row(j);
        Mat prec = st.ratio_b(j) * Mat::Identity(dm.s2, dm.s2);
        Vec rhs = Vec::Zero(dm.s2);
        for (int i = 0; i < n; ++i) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const ClusterData& c = data.clusters[i];
            const Vec scale = q * block_scales(c.kappa, einv);
            prec.noalias() += c.V.transpose() * (scale.asDiagonal() * c.V);
            const Vec r = c.y - c.X * st.mu_a[i];
            rhs.noalias() += c.V.transpose() * scale.cwiseProduct(r);
        }
        st.sigma_b[j] =
            spd_inverse(prec, "component effect covariance update, component " + std::to_string(j + 1));
        st.mu_b[j] = st.sigma_b[j] * rhs;
    }

    // conjugate shape/scale updates
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        st.alpha_a(j) = hyper.alpha_a + 0.5 * p * cache.mass(j);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += st.Q(i, j) * ((st.mu_a[i] - st.mu_beta[j]).squaredNorm() +
                                 st.sigma_a[i].trace() + st.sigma_beta[j].trace());
        st.lambda_a(j) = hyper.lambda_a + 0.5 * acc;

        st.alpha_b(j) = hyper.alpha_b + 0.5 * dm.s2;
        st.lambda_b(j) = hyper.lambda_b + 0.5 * (st.mu_b[j].squaredNorm() + st.sigma_b[j].trace());

        Vec kappa_mass = Vec::Zero(g);
        Vec quad = Vec::Zero(g);
        for (int i = 0; i < n; ++i) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const ClusterData& c = data.clusters[i];
            const Vec omega = c.y - c.X * st.mu_a[i] - c.V * st.mu_b[j];
            const Vec lam = quad_diag(c.X, st.sigma_a[i]) + quad_diag(c.V, st.sigma_b[j]);
            quad += q * block_sums(omega.cwiseProduct(omega) + lam, c.kappa);
            for (int l = 0; l < g; ++l) kappa_mass(l) += q * c.kappa[l];
        }
        for (int l = 0; l < g; ++l) {
            st.alpha_e(j, l) = hyper.alpha_e + 0.5 * kappa_mass(l);
            st.lambda_e(j, l) = hyper.lambda_e + 0.5 * quad(l);
        }
        st.resp_total(j) = cache.mass(j);
        st.resp_kappa.row(j) = kappa_mass.transpose();
    }
    cache.refresh_einv(st);

    update_gating(st, data, hyper);

    update_responsibilities(st, data, active, [&](int i, int j) {
        const ClusterData& c = data.clusters[i];
        const Vec einv = cache.einv_row(j);
        const Vec omega = c.y - c.X * st.mu_a[i] - c.V * st.mu_b[j];
        const Vec lam = quad_diag(c.X, st.sigma_a[i]) + quad_diag(c.V, st.sigma_b[j]);
        double val = 0.5 * p * (digamma(st.alpha_a(j)) - std::log(st.lambda_a(j)));
        val -= 0.5 * st.ratio_a(j) * ((st.mu_a[i] - st.mu_beta[j]).squaredNorm() +
                                      st.sigma_a[i].trace() + st.sigma_beta[j].trace());
        for (int l = 0; l < g; ++l)
            val += 0.5 * c.kappa[l] * (digamma(st.alpha_e(j, l)) - std::log(st.lambda_e(j, l)));
        val -= 0.5 * einv.dot(block_sums(omega.cwiseProduct(omega) + lam, c.kappa));
        return val;
    });
}

inline void sweep_full(VariationalState& st, const GroupedDataset& data,
                       const Hyperparameters& hyper, const std::vector<char>& active,
                       SweepCache& cache) {
    const Dims& dm = data.dims;
    const int n = dm.n, k = st.k, g = dm.g, p = dm.p;
    const Mat prior_prec = spd_inverse(hyper.sigma_beta, "sigma_beta prior");

    // q(rho_i)
    for (int i = 0; i < n; ++i) {
        const ClusterData& c = data.clusters[i];
        double shrink = 0.0;
        Vec s = Vec::Zero(g);
        for (int j = 0; j < k; ++j) {
            shrink += st.Q(i, j) * st.ratio_a(j);
            s += st.Q(i, j) * cache.einv_row(j);
        }
        Mat prec = shrink * Mat::Identity(p, p);
        prec.noalias() += c.X.transpose() * (block_scales(c.kappa, s).asDiagonal() * c.X);
        Vec rhs = Vec::Zero(p);
        for (int j = 0; j < k; ++j) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const Vec scale = q * block_scales(c.kappa, cache.einv_row(j));
            rhs.noalias() += q * st.ratio_a(j) * st.mu_nu[j];
            rhs.noalias() += c.X.transpose() * scale.cwiseProduct(c.y);
        }
        st.sigma_a[i] = spd_inverse(
            prec, "centered cluster effect covariance update, cluster " + std::to_string(i + 1));
        st.mu_a[i] = st.sigma_a[i] * rhs;
    }

    // q(nu_j)
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        const double prec = st.ratio_b(j) + st.ratio_a(j) * cache.mass(j);
        if (!(prec > 0.0))
            throw NumericalError("component mean covariance update, component " +
                                 std::to_string(j + 1));
        st.sigma_nu[j] = (1.0 / prec) * Mat::Identity(p, p);
        Vec acc = Vec::Zero(p);
        for (int i = 0; i < n; ++i) acc += st.Q(i, j) * st.mu_a[i];
        st.mu_nu[j] = st.sigma_nu[j] * (st.ratio_b(j) * st.mu_beta[j] + st.ratio_a(j) * acc);
    }

    // q(beta_j)
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        const Mat prec = prior_prec + st.ratio_b(j) * Mat::Identity(p, p);
        st.sigma_beta[j] =
            spd_inverse(prec, "beta covariance update, component " + std::to_string(j + 1));
        st.mu_beta[j] = st.sigma_beta[j] * (st.ratio_b(j) * st.mu_nu[j]);
    }

    // conjugate shape/scale updates
    for (int j = 0; j < k; ++j) {
        if (!active[j]) continue;
        st.alpha_a(j) = hyper.alpha_a + 0.5 * p * cache.mass(j);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += st.Q(i, j) * ((st.mu_a[i] - st.mu_nu[j]).squaredNorm() + st.sigma_a[i].trace() +
                                 st.sigma_nu[j].trace());
        st.lambda_a(j) = hyper.lambda_a + 0.5 * acc;

        st.alpha_b(j) = hyper.alpha_b + 0.5 * p;
        st.lambda_b(j) =
            hyper.lambda_b + 0.5 * ((st.mu_nu[j] - st.mu_beta[j]).squaredNorm() +
                                    st.sigma_nu[j].trace() + st.sigma_beta[j].trace());

        Vec kappa_mass = Vec::Zero(g);
        Vec quad = Vec::Zero(g);
        for (int i = 0; i < n; ++i) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;
            const ClusterData& c = data.clusters[i];
            const Vec r = c.y - c.X * st.mu_a[i];
            const Vec lam = quad_diag(c.X, st.sigma_a[i]);
            quad += q * block_sums(r.cwiseProduct(r) + lam, c.kappa);
            for (int l = 0; l < g; ++l) kappa_mass(l) += q * c.kappa[l];
        }
        for (int l = 0; l < g; ++l) {
            st.alpha_e(j, l) = hyper.alpha_e + 0.5 * kappa_mass(l);
            st.lambda_e(j, l) = hyper.lambda_e + 0.5 * quad(l);
        }
        st.resp_total(j) = cache.mass(j);
        st.resp_kappa.row(j) = kappa_mass.transpose();
    }
    cache.refresh_einv(st);

    update_gating(st, data, hyper);

    update_responsibilities(st, data, active, [&](int i, int j) {
        const ClusterData& c = data.clusters[i];
        const Vec einv = cache.einv_row(j);
        const Vec r = c.y - c.X * st.mu_a[i];
        const Vec lam = quad_diag(c.X, st.sigma_a[i]);
        double val = 0.5 * p * (digamma(st.alpha_a(j)) - std::log(st.lambda_a(j)));
        val -= 0.5 * st.ratio_a(j) * ((st.mu_a[i] - st.mu_nu[j]).squaredNorm() +
                                      st.sigma_a[i].trace() + st.sigma_nu[j].trace());
        for (int l = 0; l < g; ++l)
            val += 0.5 * c.kappa[l] * (digamma(st.alpha_e(j, l)) - std::log(st.lambda_e(j, l)));
        val -= 0.5 * einv.dot(block_sums(r.cwiseProduct(r) + lam, c.kappa));
        return val;
    });
}

}  // namespace detail

/// One full coordinate-ascent cycle in the parametrization's listed order.
/// Frozen and eliminated components keep their parameters and Q columns.
inline void sweep_in_place(VariationalState& st, const GroupedDataset& data,
                           const Hyperparameters& hyper, const FitConfig& cfg) {
    detail::SweepCache cache = detail::SweepCache::from_state(st);
    const std::vector<char> active = detail::active_components(st, cfg, cache.mass);
    switch (st.par) {
        case Parametrization::Uncentered:
            detail::sweep_uncentered(st, data, hyper, active, cache);
            break;
        case Parametrization::PartialCentered:
            detail::sweep_partial(st, data, hyper, active, cache);
            break;
        case Parametrization::FullCentered:
            detail::sweep_full(st, data, hyper, active, cache);
            break;
    }
}

inline VariationalState sweep(const VariationalState& st, const GroupedDataset& data,
                              const Hyperparameters& hyper, const FitConfig& cfg) {
    VariationalState out = st;
    sweep_in_place(out, data, hyper, cfg);
    return out;
}

/// Repeated sweeps with the lower bound evaluated after each one. Stops on
/// relative change below tol_rel (|L_{t-1}| in the denominator), or in
/// short-run mode when the increment drops below short_run_increment.
inline FitResult fit(const VariationalState& state0, const GroupedDataset& data,
                     const Hyperparameters& hyper, const FitConfig& cfg) {
    check_parametrization(data, state0.par);
    {
        // split construction hands in sub-stochastic rows (dropped mass on the
        // split component outside its hard set); the first responsibility
        // update restores them, so only row sums above 1 are rejected here
        if (state0.Q.rows() != data.dims.n || state0.Q.cols() != state0.k)
            throw ValidationError("fit: Q must be n x k");
        if (state0.Q.minCoeff() < 0.0)
            throw ValidationError("fit: responsibilities must be nonnegative");
        for (int i = 0; i < data.dims.n; ++i) {
            const double rs = state0.Q.row(i).sum();
            if (rs > 1.0 + 1e-9 || !(rs > 0.0))
                throw ValidationError("fit: Q row " + std::to_string(i + 1) +
                                      " must have mass in (0, 1]");
        }
        if (static_cast<int>(state0.mu_beta.size()) != state0.k ||
            state0.alpha_a.size() != state0.k || state0.alpha_e.rows() != state0.k)
            throw ValidationError("fit: state arrays do not match k");
    }
    FitResult res;
    res.state = state0;
    double prev = std::numeric_limits<double>::quiet_NaN();
    for (int t = 1; t <= cfg.max_sweeps; ++t) {
        sweep_in_place(res.state, data, hyper, cfg);
        const double lb = lower_bound(res.state, data, hyper);
        res.lb_trace.push_back(lb);
        res.sweeps = t;
        if (t >= 2) {
            if (cfg.short_run) {
                if (lb - prev < cfg.short_run_increment) {
                    res.converged = true;
                    break;
                }
            } else if (std::abs(lb - prev) < cfg.tol_rel * std::abs(prev)) {
                res.converged = true;
                break;
            }
        }
        prev = lb;
    }
    return res;
}

}  // namespace mlmmvb
