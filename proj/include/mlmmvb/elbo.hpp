#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "mlmmvb/blocks.hpp"
#include "mlmmvb/data.hpp"
#include "mlmmvb/state.hpp"

namespace mlmmvb {

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// E_q log p(sigma^2) - E_q log q(sigma^2) for one inverse-gamma factor.
inline double ig_term(double alpha, double lambda, double aq, double lq) {
    const double elog = std::log(lq) - digamma(aq);  // E[log sigma^2]
    const double einv = aq / lq;                     // E[1/sigma^2]
    const double elogp = alpha * std::log(lambda) - std::lgamma(alpha) - (alpha + 1.0) * elog -
                         lambda * einv;
    const double neg_elogq = -(aq * std::log(lq) - std::lgamma(aq) - (aq + 1.0) * elog - aq);
    return elogp + neg_elogq;
}

/// Gaussian prior-plus-entropy contribution for one q(beta_j); log(2*pi) cancels.
inline double beta_term(const Vec& mu, const Mat& sigma_q, const Eigen::LLT<Mat>& prior_llt,
                        double prior_logdet) {
    const double quad = mu.dot(prior_llt.solve(mu)) + prior_llt.solve(sigma_q).trace();
    const double ent = spd_logdet(sigma_q, "lower_bound: sigma_beta_q");
    return 0.5 * (ent - prior_logdet - quad) + 0.5 * static_cast<double>(mu.size());
}

/// Log gating probabilities for one cluster at the point-mass delta.
inline Vec log_mixing(const Mat& delta, const Vec& u, int k) {
    Vec logits(k);
    logits(0) = 0.0;
    for (int j = 1; j < k; ++j) logits(j) = delta.row(j - 1).dot(u);
    return logits.array() - log_sum_exp(logits);
}

inline double log_delta_prior(const Mat& mu_delta, double scale) {
    const Eigen::Index dim = mu_delta.size();
    if (dim == 0) return 0.0;
    const double quad = mu_delta.squaredNorm() / scale;
    return -0.5 * static_cast<double>(dim) * (kLog2Pi + std::log(scale)) - 0.5 * quad;
}

}  // namespace detail

/// Exact closed-form variational lower bound for the given parametrization.
/// q(delta) is the point mass at mu_delta: its prior enters as log p(mu_delta)
/// and its entropy as zero. Terms with q_ij = 0 contribute 0.
inline double lower_bound(const VariationalState& st, const GroupedDataset& data,
                          const Hyperparameters& hyper) {
    const Dims& dm = data.dims;
    const int k = st.k;
    const int n = dm.n;
    const Parametrization par = st.par;

    const auto prior_llt = spd_llt(hyper.sigma_beta, "lower_bound: sigma_beta prior");
    const double prior_logdet = logdet_from_llt(prior_llt);

    const int s2_eff = par == Parametrization::FullCentered ? dm.p : dm.s2;
    const int s1_eff = st.dim_a();

    double lb = 0.0;

    // component-level terms
    for (int j = 0; j < k; ++j) {
        lb += detail::ig_term(hyper.alpha_a, hyper.lambda_a, st.alpha_a(j), st.lambda_a(j));
        lb += detail::ig_term(hyper.alpha_b, hyper.lambda_b, st.alpha_b(j), st.lambda_b(j));
        for (int l = 0; l < dm.g; ++l)
            lb += detail::ig_term(hyper.alpha_e, hyper.lambda_e, st.alpha_e(j, l), st.lambda_e(j, l));

        lb += detail::beta_term(st.mu_beta[j], st.sigma_beta[j], prior_llt, prior_logdet);

        const double elog_b = std::log(st.lambda_b(j)) - digamma(st.alpha_b(j));
        const double einv_b = st.ratio_b(j);
        if (par == Parametrization::FullCentered) {
            // nu_j ~ N(beta_j, sigma_b^2 I_p)
            const double dev = (st.mu_nu[j] - st.mu_beta[j]).squaredNorm() +
                               st.sigma_nu[j].trace() + st.sigma_beta[j].trace();
            lb += -0.5 * dm.p * elog_b - 0.5 * einv_b * dev +
                  0.5 * spd_logdet(st.sigma_nu[j], "lower_bound: sigma_nu") + 0.5 * dm.p;
        } else {
            // b_j ~ N(0, sigma_b^2 I_s2)
            const double dev = st.mu_b[j].squaredNorm() + st.sigma_b[j].trace();
            lb += -0.5 * s2_eff * elog_b - 0.5 * einv_b * dev +
                  0.5 * spd_logdet(st.sigma_b[j], "lower_bound: sigma_b") + 0.5 * s2_eff;
        }
    }

    // cluster-level entropies
    for (int i = 0; i < n; ++i)
        lb += 0.5 * spd_logdet(st.sigma_a[i], "lower_bound: sigma_a") + 0.5 * s1_eff;

    // data terms
    for (int i = 0; i < n; ++i) {
        const ClusterData& c = data.clusters[i];
        const Vec logp = detail::log_mixing(st.mu_delta, c.u, k);
        for (int j = 0; j < k; ++j) {
            const double q = st.Q(i, j);
            if (q <= 0.0) continue;  // 0 log 0 := 0
            const Vec einv_j = (st.alpha_e.row(j).array() / st.lambda_e.row(j).array()).transpose();
            Vec elog_e(dm.g);
            for (int l = 0; l < dm.g; ++l)
                elog_e(l) = std::log(st.lambda_e(j, l)) - digamma(st.alpha_e(j, l));

            Vec resid;
            Vec lam_diag;
            double prior_dev = 0.0;
            switch (par) {
                case Parametrization::Uncentered:
                    resid = c.y - c.X * st.mu_beta[j] - c.W * st.mu_a[i] - c.V * st.mu_b[j];
                    lam_diag = quad_diag(c.X, st.sigma_beta[j]) + quad_diag(c.W, st.sigma_a[i]) +
                               quad_diag(c.V, st.sigma_b[j]);
                    prior_dev = st.mu_a[i].squaredNorm() + st.sigma_a[i].trace();
                    break;
                case Parametrization::PartialCentered:
                    resid = c.y - c.X * st.mu_a[i] - c.V * st.mu_b[j];
                    lam_diag = quad_diag(c.X, st.sigma_a[i]) + quad_diag(c.V, st.sigma_b[j]);
                    prior_dev = (st.mu_a[i] - st.mu_beta[j]).squaredNorm() + st.sigma_a[i].trace() +
                                st.sigma_beta[j].trace();
                    break;
                case Parametrization::FullCentered:
                    resid = c.y - c.X * st.mu_a[i];
                    lam_diag = quad_diag(c.X, st.sigma_a[i]);
                    prior_dev = (st.mu_a[i] - st.mu_nu[j]).squaredNorm() + st.sigma_a[i].trace() +
                                st.sigma_nu[j].trace();
                    break;
            }
            const Vec sq = block_sums(resid.cwiseProduct(resid) + lam_diag, c.kappa);
            double term = -0.5 * einv_j.dot(sq);
            for (int l = 0; l < dm.g; ++l) term -= 0.5 * c.kappa[l] * elog_e(l);
            const double elog_a = std::log(st.lambda_a(j)) - digamma(st.alpha_a(j));
            term -= 0.5 * s1_eff * elog_a;
            term -= 0.5 * st.ratio_a(j) * prior_dev;
            term += logp(j) - std::log(q);
            lb += q * term;
        }
    }

    lb -= 0.5 * static_cast<double>(dm.N) * detail::kLog2Pi;
    lb += detail::log_delta_prior(st.mu_delta, hyper.sigma_delta_scale);
    return lb;
}

}  // namespace mlmmvb
