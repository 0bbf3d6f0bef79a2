#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "mlmmvb/errors.hpp"
#include "mlmmvb/linalg.hpp"

namespace mlmmvb {

/// Penalized multinomial problem solved in the gating step: maximise
/// sum_ij q_ij log p_ij(delta) - 1/2 delta' Sigma_delta^{-1} delta over the
/// (k-1) x d free coefficients (component 1 is the zero reference).
struct GatingProblem {
    Mat U;            // n x d covariate rows
    Mat Q;            // n x k responsibilities (row stochastic)
    Mat sigma_delta;  // (k-1)d x (k-1)d prior covariance
    Mat delta0;       // (k-1) x d initial coefficients
};

struct GatingPosterior {
    Mat mu_delta;       // (k-1) x d mode
    Mat sigma_delta_q;  // (k-1)d x (k-1)d covariance (negative inverse Hessian)
    bool converged = false;
};

/// Softmax probabilities p_j = exp(u'delta_j) / sum_l exp(u'delta_l), delta_1 = 0.
inline Vec mixing_probs(const Mat& delta, const Vec& u) { return mixing_probs_rows(delta, u); }

// delta is stored flattened component-major: (delta_2', ..., delta_k')'.
// Sigma_delta_q inherits this layout.
inline Vec flatten_delta(const Mat& delta) {
    const Eigen::Index r = delta.rows(), d = delta.cols();
    Vec out(r * d);
    for (Eigen::Index j = 0; j < r; ++j) out.segment(j * d, d) = delta.row(j).transpose();
    return out;
}

inline Mat unflatten_delta(const Vec& v, Eigen::Index rows, Eigen::Index d) {
    Mat out(rows, d);
    for (Eigen::Index j = 0; j < rows; ++j) out.row(j) = v.segment(j * d, d).transpose();
    return out;
}

inline double gating_objective(const Mat& delta, const GatingProblem& prob) {
    const int n = static_cast<int>(prob.U.rows());
    const int k = static_cast<int>(prob.Q.cols());
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        Vec logits(k);
        logits(0) = 0.0;
        for (int j = 1; j < k; ++j) logits(j) = delta.row(j - 1).dot(prob.U.row(i));
        const double lse = log_sum_exp(logits);
        for (int j = 0; j < k; ++j) value += prob.Q(i, j) * (logits(j) - lse);
    }
    if (delta.size() > 0) {
        const Vec v = flatten_delta(delta);
        const Vec sv = spd_llt(prob.sigma_delta, "gating prior covariance").solve(v);
        value -= 0.5 * v.dot(sv);
    }
    return value;
}

// Derivatives carry the row mass s_i = sum_l q_il so they stay consistent
// with the objective for sub-stochastic rows too (the greedy split search
// hands such rows through on its first sweep); s_i = 1 gives the usual
// multinomial-regression formulas.
inline Vec gating_gradient(const Mat& delta, const GatingProblem& prob) {
    const int n = static_cast<int>(prob.U.rows());
    const int k = static_cast<int>(prob.Q.cols());
    const int d = static_cast<int>(prob.U.cols());
    Vec grad = Vec::Zero((k - 1) * d);
    for (int i = 0; i < n; ++i) {
        const Vec probs = mixing_probs(delta, prob.U.row(i).transpose());
        const double mass = prob.Q.row(i).sum();
        for (int j = 1; j < k; ++j)
            grad.segment((j - 1) * d, d) +=
                (prob.Q(i, j) - mass * probs(j)) * prob.U.row(i).transpose();
    }
    const Vec v = flatten_delta(delta);
    grad -= spd_llt(prob.sigma_delta, "gating prior covariance").solve(v);
    return grad;
}

inline Mat gating_hessian(const Mat& delta, const GatingProblem& prob) {
    const int n = static_cast<int>(prob.U.rows());
    const int k = static_cast<int>(prob.Q.cols());
    const int d = static_cast<int>(prob.U.cols());
    const int dim = (k - 1) * d;
    Mat hess = Mat::Zero(dim, dim);
    for (int i = 0; i < n; ++i) {
        const Vec probs = mixing_probs(delta, prob.U.row(i).transpose());
        const double mass = prob.Q.row(i).sum();
        const Mat uu = prob.U.row(i).transpose() * prob.U.row(i);
        for (int j = 1; j < k; ++j)
            for (int m = 1; m < k; ++m) {
                const double w = mass * probs(j) * ((j == m ? 1.0 : 0.0) - probs(m));
                hess.block((j - 1) * d, (m - 1) * d, d, d) -= w * uu;
            }
    }
    hess -= spd_inverse(prob.sigma_delta, "gating prior covariance");
    return hess;
}

/// Damped Newton ascent with step halving; the objective is strictly concave
/// so the maximizer is unique. Throws FitError past max_iter.
inline std::pair<Mat, int> fit_gating(const GatingProblem& prob, int max_iter = 100) {
    const int k = static_cast<int>(prob.Q.cols());
    const int d = static_cast<int>(prob.U.cols());
    if (k <= 1) return {Mat(0, d), 0};
    Mat delta = prob.delta0.rows() == k - 1 ? prob.delta0 : Mat::Zero(k - 1, d);
    double value = gating_objective(delta, prob);
    for (int it = 1; it <= max_iter; ++it) {
        const Vec grad = gating_gradient(delta, prob);
        if (grad.norm() < 1e-8 * (1.0 + std::abs(value))) return {delta, it - 1};
        const Mat hess = gating_hessian(delta, prob);
        const Vec step = spd_llt(-hess, "gating Hessian").solve(grad);
        // inside the rounding floor of the objective a line search is
        // uninformative; the pure Newton step is safe there by concavity
        const double predicted = 0.5 * grad.dot(step);
        if (predicted < 1e-13 * (1.0 + std::abs(value))) {
            delta += unflatten_delta(step, k - 1, d);
            value = gating_objective(delta, prob);
            continue;
        }
        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h < 60; ++h) {
            const Mat cand = delta + t * unflatten_delta(step, k - 1, d);
            const double cval = gating_objective(cand, prob);
            if (cval >= value) {
                delta = cand;
                value = cval;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            delta += unflatten_delta(step, k - 1, d);
            value = gating_objective(delta, prob);
        }
    }
    const Vec grad = gating_gradient(delta, prob);
    if (grad.norm() < 1e-8 * (1.0 + std::abs(value)))
        return {delta, max_iter};
#ifdef MLMMVB_GATING_DEBUG
    {
        std::FILE* f = std::fopen("/tmp/gating_fail.txt", "w");
        if (f) {
            std::fprintf(f, "%ld %ld %ld %.17g\n", (long)prob.U.rows(), (long)prob.Q.cols(),
                         (long)prob.U.cols(), prob.sigma_delta(0, 0));
            for (Eigen::Index j = 0; j < prob.delta0.rows(); ++j) {
                for (Eigen::Index c = 0; c < prob.delta0.cols(); ++c)
                    std::fprintf(f, "%.17g ", prob.delta0(j, c));
                std::fprintf(f, "\n");
            }
            for (Eigen::Index i = 0; i < prob.Q.rows(); ++i) {
                for (Eigen::Index j = 0; j < prob.Q.cols(); ++j) std::fprintf(f, "%.17g ", prob.Q(i, j));
                for (Eigen::Index c = 0; c < prob.U.cols(); ++c) std::fprintf(f, "%.17g ", prob.U(i, c));
                std::fprintf(f, "\n");
            }
            std::fclose(f);
        }
    }
#endif
    throw FitError("fit_gating: Newton did not reach tolerance in " + std::to_string(max_iter) +
                   " iterations");
}

/// Gaussian relaxation at the mode: covariance = (-Hessian)^{-1}.
inline GatingPosterior relax_gating(const GatingProblem& prob, const Mat& delta_star) {
    GatingPosterior post;
    post.mu_delta = delta_star;
    const int k = static_cast<int>(prob.Q.cols());
    if (k <= 1) {
        post.sigma_delta_q = Mat(0, 0);
        post.converged = true;
        return post;
    }
    const Mat hess = gating_hessian(delta_star, prob);
    post.sigma_delta_q = spd_inverse(-hess, "relax_gating Hessian (is delta_star stationary?)");
    post.converged = true;
    return post;
}

/// Log marginal likelihood approximation used as the model-selection score:
/// the point-mass bound with log p(mu_delta) removed and the Gaussian-entropy
/// correction added. The plug-in softmax term of the relaxed bound equals the
/// point-mass softmax term and cancels, so only the delta-prior pieces change.
inline double adjusted_lower_bound(double lb_pointmass, const GatingPosterior& posterior,
                                   const Mat& sigma_delta) {
    const Eigen::Index dim = posterior.sigma_delta_q.rows();
    if (dim == 0) return lb_pointmass;
    const Vec mu = flatten_delta(posterior.mu_delta);
    const auto prior_llt = spd_llt(sigma_delta, "adjusted_lower_bound prior");
    const double log_prior_at_mode = -0.5 * static_cast<double>(dim) * std::log(2.0 * M_PI) -
                                     0.5 * logdet_from_llt(prior_llt) -
                                     0.5 * mu.dot(prior_llt.solve(mu));
    const double logdet_q = spd_logdet(posterior.sigma_delta_q, "adjusted_lower_bound posterior");
    const double logdet_ratio = logdet_q - logdet_from_llt(prior_llt);
    const double trace_term = prior_llt.solve(posterior.sigma_delta_q).trace();
    return lb_pointmass - log_prior_at_mode + 0.5 * logdet_ratio -
           0.5 * mu.dot(prior_llt.solve(mu)) - 0.5 * trace_term + 0.5 * static_cast<double>(dim);
}

}  // namespace mlmmvb
