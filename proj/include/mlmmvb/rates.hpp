#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmmvb/errors.hpp"
#include "mlmmvb/linalg.hpp"
#include "mlmmvb/rng.hpp"

namespace mlmmvb {

/// Partitioned precision and mean of a joint Gaussian over (theta, y_mis),
/// with theta further split into blocks for the blocked mean iteration.
struct GaussianTarget {
    Vec mu1;                       // length p
    Vec mu2;                       // length r
    Mat H;                         // (p+r) x (p+r) SPD precision
    std::vector<int> theta_partition;  // block sizes, sum = p

    int p() const { return static_cast<int>(mu1.size()); }
    int r() const { return static_cast<int>(mu2.size()); }

    void check() const {
        const int dim = p() + r();
        if (H.rows() != dim || H.cols() != dim)
            throw ValidationError("GaussianTarget: H must be (p+r) x (p+r)");
        const int sum = std::accumulate(theta_partition.begin(), theta_partition.end(), 0);
        if (sum != p()) throw ValidationError("GaussianTarget: theta partition must sum to p");
    }

    Mat H11() const { return H.topLeftCorner(p(), p()); }
    Mat H12() const { return H.topRightCorner(p(), r()); }
    Mat H21() const { return H.bottomLeftCorner(r(), p()); }
    Mat H22() const { return H.bottomRightCorner(r(), r()); }
};

/// H11^{-1} H12 H22^{-1} H21 via factorized solves.
inline Mat em_rate_matrix(const GaussianTarget& t) {
    t.check();
    if (t.r() == 0) return Mat::Zero(t.p(), t.p());
    const Mat inner = spd_llt(t.H22(), "em_rate_matrix: H22").solve(t.H21());
    return spd_llt(t.H11(), "em_rate_matrix: H11").solve(t.H12() * inner);
}

namespace detail {

/// Block lower-triangular part of H11 (diagonal blocks included) and the
/// one-sweep iteration matrix B_aug + (I - B_aug) B^EM.
inline Mat blocked_iteration_matrix(const GaussianTarget& t) {
    const int p = t.p();
    const Mat h11 = t.H11();
    Mat L = Mat::Zero(p, p);
    int row = 0;
    for (std::size_t a = 0; a < t.theta_partition.size(); ++a) {
        const int ra = t.theta_partition[a];
        int col = 0;
        for (std::size_t b = 0; b <= a; ++b) {
            const int rb = t.theta_partition[b];
            L.block(row, col, ra, rb) = h11.block(row, col, ra, rb);
            col += rb;
        }
        row += ra;
    }
    const Mat U = L - h11;
    Eigen::PartialPivLU<Mat> lu(L);
    if (std::abs(lu.determinant()) == 0.0)
        throw NumericalError("blocked_rate: singular diagonal block");
    const Mat b_aug = lu.solve(U);
    const Mat b_em = em_rate_matrix(t);
    return b_aug + (Mat::Identity(p, p) - b_aug) * b_em;
}

}  // namespace detail

/// Convergence rate of the blocked mean iteration:
/// rho(B_aug + (I - B_aug) B^EM).
inline double blocked_rate(const GaussianTarget& t) {
    t.check();
    return spectral_radius(detail::blocked_iteration_matrix(t));
}

struct VbTrace {
    std::vector<Vec> theta;  // iterates of the theta-block means, theta[0] = init
    std::vector<Vec> y_mis;  // matching y_mis means (empty first entry convention)
};

/// Run the mean-field mean updates exactly: y_mis first, then each theta
/// block in order, always at current values. Returns all iterates.
inline VbTrace simulate_vb(const GaussianTarget& t, const Vec& init, int iterations) {
    t.check();
    if (iterations < 2) throw std::invalid_argument("simulate_vb: need at least 2 iterations");
    const int r = t.r();
    const auto llt22 = r > 0 ? spd_llt(t.H22(), "simulate_vb: H22") : Eigen::LLT<Mat>();
    const Mat h11 = t.H11();
    const Mat h12 = t.H12();
    const Mat h21 = t.H21();

    std::vector<Eigen::PartialPivLU<Mat>> diag_lu;
    std::vector<int> offsets;
    int off = 0;
    for (int sz : t.theta_partition) {
        Eigen::PartialPivLU<Mat> lu(h11.block(off, off, sz, sz));
        if (std::abs(lu.determinant()) == 0.0)
            throw NumericalError("simulate_vb: singular diagonal block");
        diag_lu.push_back(std::move(lu));
        offsets.push_back(off);
        off += sz;
    }

    VbTrace trace;
    Vec theta = init;
    Vec ymis = t.mu2;
    trace.theta.push_back(theta);
    trace.y_mis.push_back(ymis);
    for (int it = 0; it < iterations; ++it) {
        if (r > 0) ymis = t.mu2 - llt22.solve(h21 * (theta - t.mu1));
        for (std::size_t a = 0; a < t.theta_partition.size(); ++a) {
            const int o = offsets[a], sz = t.theta_partition[a];
            Vec rhs = Vec::Zero(sz);
            for (std::size_t b = 0; b < t.theta_partition.size(); ++b) {
                if (b == a) continue;
                const int ob = offsets[b], szb = t.theta_partition[b];
                rhs += h11.block(o, ob, sz, szb) * (theta.segment(ob, szb) - t.mu1.segment(ob, szb));
            }
            if (r > 0) rhs += h12.middleRows(o, sz) * (ymis - t.mu2);
            theta.segment(o, sz) = t.mu1.segment(o, sz) - diag_lu[a].solve(rhs);
        }
        trace.theta.push_back(theta);
        trace.y_mis.push_back(ymis);
    }
    return trace;
}

/// Empirical convergence rate from the tail of the iterate trace. Errors
/// below 1e-13 are excluded (floating-point floor); a trace already at the
/// fixed point reports 0. The fit runs over the last third of the qualifying
/// window: a one-term geometric fit when the tail is a clean single-rate
/// decay, otherwise a second-order linear-recurrence fit on the iterates,
/// which recovers the modulus of a dominant complex pair where norm ratios
/// oscillate forever.
inline double empirical_rate(const VbTrace& trace, const Vec& fixed_point,
                             double floor = 1e-13) {
    const std::size_t T = trace.theta.size();
    if (T < 10) throw std::invalid_argument("empirical_rate: trace too short");
    std::vector<Vec> err(T);
    std::vector<double> norms(T);
    std::size_t last = 0;
    bool any = false;
    for (std::size_t t = 0; t < T; ++t) {
        err[t] = trace.theta[t] - fixed_point;
        norms[t] = err[t].stableNorm();
        if (norms[t] >= floor) {
            last = t;
            any = true;
        }
    }
    if (!any || last < 3) return 0.0;
    const std::size_t t0 = (2 * last) / 3;
    const std::size_t len = last - t0 + 1;
    if (len < 3) return 0.0;

    // rescale the window so inner products cannot overflow
    const double s = norms[t0] > 0 ? 1.0 / norms[t0] : 1.0;
    double num = 0.0, den = 0.0;
    for (std::size_t t = t0; t < last; ++t) {
        num += (s * err[t + 1]).dot(s * err[t]);
        den += (s * err[t]).squaredNorm();
    }
    if (den == 0.0) return 0.0;
    const double lam1 = num / den;
    double res = 0.0, tot = 0.0;
    for (std::size_t t = t0; t < last; ++t) {
        res += (s * err[t + 1] - lam1 * (s * err[t])).squaredNorm();
        tot += (s * err[t + 1]).squaredNorm();
    }
    if (tot == 0.0 || res / tot < 1e-18) return std::abs(lam1);

    // second-order fit: e_{t+2} = a e_{t+1} + b e_t
    const Eigen::Index d = err[t0].size();
    Mat A(static_cast<Eigen::Index>(len - 2) * d, 2);
    Vec y(static_cast<Eigen::Index>(len - 2) * d);
    for (std::size_t t = t0; t + 2 <= last; ++t) {
        const Eigen::Index rowoff = static_cast<Eigen::Index>(t - t0) * d;
        A.col(0).segment(rowoff, d) = s * err[t + 1];
        A.col(1).segment(rowoff, d) = s * err[t];
        y.segment(rowoff, d) = s * err[t + 2];
    }
    const Vec coef = A.colPivHouseholderQr().solve(y);
    const double a = coef(0), b = coef(1);
    const double disc = a * a + 4.0 * b;
    if (disc >= 0.0) {
        const double rt = std::sqrt(disc);
        return std::max(std::abs(0.5 * (a + rt)), std::abs(0.5 * (a - rt)));
    }
    return std::sqrt(-b);  // complex pair, modulus sqrt(|b|)
}

// ---------------------------------------------------------------------------
// Centering comparison for a one-component mixed model with known variances.

/// Known-variance mixed-model layout with a common design X (= W = V).
struct LmmRatesSpec {
    int n_clusters = 8;
    Mat X;                  // n_i x p, shared across clusters
    double sigma_a2 = 1.0;  // cluster effect variance
    double sigma_b2 = 1.0;  // component effect variance
    double sigma_e2 = 1.0;  // error variance (iid)
    double sigma_beta_scale = 1000.0;
};

struct CenteringRateReport {
    double uncentered_rate = 0.0;
    double centered_rate = 0.0;
    bool centered_smaller = false;
};

namespace detail {

/// Joint posterior precision of (beta, a_1..a_n, b) in the uncentered
/// coordinates, arranged so the iteration order matches the uncentered sweep:
/// theta = (beta, a_1..a_n), y_mis = b.
inline GaussianTarget uncentered_lmm_target(const LmmRatesSpec& spec) {
    const int p = static_cast<int>(spec.X.cols());
    const int n = spec.n_clusters;
    const Mat xtsx = spec.X.transpose() * spec.X / spec.sigma_e2;
    const int P = p * (1 + n), R = p;
    Mat H = Mat::Zero(P + R, P + R);
    H.topLeftCorner(p, p) = Mat::Identity(p, p) / spec.sigma_beta_scale + n * xtsx;
    for (int i = 0; i < n; ++i) {
        const int o = p * (1 + i);
        H.block(0, o, p, p) = xtsx;
        H.block(o, 0, p, p) = xtsx;
        H.block(o, o, p, p) = Mat::Identity(p, p) / spec.sigma_a2 + xtsx;
        H.block(o, P, p, p) = xtsx;
        H.block(P, o, p, p) = xtsx;
    }
    H.block(0, P, p, p) = n * xtsx;
    H.block(P, 0, p, p) = n * xtsx;
    H.block(P, P, p, p) = Mat::Identity(p, p) / spec.sigma_b2 + n * xtsx;
    GaussianTarget t;
    t.mu1 = Vec::Zero(P);
    t.mu2 = Vec::Zero(R);
    t.H = H;
    t.theta_partition.assign(static_cast<std::size_t>(1 + n), p);
    return t;
}

/// Joint posterior precision of (rho_1..rho_n, nu, beta) in the fully
/// centered coordinates; theta = (rho_1..rho_n, nu), y_mis = beta, again
/// matching the centered sweep order up to a cyclic shift.
inline GaussianTarget centered_lmm_target(const LmmRatesSpec& spec) {
    const int p = static_cast<int>(spec.X.cols());
    const int n = spec.n_clusters;
    const Mat xtsx = spec.X.transpose() * spec.X / spec.sigma_e2;
    const int P = p * (n + 1), R = p;
    Mat H = Mat::Zero(P + R, P + R);
    const int onu = p * n;
    for (int i = 0; i < n; ++i) {
        const int o = p * i;
        H.block(o, o, p, p) = Mat::Identity(p, p) / spec.sigma_a2 + xtsx;
        H.block(o, onu, p, p) = -Mat::Identity(p, p) / spec.sigma_a2;
        H.block(onu, o, p, p) = -Mat::Identity(p, p) / spec.sigma_a2;
    }
    H.block(onu, onu, p, p) =
        (n / spec.sigma_a2 + 1.0 / spec.sigma_b2) * Mat::Identity(p, p);
    H.block(onu, P, p, p) = -Mat::Identity(p, p) / spec.sigma_b2;
    H.block(P, onu, p, p) = -Mat::Identity(p, p) / spec.sigma_b2;
    H.block(P, P, p, p) =
        (1.0 / spec.sigma_b2 + 1.0 / spec.sigma_beta_scale) * Mat::Identity(p, p);
    GaussianTarget t;
    t.mu1 = Vec::Zero(P);
    t.mu2 = Vec::Zero(R);
    t.H = H;
    t.theta_partition.assign(static_cast<std::size_t>(n + 1), p);
    return t;
}

}  // namespace detail

/// Exact blocked rates of the two coordinate systems for the same posterior.
inline CenteringRateReport centering_rate_comparison(const LmmRatesSpec& spec) {
    CenteringRateReport rep;
    rep.uncentered_rate = blocked_rate(detail::uncentered_lmm_target(spec));
    rep.centered_rate = blocked_rate(detail::centered_lmm_target(spec));
    rep.centered_smaller = rep.centered_rate < rep.uncentered_rate;
    return rep;
}

// ---------------------------------------------------------------------------
// Randomized verification suite: empirical vs analytic rates.

/// Random SPD target generated as A'A + 0.1 I (the offset keeps precisions
/// away from singular), p and r up to 5, m up to 3, zero means.
inline GaussianTarget random_target(Rng& rng, int max_p = 5, int max_r = 5, int max_m = 3) {
    const int p = 1 + static_cast<int>(rng.uniform() * max_p);
    const int r = 1 + static_cast<int>(rng.uniform() * max_r);
    int m = 1 + static_cast<int>(rng.uniform() * max_m);
    m = std::min(m, p);
    GaussianTarget t;
    t.mu1 = Vec::Zero(p);
    t.mu2 = Vec::Zero(r);
    Mat a = Mat::NullaryExpr(p + r, p + r, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    t.H = a.transpose() * a + 0.1 * Mat::Identity(p + r, p + r);
    // random composition of p into m positive parts
    std::vector<int> part(m, 1);
    for (int extra = 0; extra < p - m; ++extra) ++part[static_cast<int>(rng.uniform() * m)];
    t.theta_partition = part;
    return t;
}

/// Empirical rate measured from the mean iteration. The start point is pushed
/// far from the fixed point (scale 1e250) so the decay crosses hundreds of
/// orders of magnitude before the 1e-13 floor, which leaves the tail fit deep
/// in the asymptotic regime.
inline double measured_rate(const GaussianTarget& t, Rng& rng, double init_scale = 1e250,
                            int chunk = 2000, int max_iterations = 300000) {
    Vec u = Vec::NullaryExpr(t.p(), [&](Eigen::Index) { return rng.normal(); });
    const double norm = u.stableNorm();
    if (norm > 0) u /= norm;
    const Vec init = t.mu1 + init_scale * u;

    VbTrace trace;
    Vec start = init;
    int done = 0;
    while (done < max_iterations) {
        const VbTrace seg = simulate_vb(t, start, chunk);
        const std::size_t first = trace.theta.empty() ? 0 : 1;  // drop duplicated seam point
        for (std::size_t s = first; s < seg.theta.size(); ++s) {
            trace.theta.push_back(seg.theta[s]);
            trace.y_mis.push_back(seg.y_mis[s]);
        }
        done += chunk;
        start = trace.theta.back();
        if ((start - t.mu1).stableNorm() < 1e-13) break;
    }
    return empirical_rate(trace, t.mu1);
}

struct TheoremCheck {
    int index = 0;
    int p = 0, r = 0, m = 0;
    double analytic = 0.0;
    double empirical = 0.0;
    double abs_diff = 0.0;
};

/// The full randomized comparison: one record per target.
inline std::vector<TheoremCheck> rate_theorem_suite(int count, std::uint64_t seed) {
    std::vector<TheoremCheck> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
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
        out.push_back(c);
    }
    return out;
}

}  // namespace mlmmvb
