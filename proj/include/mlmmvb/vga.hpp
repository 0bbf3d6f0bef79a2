#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mlmmvb/data.hpp"
#include "mlmmvb/elbo.hpp"
#include "mlmmvb/eval.hpp"
#include "mlmmvb/gating.hpp"
#include "mlmmvb/state.hpp"
#include "mlmmvb/sweep.hpp"

namespace mlmmvb {

struct VgaConfig {
    int M = 5;                     // split attempts per component
    double short_run_increment = 1.0;
    double tol_rel = 1e-5;
    int min_subset = 1;
    std::uint64_t seed = 0;
    bool enable_merge_suggestions = false;
    bool unsplittable_memory = true;  // skip components whose best split collapsed
    int max_sweeps = 2000;
    int max_sweeps_short = 500;
    int max_rounds = 60;
};

struct SplitCandidate {
    int component = -1;
    std::vector<int> subset_a, subset_b;  // bipartition of the component's hard members
    double attained_bound = -std::numeric_limits<double>::infinity();
    VariationalState snapshot;  // (k+1)-component state after the short-run search
    bool collapsed = false;
};

struct VgaCandidateRecord {
    int component = -1;
    double attained_bound = 0.0;
    bool collapsed = false;
    bool accepted = false;
};

struct VgaRoundRecord {
    int k_before = 0;
    int k_after = 0;
    int accepted_splits = 0;
    std::vector<VgaCandidateRecord> candidates;
    double log_marginal = 0.0;
};

struct VgaResult {
    FitResult final;
    int k_selected = 0;
    std::vector<VgaRoundRecord> history;
    std::vector<double> log_marginal_per_round;
};

namespace detail {

/// Number of components carrying responsibility mass above the elimination
/// threshold.
inline int effective_components(const VariationalState& st) {
    const Vec mass = st.component_mass();
    int k = 0;
    for (int j = 0; j < st.k; ++j)
        if (mass(j) >= kEliminationThreshold) ++k;
    return k;
}

/// Duplicate component j into (j, k): parameters copied, responsibilities of
/// the hard members moved onto whichever subcomponent owns them, zero
/// elsewhere. Rows outside the hard set become temporarily sub-stochastic;
/// the first responsibility update restores them.
inline VariationalState expand_for_split(const VariationalState& st, int j,
                                         const std::vector<int>& subset_a,
                                         const std::vector<int>& subset_b) {
    VariationalState out = st;
    out.k = st.k + 1;
    out.mu_beta.push_back(st.mu_beta[j]);
    out.sigma_beta.push_back(st.sigma_beta[j]);
    out.mu_b.push_back(st.mu_b[j]);
    out.sigma_b.push_back(st.sigma_b[j]);
    if (st.par == Parametrization::FullCentered) {
        out.mu_nu.push_back(st.mu_nu[j]);
        out.sigma_nu.push_back(st.sigma_nu[j]);
    }
    auto append_scalar = [](Vec& v, double value) {
        v.conservativeResize(v.size() + 1);
        v(v.size() - 1) = value;
    };
    append_scalar(out.alpha_a, st.alpha_a(j));
    append_scalar(out.lambda_a, st.lambda_a(j));
    append_scalar(out.alpha_b, st.alpha_b(j));
    append_scalar(out.lambda_b, st.lambda_b(j));
    out.alpha_e.conservativeResize(out.k, Eigen::NoChange);
    out.lambda_e.conservativeResize(out.k, Eigen::NoChange);
    out.alpha_e.row(out.k - 1) = st.alpha_e.row(j);
    out.lambda_e.row(out.k - 1) = st.lambda_e.row(j);
    append_scalar(out.resp_total, st.resp_total(j));
    out.resp_kappa.conservativeResize(out.k, Eigen::NoChange);
    out.resp_kappa.row(out.k - 1) = st.resp_kappa.row(j);

    out.Q.conservativeResize(Eigen::NoChange, out.k);
    out.Q.col(out.k - 1).setZero();
    out.Q.col(j).setZero();
    for (int i : subset_a) out.Q(i, j) = st.Q(i, j);
    for (int i : subset_b) out.Q(i, out.k - 1) = st.Q(i, j);

    out.mu_delta.conservativeResize(out.k - 1, Eigen::NoChange);
    if (j == 0)
        out.mu_delta.row(out.k - 2).setZero();
    else
        out.mu_delta.row(out.k - 2) = st.mu_delta.row(j - 1);
    return out;
}

inline std::set<int> all_except(int k, std::initializer_list<int> keep) {
    std::set<int> frozen;
    for (int j = 0; j < k; ++j) frozen.insert(j);
    for (int j : keep) frozen.erase(j);
    return frozen;
}

}  // namespace detail

/// Refit the gating mode on the final responsibilities, relax q(delta) to a
/// Gaussian, and store the adjusted log-marginal estimate on the result.
/// Returns the estimate (equal to the point-mass bound when k = 1).
inline double relax_and_score(FitResult& fit_result, const GroupedDataset& data,
                              const Hyperparameters& hyper) {
    VariationalState& st = fit_result.state;
    GatingPosterior post;
    if (st.k == 1) {
        post.mu_delta = st.mu_delta;
        post.sigma_delta_q = Mat(0, 0);
        post.converged = true;
        fit_result.gating_posterior = post;
        fit_result.log_marginal_estimate = lower_bound(st, data, hyper);
        return fit_result.log_marginal_estimate;
    }
    const Eigen::Index dim = static_cast<Eigen::Index>(st.k - 1) * data.dims.d;
    GatingProblem prob;
    prob.U = data.gating_covariates();
    prob.Q = st.Q;
    prob.sigma_delta = hyper.sigma_delta_scale * Mat::Identity(dim, dim);
    prob.delta0 = st.mu_delta;
    st.mu_delta = fit_gating(prob).first;  // polish to the mode for the final Q
    const double lb = lower_bound(st, data, hyper);
    post = relax_gating(prob, st.mu_delta);
    fit_result.gating_posterior = post;
    fit_result.log_marginal_estimate = adjusted_lower_bound(lb, post, prob.sigma_delta);
    return fit_result.log_marginal_estimate;
}

/// Search for the best way to split component j: M random bipartitions of the
/// hard members, each refined by a frozen-context short run, best attained
/// bound wins (first attempt wins ties). Returns a collapsed candidate when
/// the winning pair lost one side below the elimination threshold.
inline SplitCandidate propose_split(const FitResult& model, const GroupedDataset& data,
                                    const Hyperparameters& hyper, int j, const VgaConfig& cfg,
                                    int round = 0) {
    const VariationalState& st = model.state;
    std::vector<int> members;
    const std::vector<int> labels = hard_assignments(st.Q);
    for (int i = 0; i < st.n(); ++i)
        if (labels[i] == j + 1) members.push_back(i);
    if (static_cast<int>(members.size()) < 2 * cfg.min_subset)
        throw std::invalid_argument("propose_split: component " + std::to_string(j + 1) +
                                    " has too few members to bipartition");

    SplitCandidate best;
    best.component = j;
    for (int m = 0; m < cfg.M; ++m) {
        Rng rng = Rng::derive(cfg.seed, {0x53504c4954ULL, static_cast<std::uint64_t>(round),
                                         static_cast<std::uint64_t>(j),
                                         static_cast<std::uint64_t>(m)});
        std::vector<int> sa, sb;
        do {
            sa.clear();
            sb.clear();
            for (int i : members) (rng.bernoulli() ? sa : sb).push_back(i);
        } while (static_cast<int>(sa.size()) < cfg.min_subset ||
                 static_cast<int>(sb.size()) < cfg.min_subset);

        VariationalState split = detail::expand_for_split(st, j, sa, sb);
        FitConfig fc;
        fc.tol_rel = cfg.tol_rel;
        fc.max_sweeps = cfg.max_sweeps_short;
        fc.short_run = true;
        fc.short_run_increment = cfg.short_run_increment;
        fc.frozen_components = detail::all_except(split.k, {j, split.k - 1});
        const FitResult run = fit(split, data, hyper, fc);
        if (run.last_bound() > best.attained_bound) {
            best.attained_bound = run.last_bound();
            best.snapshot = run.state;
            best.subset_a = sa;
            best.subset_b = sb;
        }
    }
    const Vec mass = best.snapshot.component_mass();
    best.collapsed = std::min(mass(j), mass(best.snapshot.k - 1)) < kEliminationThreshold;
    return best;
}

/// Apply candidates in descending bound order, each refined by a partial run
/// that freezes the components still awaiting their split. A split is kept
/// when the relaxed log-marginal estimate increases; the first rejection ends
/// the round. Returns the refined model and the number of accepted splits.
inline std::pair<FitResult, int> apply_splits(const FitResult& model_k,
                                              std::vector<SplitCandidate> candidates,
                                              const GroupedDataset& data,
                                              const Hyperparameters& hyper, const VgaConfig& cfg,
                                              std::vector<VgaCandidateRecord>* records = nullptr) {
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.attained_bound != b.attained_bound) return a.attained_bound > b.attained_bound;
        return a.component < b.component;
    });
    FitResult temp = model_k;
    double temp_score = temp.log_marginal_estimate;
    std::set<int> pending;
    for (const auto& c : candidates) pending.insert(c.component);

    int accepted = 0;
    for (const SplitCandidate& cand : candidates) {
        pending.erase(cand.component);
        VariationalState init;
        if (accepted == 0) {
            init = cand.snapshot;
        } else {
            // subcomponent slots from the snapshot, the rest from the current model
            init = detail::expand_for_split(temp.state, cand.component, {}, {});
            const int jnew = init.k - 1;
            const int jsrc = cand.snapshot.k - 1;
            init.Q.col(cand.component) = cand.snapshot.Q.col(cand.component);
            init.Q.col(jnew) = cand.snapshot.Q.col(jsrc);
            init.mu_beta[cand.component] = cand.snapshot.mu_beta[cand.component];
            init.sigma_beta[cand.component] = cand.snapshot.sigma_beta[cand.component];
            init.mu_b[cand.component] = cand.snapshot.mu_b[cand.component];
            init.sigma_b[cand.component] = cand.snapshot.sigma_b[cand.component];
            init.mu_beta[jnew] = cand.snapshot.mu_beta[jsrc];
            init.sigma_beta[jnew] = cand.snapshot.sigma_beta[jsrc];
            init.mu_b[jnew] = cand.snapshot.mu_b[jsrc];
            init.sigma_b[jnew] = cand.snapshot.sigma_b[jsrc];
            if (init.par == Parametrization::FullCentered) {
                init.mu_nu[cand.component] = cand.snapshot.mu_nu[cand.component];
                init.sigma_nu[cand.component] = cand.snapshot.sigma_nu[cand.component];
                init.mu_nu[jnew] = cand.snapshot.mu_nu[jsrc];
                init.sigma_nu[jnew] = cand.snapshot.sigma_nu[jsrc];
            }
            init.alpha_a(cand.component) = cand.snapshot.alpha_a(cand.component);
            init.lambda_a(cand.component) = cand.snapshot.lambda_a(cand.component);
            init.alpha_b(cand.component) = cand.snapshot.alpha_b(cand.component);
            init.lambda_b(cand.component) = cand.snapshot.lambda_b(cand.component);
            init.alpha_e.row(cand.component) = cand.snapshot.alpha_e.row(cand.component);
            init.lambda_e.row(cand.component) = cand.snapshot.lambda_e.row(cand.component);
            init.alpha_a(jnew) = cand.snapshot.alpha_a(jsrc);
            init.lambda_a(jnew) = cand.snapshot.lambda_a(jsrc);
            init.alpha_b(jnew) = cand.snapshot.alpha_b(jsrc);
            init.lambda_b(jnew) = cand.snapshot.lambda_b(jsrc);
            init.alpha_e.row(jnew) = cand.snapshot.alpha_e.row(jsrc);
            init.lambda_e.row(jnew) = cand.snapshot.lambda_e.row(jsrc);
            init.mu_delta.row(init.k - 2) = cand.snapshot.mu_delta.row(cand.snapshot.k - 2);
        }
        FitConfig fc;
        fc.tol_rel = cfg.tol_rel;
        fc.max_sweeps = cfg.max_sweeps;
        fc.frozen_components = pending;
        FitResult refined = fit(init, data, hyper, fc);
        const double score = relax_and_score(refined, data, hyper);
        VgaCandidateRecord rec;
        rec.component = cand.component;
        rec.attained_bound = cand.attained_bound;
        rec.collapsed = cand.collapsed;
        rec.accepted = score > temp_score;
        if (records) records->push_back(rec);
        if (score > temp_score) {
            temp = std::move(refined);
            temp_score = score;
            ++accepted;
        } else {
            break;
        }
    }
    return {std::move(temp), accepted};
}

/// One merge move: pool the responsibilities of components a and b, keep the
/// parameters of the heavier parent, refit with everything else frozen, and
/// accept when the relaxed log-marginal estimate increases.
inline std::pair<FitResult, bool> try_merge(const FitResult& model, int a, int b,
                                            const GroupedDataset& data,
                                            const Hyperparameters& hyper, const VgaConfig& cfg) {
    const VariationalState& st = model.state;
    if (a == b || a < 0 || b < 0 || a >= st.k || b >= st.k)
        throw std::invalid_argument("try_merge: invalid component pair");
    const int keep = std::min(a, b);
    const int drop = std::max(a, b);
    const Vec mass = st.component_mass();
    const int parent = mass(a) >= mass(b) ? a : b;

    VariationalState merged = st;
    merged.k = st.k - 1;
    merged.Q.col(keep) = st.Q.col(a) + st.Q.col(b);
    auto erase_at = [drop](auto& v) { v.erase(v.begin() + drop); };
    merged.mu_beta[keep] = st.mu_beta[parent];
    merged.sigma_beta[keep] = st.sigma_beta[parent];
    merged.mu_b[keep] = st.mu_b[parent];
    merged.sigma_b[keep] = st.sigma_b[parent];
    if (st.par == Parametrization::FullCentered) {
        merged.mu_nu[keep] = st.mu_nu[parent];
        merged.sigma_nu[keep] = st.sigma_nu[parent];
        erase_at(merged.mu_nu);
        erase_at(merged.sigma_nu);
    }
    erase_at(merged.mu_beta);
    erase_at(merged.sigma_beta);
    erase_at(merged.mu_b);
    erase_at(merged.sigma_b);
    merged.alpha_a(keep) = st.alpha_a(parent);
    merged.lambda_a(keep) = st.lambda_a(parent);
    merged.alpha_b(keep) = st.alpha_b(parent);
    merged.lambda_b(keep) = st.lambda_b(parent);
    merged.alpha_e.row(keep) = st.alpha_e.row(parent);
    merged.lambda_e.row(keep) = st.lambda_e.row(parent);
    auto drop_row_vec = [drop](Vec& v) {
        Vec out(v.size() - 1);
        out.head(drop) = v.head(drop);
        out.tail(v.size() - 1 - drop) = v.tail(v.size() - 1 - drop);
        v = out;
    };
    drop_row_vec(merged.alpha_a);
    drop_row_vec(merged.lambda_a);
    drop_row_vec(merged.alpha_b);
    drop_row_vec(merged.lambda_b);
    drop_row_vec(merged.resp_total);
    auto drop_row_mat = [](Mat& m, int row) {
        Mat out(m.rows() - 1, m.cols());
        out.topRows(row) = m.topRows(row);
        out.bottomRows(m.rows() - 1 - row) = m.bottomRows(m.rows() - 1 - row);
        m = out;
    };
    drop_row_mat(merged.alpha_e, drop);
    drop_row_mat(merged.lambda_e, drop);
    drop_row_mat(merged.resp_kappa, drop);
    {
        Mat qn(st.Q.rows(), merged.k);
        int col = 0;
        for (int j = 0; j < st.k; ++j) {
            if (j == drop) continue;
            if (j == keep)
                qn.col(col++) = merged.Q.col(keep);
            else
                qn.col(col++) = st.Q.col(j);
        }
        merged.Q = qn;
    }
    // drop > 0 always, so the zero reference component never goes away;
    // component j's gating row is j - 1
    drop_row_mat(merged.mu_delta, drop - 1);

    FitConfig fc;
    fc.tol_rel = cfg.tol_rel;
    fc.max_sweeps = cfg.max_sweeps;
    fc.frozen_components = detail::all_except(merged.k, {keep});
    FitResult refined = fit(merged, data, hyper, fc);
    const double score = relax_and_score(refined, data, hyper);
    if (score > model.log_marginal_estimate) return {std::move(refined), true};
    return {model, false};
}

/// Merge candidates ranked by the cosine overlap of responsibility columns.
struct MergeSuggestion {
    int a = 0, b = 0;
    double overlap = 0.0;
};

inline std::vector<MergeSuggestion> merge_suggestions(const FitResult& model) {
    const Mat& Q = model.state.Q;
    std::vector<MergeSuggestion> out;
    for (int a = 0; a < model.state.k; ++a)
        for (int b = a + 1; b < model.state.k; ++b) {
            const double na = Q.col(a).norm(), nb = Q.col(b).norm();
            MergeSuggestion s;
            s.a = a;
            s.b = b;
            s.overlap = na > 0 && nb > 0 ? Q.col(a).dot(Q.col(b)) / (na * nb) : 0.0;
            out.push_back(s);
        }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
        if (x.overlap != y.overlap) return x.overlap > y.overlap;
        return std::pair(x.a, x.b) < std::pair(y.a, y.b);
    });
    return out;
}

/// The greedy loop: start at one component, repeatedly search/apply splits,
/// refit everything after each successful round, stop when every component's
/// split fails or collapses.
inline VgaResult run_vga(const GroupedDataset& data, const Hyperparameters& hyper,
                         Parametrization par, const VgaConfig& cfg) {
    VgaResult result;
    FitConfig full;
    full.tol_rel = cfg.tol_rel;
    full.max_sweeps = cfg.max_sweeps;

    FitResult model = fit(default_init(data, hyper, 1, par, cfg.seed), data, hyper, full);
    relax_and_score(model, data, hyper);
    result.log_marginal_per_round.push_back(model.log_marginal_estimate);

    std::set<int> unsplittable;

    for (int round = 1; round <= cfg.max_rounds; ++round) {
        const int k = model.state.k;
        VgaRoundRecord rec;
        rec.k_before = detail::effective_components(model.state);

        const std::vector<int> labels = hard_assignments(model.state.Q);
        std::vector<int> counts(k, 0);
        for (int l : labels) ++counts[l - 1];

        std::vector<SplitCandidate> candidates;
        for (int j = 0; j < k; ++j) {
            if (unsplittable.count(j)) continue;
            if (counts[j] < 2 * cfg.min_subset) continue;
            SplitCandidate cand = propose_split(model, data, hyper, j, cfg, round);
            if (cand.collapsed) {
                if (cfg.unsplittable_memory) unsplittable.insert(j);
                VgaCandidateRecord r;
                r.component = j;
                r.attained_bound = cand.attained_bound;
                r.collapsed = true;
                rec.candidates.push_back(r);
                continue;
            }
            candidates.push_back(std::move(cand));
        }

        if (candidates.empty()) {
            rec.k_after = rec.k_before;
            rec.log_marginal = model.log_marginal_estimate;
            result.history.push_back(std::move(rec));
            break;
        }

        auto [temp, accepted] =
            apply_splits(model, std::move(candidates), data, hyper, cfg, &rec.candidates);
        rec.accepted_splits = accepted;
        if (accepted == 0) {
            rec.k_after = rec.k_before;
            rec.log_marginal = model.log_marginal_estimate;
            result.history.push_back(std::move(rec));
            break;
        }

        model = fit(temp.state, data, hyper, full);
        relax_and_score(model, data, hyper);
        rec.k_after = detail::effective_components(model.state);
        rec.log_marginal = model.log_marginal_estimate;
        result.history.push_back(std::move(rec));
        result.log_marginal_per_round.push_back(model.log_marginal_estimate);
    }

    result.k_selected = detail::effective_components(model.state);
    result.final = std::move(model);
    return result;
}

}  // namespace mlmmvb
