#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "mlmmvb/data.hpp"
#include "mlmmvb/elbo.hpp"
#include "mlmmvb/state.hpp"

namespace mlmmvb {

struct Partition {
    std::vector<int> labels;
    int k_effective = 0;

    static Partition from_labels(std::vector<int> labels) {
        Partition p;
        p.k_effective = static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
        p.labels = std::move(labels);
        return p;
    }
};

/// Row-wise argmax of the responsibilities; ties break toward the smallest
/// index. Labels are 1-based.
inline std::vector<int> hard_assignments(const Mat& Q) {
    std::vector<int> labels(Q.rows());
    for (Eigen::Index i = 0; i < Q.rows(); ++i) {
        int best = 0;
        for (Eigen::Index j = 1; j < Q.cols(); ++j)
            if (Q(i, j) > Q(i, best)) best = static_cast<int>(j);
        labels[i] = best + 1;
    }
    return labels;
}

/// Adjusted Rand index from the pairwise contingency table. Binomial counts
/// are accumulated in 64-bit integers and the common C(n,2) factor cleared
/// before the single floating division, so values stay exact at n ~ 1e4.
/// Two single-cluster partitions are identical, hence ARI 1 (the 0/0 case).
inline double adjusted_rand_index(const Partition& a, const Partition& b) {
    if (a.labels.size() != b.labels.size())
        throw std::invalid_argument("adjusted_rand_index: partitions must have equal length");
    const std::size_t n = a.labels.size();
    std::map<int, long long> ra, rb;
    std::map<std::pair<int, int>, long long> cell;
    for (std::size_t i = 0; i < n; ++i) {
        ++ra[a.labels[i]];
        ++rb[b.labels[i]];
        ++cell[{a.labels[i], b.labels[i]}];
    }
    auto choose2 = [](long long m) { return m * (m - 1) / 2; };
    long long sij = 0, sa = 0, sb = 0;
    for (const auto& [key, c] : cell) sij += choose2(c);
    for (const auto& [key, c] : ra) sa += choose2(c);
    for (const auto& [key, c] : rb) sb += choose2(c);
    const long long c2 = choose2(static_cast<long long>(n));
    const long long num = 2 * (c2 * sij - sa * sb);
    const long long den = c2 * (sa + sb) - 2 * sa * sb;
    if (den == 0) return 1.0;  // both partitions trivial in the same way
    return static_cast<double>(num) / static_cast<double>(den);
}

/// Deterministic tabular fit summary for external plotting.
struct FitSummary {
    std::vector<int> labels;                  // hard assignment per cluster
    std::vector<double> component_mass;       // soft sizes sum to n
    std::vector<long long> component_size;    // hard sizes
    std::vector<double> responsibility_entropy;  // per cluster, nats
    Mat gating_probs;                         // n x k at mu_delta
    std::vector<Vec> fitted_curve;            // per cluster: X_i mu_beta_{label(i)}
};

inline FitSummary summarize_fit(const FitResult& result, const GroupedDataset& data) {
    const VariationalState& st = result.state;
    FitSummary s;
    s.labels = hard_assignments(st.Q);
    const Vec mass = st.component_mass();
    s.component_mass.assign(mass.data(), mass.data() + mass.size());
    s.component_size.assign(st.k, 0);
    for (int l : s.labels) ++s.component_size[l - 1];
    s.responsibility_entropy.resize(data.dims.n);
    for (int i = 0; i < data.dims.n; ++i) {
        double h = 0.0;
        for (int j = 0; j < st.k; ++j) {
            const double q = st.Q(i, j);
            if (q > 0.0) h -= q * std::log(q);
        }
        s.responsibility_entropy[i] = h;
    }
    s.gating_probs.resize(data.dims.n, st.k);
    for (int i = 0; i < data.dims.n; ++i)
        s.gating_probs.row(i) = mixing_probs(st.mu_delta, data.clusters[i].u).transpose();
    s.fitted_curve.resize(data.dims.n);
    for (int i = 0; i < data.dims.n; ++i)
        s.fitted_curve[i] = data.clusters[i].X * st.mu_beta[s.labels[i] - 1];
    return s;
}

}  // namespace mlmmvb
