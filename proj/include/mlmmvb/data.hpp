#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlmmvb/errors.hpp"
#include "mlmmvb/linalg.hpp"
#include "mlmmvb/rng.hpp"

namespace mlmmvb {

/// One cluster of grouped observations. Error blocks are stored as counts
/// (kappa); observations must be ordered block-contiguously.
struct ClusterData {
    std::string id;            // external identifier, kept for reporting
    Vec y;                     // responses, length n_i
    Mat X;                     // n_i x p fixed-effect design
    Mat W;                     // n_i x s1 cluster random-effect design
    Mat V;                     // n_i x s2 component random-effect design
    Vec u;                     // gating covariates, length d
    std::vector<int> kappa;    // error-block sizes, length g, sum = n_i

    Eigen::Index n_obs() const { return y.size(); }
};

struct Dims {
    int n = 0;    // number of clusters
    long N = 0;   // total observations
    int p = 0;
    int s1 = 0;
    int s2 = 0;
    int d = 0;
    int g = 0;
};

/// Immutable after construction; safe to share across concurrent readers.
struct GroupedDataset {
    std::vector<ClusterData> clusters;
    Dims dims;

    static GroupedDataset from_clusters(std::vector<ClusterData> cs) {
        GroupedDataset data;
        data.clusters = std::move(cs);
        Dims d;
        d.n = static_cast<int>(data.clusters.size());
        if (d.n > 0) {
            const ClusterData& c0 = data.clusters.front();
            d.p = static_cast<int>(c0.X.cols());
            d.s1 = static_cast<int>(c0.W.cols());
            d.s2 = static_cast<int>(c0.V.cols());
            d.d = static_cast<int>(c0.u.size());
            d.g = static_cast<int>(c0.kappa.size());
            for (const auto& c : data.clusters) d.N += c.n_obs();
        }
        data.dims = d;
        return data;
    }

    /// Gating covariate matrix U with rows u_i^T.
    Mat gating_covariates() const {
        Mat U(dims.n, dims.d);
        for (int i = 0; i < dims.n; ++i) U.row(i) = clusters[i].u.transpose();
        return U;
    }
};

/// Prior constants, shared across components and error blocks (every worked
/// example uses one value per family, e.g. IG(0.01, 0.01)).
struct Hyperparameters {
    Mat sigma_beta;            // p x p SPD prior covariance of beta_j
    double sigma_delta_scale;  // Sigma_delta = scale * I
    double alpha_a, lambda_a;
    double alpha_b, lambda_b;
    double alpha_e, lambda_e;

    static Hyperparameters weak(int p, double beta_scale = 1000.0, double delta_scale = 1000.0) {
        Hyperparameters h;
        h.sigma_beta = beta_scale * Mat::Identity(p, p);
        h.sigma_delta_scale = delta_scale;
        h.alpha_a = h.lambda_a = 0.01;
        h.alpha_b = h.lambda_b = 0.01;
        h.alpha_e = h.lambda_e = 0.01;
        return h;
    }

    std::vector<std::string> validate(int p) const {
        std::vector<std::string> out;
        if (sigma_beta.rows() != p || sigma_beta.cols() != p)
            out.push_back("sigma_beta must be p x p");
        else {
            Eigen::LLT<Mat> llt(sigma_beta);
            if (llt.info() != Eigen::Success) out.push_back("sigma_beta must be positive definite");
        }
        auto pos = [&out](double v, const char* name) {
            if (!(v > 0.0)) out.push_back(std::string(name) + " must be strictly positive");
        };
        pos(sigma_delta_scale, "sigma_delta_scale");
        pos(alpha_a, "alpha_a");
        pos(lambda_a, "lambda_a");
        pos(alpha_b, "alpha_b");
        pos(lambda_b, "lambda_b");
        pos(alpha_e, "alpha_e");
        pos(lambda_e, "lambda_e");
        return out;
    }
};

/// Generative-model parameters used by the simulator.
struct TrueParameters {
    int k = 1;
    std::vector<Vec> beta;               // k vectors of length p
    std::vector<double> sigma_a2;        // k
    std::vector<double> sigma_b2;        // k
    std::vector<std::vector<double>> sigma_e2;  // k x g
    Mat delta;                           // (k-1) x d, delta_1 = 0 implicit
};

/// Designs for one simulated cluster.
struct ClusterDesign {
    Mat X, W, V;
    Vec u;
    std::vector<int> kappa;
};

// ---------------------------------------------------------------------------
// validate_dataset

/// Non-throwing invariant check; returns one message per violation.
inline std::vector<std::string> validate_dataset(const GroupedDataset& data) {
    std::vector<std::string> report;
    if (data.dims.n < 1) {
        report.push_back("dataset must contain at least one cluster");
        return report;
    }
    const Dims& d = data.dims;
    long total = 0;
    for (int i = 0; i < d.n; ++i) {
        const ClusterData& c = data.clusters[i];
        const std::string who = "cluster " + (c.id.empty() ? std::to_string(i + 1) : c.id);
        const Eigen::Index ni = c.n_obs();
        if (ni < 1) report.push_back(who + ": needs at least one observation");
        if (c.X.rows() != ni) report.push_back(who + ": X must have n_i rows");
        if (c.W.rows() != ni) report.push_back(who + ": W must have n_i rows");
        if (c.V.rows() != ni) report.push_back(who + ": V must have n_i rows");
        if (c.X.cols() != d.p) report.push_back(who + ": X must have p=" + std::to_string(d.p) + " columns");
        if (c.W.cols() != d.s1) report.push_back(who + ": W must have s1=" + std::to_string(d.s1) + " columns");
        if (c.V.cols() != d.s2) report.push_back(who + ": V must have s2=" + std::to_string(d.s2) + " columns");
        if (c.u.size() != d.d) report.push_back(who + ": u must have d=" + std::to_string(d.d) + " entries");
        if (static_cast<int>(c.kappa.size()) != d.g)
            report.push_back(who + ": kappa must have g=" + std::to_string(d.g) + " blocks");
        long ksum = 0;
        bool kneg = false;
        for (int v : c.kappa) {
            ksum += v;
            if (v < 0) kneg = true;
        }
        if (kneg) report.push_back(who + ": kappa entries must be nonnegative");
        if (ksum != ni)
            report.push_back(who + ": kappa blocks must sum to n_i (" + std::to_string(ksum) +
                             " != " + std::to_string(ni) + ")");
        total += ni;
    }
    if (total != d.N) report.push_back("dims.N does not match the sum of cluster sizes");
    return report;
}

// ---------------------------------------------------------------------------
// simulate_dataset

/// Softmax mixture weights for one covariate vector; delta has k-1 rows and
/// the first component is the zero reference.
inline Vec mixing_probs_rows(const Mat& delta, const Vec& u) {
    const int k = static_cast<int>(delta.rows()) + 1;
    Vec logits(k);
    logits(0) = 0.0;
    for (int j = 1; j < k; ++j) logits(j) = delta.row(j - 1).dot(u);
    const double lse = log_sum_exp(logits);
    return (logits.array() - lse).exp();
}

/// Draw a dataset from the generative model. Component effects b_j are drawn
/// once per component and shared by every cluster assigned to it. Draw order
/// (fixed for reproducibility): b_1..b_k, then per cluster z_i, a_i, eps_i.
inline std::pair<GroupedDataset, std::vector<int>> simulate_dataset(
    const TrueParameters& truth, const std::vector<ClusterDesign>& designs, std::uint64_t seed) {
    if (designs.empty()) throw ValidationError("simulate_dataset: no cluster designs");
    const int k = truth.k;
    if (static_cast<int>(truth.beta.size()) != k || static_cast<int>(truth.sigma_a2.size()) != k ||
        static_cast<int>(truth.sigma_b2.size()) != k || static_cast<int>(truth.sigma_e2.size()) != k)
        throw ValidationError("simulate_dataset: truth arrays must all have k entries");
    const int p = static_cast<int>(truth.beta[0].size());
    const int s1 = static_cast<int>(designs[0].W.cols());
    const int s2 = static_cast<int>(designs[0].V.cols());
    const int g = static_cast<int>(designs[0].kappa.size());
    if (k > 1 && (truth.delta.rows() != k - 1)) throw ValidationError("simulate_dataset: delta must have k-1 rows");
    for (const auto& de : designs) {
        if (de.X.cols() != p) throw ValidationError("simulate_dataset: X columns do not match beta length");
        if (de.W.cols() != s1 || de.V.cols() != s2 || static_cast<int>(de.kappa.size()) != g)
            throw ValidationError("simulate_dataset: design dimensions differ between clusters");
        for (int j = 0; j < k; ++j)
            if (static_cast<int>(truth.sigma_e2[j].size()) != g)
                throw ValidationError("simulate_dataset: sigma_e2 must be k x g");
    }

    Rng rng(seed);
    std::vector<Vec> b(k);
    for (int j = 0; j < k; ++j) b[j] = std::sqrt(truth.sigma_b2[j]) * rng.normal_vector(s2);

    std::vector<ClusterData> clusters;
    std::vector<int> labels;
    clusters.reserve(designs.size());
    for (std::size_t i = 0; i < designs.size(); ++i) {
        const ClusterDesign& de = designs[i];
        const Vec probs = k == 1 ? Vec::Ones(1) : mixing_probs_rows(truth.delta, de.u);
        const int z = rng.categorical(probs);
        const Vec a = std::sqrt(truth.sigma_a2[z]) * rng.normal_vector(s1);
        const Eigen::Index ni = de.X.rows();
        Vec eps(ni);
        Eigen::Index row = 0;
        for (int l = 0; l < g; ++l) {
            const double sd = std::sqrt(truth.sigma_e2[z][l]);
            for (int t = 0; t < de.kappa[l]; ++t) eps(row++) = sd * rng.normal();
        }
        if (row != ni) throw ValidationError("simulate_dataset: kappa does not partition the design rows");
        ClusterData c;
        c.id = std::to_string(i + 1);
        c.X = de.X;
        c.W = de.W;
        c.V = de.V;
        c.u = de.u;
        c.kappa = de.kappa;
        c.y = de.X * truth.beta[z] + de.W * a + de.V * b[z] + eps;
        clusters.push_back(std::move(c));
        labels.push_back(z + 1);
    }
    return {GroupedDataset::from_clusters(std::move(clusters)), labels};
}

}  // namespace mlmmvb
