#include "support.hpp"

#include <cmath>

namespace testsup {

namespace {

Vec draw_mvn(Rng& rng, const Vec& mu, const Eigen::LLT<Mat>& llt, double& logq) {
    const Eigen::Index s = mu.size();
    const Vec z = rng.normal_vector(s);
    const Vec x = mu + llt.matrixL() * z;
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    logq += -0.5 * s * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * z.squaredNorm();
    return x;
}

double log_normal_iso(const Vec& x, const Vec& mu, double var) {
    const double s = static_cast<double>(x.size());
    return -0.5 * s * std::log(2.0 * M_PI * var) - 0.5 * (x - mu).squaredNorm() / var;
}

double log_ig(double x, double alpha, double lambda) {
    return alpha * std::log(lambda) - std::lgamma(alpha) - (alpha + 1.0) * std::log(x) - lambda / x;
}

double log_normal_full(const Vec& x, const Vec& mu, const Eigen::LLT<Mat>& llt) {
    const Vec dev = x - mu;
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Vec half = llt.matrixL().solve(dev);
    return -0.5 * x.size() * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * half.squaredNorm();
}

}  // namespace

Instance random_instance(std::uint64_t seed, int n, int k, int p, int s1, int s2, int d, int g,
                         int ni_min, int ni_max, bool shared_design_xwv) {
    Rng rng = Rng::derive(seed, {0xDA7A});
    TrueParameters truth;
    truth.k = k;
    for (int j = 0; j < k; ++j) {
        truth.beta.push_back(rng.normal_vector(p));
        truth.sigma_a2.push_back(0.3 + rng.uniform());
        truth.sigma_b2.push_back(0.3 + rng.uniform());
        std::vector<double> se(g);
        for (int l = 0; l < g; ++l) se[l] = 0.3 + rng.uniform();
        truth.sigma_e2.push_back(se);
    }
    truth.delta = Mat(k - 1, d);
    for (int j = 0; j + 1 < k; ++j)
        truth.delta.row(j) = 0.5 * rng.normal_vector(d).transpose();

    std::vector<ClusterDesign> designs;
    for (int i = 0; i < n; ++i) {
        const int ni = ni_min + static_cast<int>(rng.uniform() * (ni_max - ni_min + 1));
        ClusterDesign de;
        de.X = Mat::NullaryExpr(ni, p, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
        if (shared_design_xwv) {
            de.W = de.X;
            de.V = de.X;
        } else {
            de.W = Mat::NullaryExpr(ni, s1, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
            de.V = Mat::NullaryExpr(ni, s2, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
        }
        de.u = Vec::Ones(d);
        for (int c = 1; c < d; ++c) de.u(c) = rng.normal();
        de.kappa.assign(g, 0);
        for (int t = 0; t < ni; ++t) ++de.kappa[static_cast<int>(rng.uniform() * g)];
        std::sort(de.kappa.begin(), de.kappa.end());  // any split works; keep deterministic
        designs.push_back(std::move(de));
    }
    Instance inst{simulate_dataset(truth, designs, seed ^ 0x5EEDULL).first,
                  Hyperparameters::weak(p, 100.0, 100.0)};
    return inst;
}

VariationalState random_state(std::uint64_t seed, const GroupedDataset& data,
                              const Hyperparameters& hyper, int k, Parametrization par) {
    Rng rng = Rng::derive(seed, {0x57A7E});
    const Dims& dm = data.dims;
    const int p = dm.p;
    const int s1_eff = par == Parametrization::Uncentered ? dm.s1 : p;
    const int s2_eff = par == Parametrization::FullCentered ? p : dm.s2;

    auto rand_spd = [&](int s) {
        Mat a = Mat::NullaryExpr(s, s, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
        return Mat(0.2 * (a * a.transpose()) + 0.3 * Mat::Identity(s, s));
    };

    VariationalState st;
    st.par = par;
    st.k = k;
    for (int j = 0; j < k; ++j) {
        st.mu_beta.push_back(rng.normal_vector(p));
        st.sigma_beta.push_back(rand_spd(p));
        st.mu_b.push_back(rng.normal_vector(s2_eff));
        st.sigma_b.push_back(rand_spd(s2_eff));
        if (par == Parametrization::FullCentered) {
            st.mu_nu.push_back(rng.normal_vector(p));
            st.sigma_nu.push_back(rand_spd(p));
        }
    }
    auto rand_pos = [&](double lo, double hi) { return lo + rng.uniform() * (hi - lo); };
    st.alpha_a = Vec::NullaryExpr(k, [&](Eigen::Index) { return rand_pos(1.5, 6.0); });
    st.lambda_a = Vec::NullaryExpr(k, [&](Eigen::Index) { return rand_pos(0.5, 4.0); });
    st.alpha_b = Vec::NullaryExpr(k, [&](Eigen::Index) { return rand_pos(1.5, 6.0); });
    st.lambda_b = Vec::NullaryExpr(k, [&](Eigen::Index) { return rand_pos(0.5, 4.0); });
    st.alpha_e = Mat::NullaryExpr(k, dm.g, [&](Eigen::Index, Eigen::Index) { return rand_pos(1.5, 6.0); });
    st.lambda_e = Mat::NullaryExpr(k, dm.g, [&](Eigen::Index, Eigen::Index) { return rand_pos(0.5, 4.0); });
    for (int i = 0; i < dm.n; ++i) {
        st.mu_a.push_back(rng.normal_vector(s1_eff));
        st.sigma_a.push_back(rand_spd(s1_eff));
    }
    st.Q = Mat(dm.n, k);
    for (int i = 0; i < dm.n; ++i) {
        Vec w(k);
        for (int j = 0; j < k; ++j) w(j) = std::exp(rng.normal());
        st.Q.row(i) = (w / w.sum()).transpose();
    }
    st.mu_delta = Mat::NullaryExpr(k - 1, dm.d, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    st.resp_total = st.Q.colwise().sum();
    st.resp_kappa = Mat::Zero(k, dm.g);
    for (int i = 0; i < dm.n; ++i)
        for (int j = 0; j < k; ++j)
            for (int l = 0; l < dm.g; ++l) st.resp_kappa(j, l) += st.Q(i, j) * data.clusters[i].kappa[l];
    return st;
}

McEstimate mc_lower_bound(const VariationalState& st, const GroupedDataset& data,
                          const Hyperparameters& hyper, std::uint64_t seed, int draws) {
    Rng rng = Rng::derive(seed, {0x4D43});
    const Dims& dm = data.dims;
    const int k = st.k, n = dm.n;
    const Parametrization par = st.par;

    std::vector<Eigen::LLT<Mat>> llt_beta, llt_b, llt_nu, llt_a;
    for (int j = 0; j < k; ++j) {
        llt_beta.emplace_back(st.sigma_beta[j]);
        llt_b.emplace_back(st.sigma_b[j]);
        if (par == Parametrization::FullCentered) llt_nu.emplace_back(st.sigma_nu[j]);
    }
    for (int i = 0; i < n; ++i) llt_a.emplace_back(st.sigma_a[i]);
    const Eigen::LLT<Mat> llt_prior(hyper.sigma_beta);

    // log prior of the point-mass delta and the gating log-probs, constant across draws
    double log_p_delta = 0.0;
    if (st.mu_delta.size() > 0) {
        const Vec flat = flatten_delta(st.mu_delta);
        log_p_delta = -0.5 * flat.size() * std::log(2.0 * M_PI * hyper.sigma_delta_scale) -
                      0.5 * flat.squaredNorm() / hyper.sigma_delta_scale;
    }
    std::vector<Vec> log_gate(n);
    for (int i = 0; i < n; ++i) {
        const Vec pr = mixing_probs(st.mu_delta, data.clusters[i].u);
        log_gate[i] = pr.array().log();
    }

    double sum = 0.0, sumsq = 0.0;
    for (int t = 0; t < draws; ++t) {
        double logq = 0.0, logp = log_p_delta;

        std::vector<Vec> beta(k), b_or_nu(k);
        Vec sa2(k), sb2(k);
        Mat se2(k, dm.g);
        for (int j = 0; j < k; ++j) {
            beta[j] = draw_mvn(rng, st.mu_beta[j], llt_beta[j], logq);
            logp += log_normal_full(beta[j], Vec::Zero(dm.p), llt_prior);
            sa2(j) = rng.inverse_gamma(st.alpha_a(j), st.lambda_a(j));
            logq += log_ig(sa2(j), st.alpha_a(j), st.lambda_a(j));
            logp += log_ig(sa2(j), hyper.alpha_a, hyper.lambda_a);
            sb2(j) = rng.inverse_gamma(st.alpha_b(j), st.lambda_b(j));
            logq += log_ig(sb2(j), st.alpha_b(j), st.lambda_b(j));
            logp += log_ig(sb2(j), hyper.alpha_b, hyper.lambda_b);
            for (int l = 0; l < dm.g; ++l) {
                se2(j, l) = rng.inverse_gamma(st.alpha_e(j, l), st.lambda_e(j, l));
                logq += log_ig(se2(j, l), st.alpha_e(j, l), st.lambda_e(j, l));
                logp += log_ig(se2(j, l), hyper.alpha_e, hyper.lambda_e);
            }
            if (par == Parametrization::FullCentered) {
                b_or_nu[j] = draw_mvn(rng, st.mu_nu[j], llt_nu[j], logq);
                logp += log_normal_iso(b_or_nu[j], beta[j], sb2(j));
            } else {
                b_or_nu[j] = draw_mvn(rng, st.mu_b[j], llt_b[j], logq);
                logp += log_normal_iso(b_or_nu[j], Vec::Zero(b_or_nu[j].size()), sb2(j));
            }
        }

        for (int i = 0; i < n; ++i) {
            const ClusterData& c = data.clusters[i];
            const Vec a = draw_mvn(rng, st.mu_a[i], llt_a[i], logq);
            const int z = rng.categorical(st.Q.row(i).transpose());
            logq += std::log(st.Q(i, z));
            logp += log_gate[i](z);

            Vec mean;
            switch (par) {
                case Parametrization::Uncentered:
                    logp += log_normal_iso(a, Vec::Zero(a.size()), sa2(z));
                    mean = c.X * beta[z] + c.W * a + c.V * b_or_nu[z];
                    break;
                case Parametrization::PartialCentered:
                    logp += log_normal_iso(a, beta[z], sa2(z));
                    mean = c.X * a + c.V * b_or_nu[z];
                    break;
                case Parametrization::FullCentered:
                    logp += log_normal_iso(a, b_or_nu[z], sa2(z));
                    mean = c.X * a;
                    break;
            }
            Eigen::Index pos = 0;
            for (int l = 0; l < dm.g; ++l) {
                if (c.kappa[l] == 0) continue;
                const Vec dev = c.y.segment(pos, c.kappa[l]) - mean.segment(pos, c.kappa[l]);
                logp += -0.5 * c.kappa[l] * std::log(2.0 * M_PI * se2(z, l)) -
                        0.5 * dev.squaredNorm() / se2(z, l);
                pos += c.kappa[l];
            }
        }
        const double v = logp - logq;
        sum += v;
        sumsq += v * v;
    }
    McEstimate est;
    est.mean = sum / draws;
    const double var = (sumsq - sum * sum / draws) / (draws - 1.0);
    est.stderr_ = std::sqrt(var / draws);
    return est;
}

}  // namespace testsup
