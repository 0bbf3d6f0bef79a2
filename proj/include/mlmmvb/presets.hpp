#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mlmmvb/data.hpp"
#include "mlmmvb/errors.hpp"

namespace mlmmvb {

/// Hyperparameter recipes used across the worked examples: N(0, 1000 I)
/// effect priors with IG(0.01, 0.01) variances, and a wide-beta variant with
/// N(0, 10000 I) on the fixed effects.
inline Hyperparameters hyper_preset(const std::string& name, int p) {
    if (name == "default" || name == "weak") return Hyperparameters::weak(p, 1000.0, 1000.0);
    if (name == "wide-beta") return Hyperparameters::weak(p, 10000.0, 1000.0);
    throw ConfigError("unknown hyperparameter preset: " + name);
}

struct SimulationPreset {
    TrueParameters truth;
    std::vector<ClusterDesign> designs;
};

/// Sinusoidal time-course design: rows (cos(2 pi 7 l / 53), sin(2 pi 7 l / 53)),
/// l = 0..T-1 (7-minute sampling over a 53-minute cycle).
inline Mat timecourse_design(int t_points = 18) {
    Mat X(t_points, 2);
    for (int l = 0; l < t_points; ++l) {
        const double ang = 2.0 * M_PI * (7.0 * l) / 53.0;
        X(l, 0) = std::cos(ang);
        X(l, 1) = std::sin(ang);
    }
    return X;
}

/// Twelve-component time-course protocol: 499 clusters of 18 observations,
/// shared sinusoidal fixed-effect design, W = ones, V = identity, intercept-only
/// gating with target sizes 43,48,85,49,65,77,8,21,18,15,34,36.
inline SimulationPreset twelve_cluster_timecourse() {
    const int n = 499, t_points = 18, k = 12;
    const Mat X = timecourse_design(t_points);

    const std::vector<double> sizes = {43, 48, 85, 49, 65, 77, 8, 21, 18, 15, 34, 36};
    const std::vector<double> amp = {1.8, 1.2, 2.1, 0.9, 1.5, 2.4, 1.0, 1.6, 2.0, 1.3, 0.8, 2.2};
    const std::vector<double> phase = {0.0,  0.55, 1.10, 1.70, 2.25, 2.80,
                                       3.40, 3.95, 4.50, 5.10, 5.65, 6.10};

    TrueParameters truth;
    truth.k = k;
    for (int j = 0; j < k; ++j) {
        Vec b(2);
        b << amp[j] * std::cos(phase[j]), amp[j] * std::sin(phase[j]);
        truth.beta.push_back(b);
        truth.sigma_a2.push_back(0.05);
        truth.sigma_b2.push_back(0.02);
        truth.sigma_e2.push_back({0.12});
    }
    truth.delta = Mat(k - 1, 1);
    for (int j = 1; j < k; ++j) truth.delta(j - 1, 0) = std::log(sizes[j] / sizes[0]);

    ClusterDesign de;
    de.X = X;
    de.W = Mat::Ones(t_points, 1);
    de.V = Mat::Identity(t_points, t_points);
    de.u = Vec::Ones(1);
    de.kappa = {t_points};

    SimulationPreset preset;
    preset.truth = truth;
    preset.designs.assign(n, de);
    return preset;
}

/// Small single-component dataset for smoke runs: sinusoidal design,
/// intercept random effect, identity component effect.
inline SimulationPreset one_component_toy(int n = 30, int t_points = 6) {
    Mat X(t_points, 2);
    for (int l = 0; l < t_points; ++l) {
        const double ang = 2.0 * M_PI * l / t_points;
        X(l, 0) = std::cos(ang);
        X(l, 1) = std::sin(ang);
    }
    TrueParameters truth;
    truth.k = 1;
    Vec b(2);
    b << 1.0, -0.5;
    truth.beta.push_back(b);
    truth.sigma_a2.push_back(0.05);
    truth.sigma_b2.push_back(0.02);
    truth.sigma_e2.push_back({0.1});
    truth.delta = Mat(0, 1);

    ClusterDesign de;
    de.X = X;
    de.W = Mat::Ones(t_points, 1);
    de.V = Mat::Identity(t_points, t_points);
    de.u = Vec::Ones(1);
    de.kappa = {t_points};

    SimulationPreset preset;
    preset.truth = truth;
    preset.designs.assign(n, de);
    return preset;
}

inline SimulationPreset simulation_preset(const std::string& name) {
    if (name == "twelve-cluster-timecourse") return twelve_cluster_timecourse();
    if (name == "one-component-toy") return one_component_toy();
    throw ConfigError("unknown simulation preset: " + name);
}

}  // namespace mlmmvb
