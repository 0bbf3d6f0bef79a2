#pragma once

// Shared fixtures: small random instances and states for the variational
// tests, plus the Monte-Carlo bound estimator used as the closed-form oracle.

#include <cstdint>
#include <vector>

#include "mlmmvb/mlmmvb.hpp"

namespace testsup {

using namespace mlmmvb;

struct Instance {
    GroupedDataset data;
    Hyperparameters hyper;
};

/// Random ragged dataset with the requested shape. Designs are N(0,1);
/// responses come from a k-component draw of the generative model.
Instance random_instance(std::uint64_t seed, int n, int k, int p, int s1, int s2, int d, int g,
                         int ni_min = 2, int ni_max = 6, bool shared_design_xwv = false);

/// Valid random variational state for the given dataset and parametrization.
VariationalState random_state(std::uint64_t seed, const GroupedDataset& data,
                              const Hyperparameters& hyper, int k, Parametrization par);

struct McEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Monte-Carlo estimate of E_q[log p(y,theta)] - E_q[log q(theta)] with draws
/// from the factorized q (q(delta) treated as the point mass). Independent of
/// the closed-form path: densities are evaluated directly.
McEstimate mc_lower_bound(const VariationalState& st, const GroupedDataset& data,
                          const Hyperparameters& hyper, std::uint64_t seed, int draws);

}  // namespace testsup
