#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mlmmvb/linalg.hpp"

namespace mlmmvb {

// Small helpers for the block-diagonal error structure. Observations within a
// cluster are block-contiguous, so every per-block quantity is a contiguous
// segment indexed through kappa.

/// Sum of v over each kappa block.
inline Vec block_sums(const Vec& v, const std::vector<int>& kappa) {
    Vec out(static_cast<Eigen::Index>(kappa.size()));
    Eigen::Index pos = 0;
    for (std::size_t l = 0; l < kappa.size(); ++l) {
        out(static_cast<Eigen::Index>(l)) = v.segment(pos, kappa[l]).sum();
        pos += kappa[l];
    }
    return out;
}

/// Per-row scale vector for blockdiag(s_1 I, ..., s_g I).
inline Vec block_scales(const std::vector<int>& kappa, const Vec& s) {
    Eigen::Index n = 0;
    for (int v : kappa) n += v;
    Vec out(n);
    Eigen::Index pos = 0;
    for (std::size_t l = 0; l < kappa.size(); ++l) {
        out.segment(pos, kappa[l]).setConstant(s(static_cast<Eigen::Index>(l)));
        pos += kappa[l];
    }
    return out;
}

/// M' blockdiag(s) M without forming the block-diagonal matrix.
inline Mat gram_blocked(const Mat& M, const std::vector<int>& kappa, const Vec& s) {
    return M.transpose() * (block_scales(kappa, s).asDiagonal() * M);
}

/// diag(A Sigma A'), i.e. row_t' Sigma row_t for each row of A.
inline Vec quad_diag(const Mat& A, const Mat& Sigma) {
    return (A * Sigma).cwiseProduct(A).rowwise().sum();
}

}  // namespace mlmmvb
