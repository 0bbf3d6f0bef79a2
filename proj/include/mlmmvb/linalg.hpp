#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <boost/math/special_functions/digamma.hpp>

#include "mlmmvb/errors.hpp"

namespace mlmmvb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline double digamma(double x) { return boost::math::digamma(x); }

/// Cholesky of a symmetric positive-definite matrix. One retry with a jitter
/// of 1e-10 * trace/dim on the diagonal; anything still failing is a hard error.
inline Eigen::LLT<Mat> spd_llt(const Mat& m, const std::string& context) {
    Eigen::LLT<Mat> llt(m);
    if (llt.info() == Eigen::Success) return llt;
    const double jitter = 1e-10 * m.trace() / static_cast<double>(m.rows());
    Mat jittered = m;
    jittered.diagonal().array() += jitter;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success)
        throw NumericalError("factorization failed (not positive definite): " + context);
    return llt;
}

inline Mat spd_inverse(const Mat& m, const std::string& context) {
    const Eigen::Index n = m.rows();
    return spd_llt(m, context).solve(Mat::Identity(n, n));
}

inline double spd_logdet(const Mat& m, const std::string& context) {
    const auto llt = spd_llt(m, context);
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

inline double logdet_from_llt(const Eigen::LLT<Mat>& llt) {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// log(sum(exp(v))) with the max subtracted first.
inline double log_sum_exp(const Vec& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

/// Largest |eigenvalue| of a real square matrix (general, possibly complex spectrum).
inline double spectral_radius(const Mat& m) {
    if (m.rows() == 0) return 0.0;
    if (m.rows() != m.cols()) throw std::invalid_argument("spectral_radius: matrix must be square");
    Eigen::EigenSolver<Mat> es(m, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace mlmmvb
