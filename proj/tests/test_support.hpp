#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "crg/autodiff.hpp"
#include "crg/nn.hpp"
#include "crg/rng.hpp"

namespace crg::test {

using ad::Mat;
using ad::Value;

inline Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

/// Central finite differences against the analytic gradient of a scalar
/// function of the given leaves. For each leaf the error is the Frobenius
/// norm of (analytic - numeric) relative to the larger of the two norms;
/// returns the worst leaf. `build` must re-evaluate the full graph.
inline double grad_check(const std::function<Value()>& build,
                         const std::vector<Value>& leaves, double eps = 1e-6) {
    Value loss = build();
    ad::GradStore gs = ad::backward(loss);
    double worst = 0.0;
    for (const auto& leaf : leaves) {
        const Mat* g = gs.find(leaf);
        Mat analytic = g ? *g : Mat::Zero(leaf->value.rows(), leaf->value.cols());
        Mat numeric(leaf->value.rows(), leaf->value.cols());
        for (Eigen::Index i = 0; i < leaf->value.rows(); ++i) {
            for (Eigen::Index j = 0; j < leaf->value.cols(); ++j) {
                double orig = leaf->value(i, j);
                double h = eps * std::max(1.0, std::abs(orig));
                leaf->value(i, j) = orig + h;
                double fp = ad::scalar(build());
                leaf->value(i, j) = orig - h;
                double fm = ad::scalar(build());
                leaf->value(i, j) = orig;
                numeric(i, j) = (fp - fm) / (2.0 * h);
            }
        }
        double denom = std::max({analytic.norm(), numeric.norm(), 1e-12});
        double rel = (analytic - numeric).norm() / denom;
        if (rel > worst) worst = rel;
    }
    return worst;
}

}  // namespace crg::test
