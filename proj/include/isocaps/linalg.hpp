#pragma once

#include <Eigen/Dense>

namespace isocaps {

// Row-major so that "reshape" and "vec" follow the row-major order used in
// every file format and capsule layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline double max_asymmetry(const Mat& a) {
    return (a - a.transpose()).cwiseAbs().maxCoeff();
}

inline Mat symmetrized(const Mat& a) {
    return 0.5 * (a + a.transpose());
}

}  // namespace isocaps
