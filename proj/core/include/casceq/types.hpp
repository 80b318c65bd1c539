#pragma once

#include <Eigen/Core>

namespace casceq {

// Storage precision for hidden states; matches the f32 container payload.
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Compute precision for every fit and statistic.
using MatrixD = Eigen::MatrixXd;
using VectorD = Eigen::VectorXd;

}  // namespace casceq
