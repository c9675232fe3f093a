#pragma once

#include <Eigen/Dense>

namespace escape {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = VectorX<double>;
using Mat = MatrixX<double>;

// Network iterates are stored as a K x M matrix: row k is agent k's model.
// The stacked block vector col{w_1, ..., w_K} is the row-major flattening.
using AgentMatrix = Mat;

}  // namespace escape
