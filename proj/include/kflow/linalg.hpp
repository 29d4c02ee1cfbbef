#pragma once
#include <Eigen/Dense>

#include "kflow/tensor.hpp"

namespace kflow {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Tensor& t);          // 2-D tensor to a dense matrix
Tensor from_eigen(const Mat& m);        // constant leaf
double logabsdet(const Mat& m);         // throws on a singular matrix
Mat cholesky_lower(const Mat& spd);     // throws if not positive definite
double min_eigenvalue(const Mat& sym);

}  // namespace kflow
