#include "kflow/linalg.hpp"

#include <cmath>

namespace kflow {

Mat to_eigen(const Tensor& t) {
  require(t.ndim() == 2, "to_eigen: expected a matrix, got " + shape_str(t.shape()));
  long m = t.dim(0), n = t.dim(1);
  Mat out(m, n);
  const auto& v = t.values();
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) out(i, j) = v[i * n + j];
  return out;
}

Tensor from_eigen(const Mat& m) {
  std::vector<double> v(static_cast<size_t>(m.rows() * m.cols()));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
  return Tensor({m.rows(), m.cols()}, std::move(v));
}

double logabsdet(const Mat& m) {
  require(m.rows() == m.cols(), "logabsdet: matrix not square");
  Eigen::PartialPivLU<Mat> lu(m);
  double acc = 0.0;
  for (long i = 0; i < m.rows(); ++i) {
    double d = std::abs(lu.matrixLU()(i, i));
    require(d > 0.0 && std::isfinite(d), "logabsdet: singular matrix");
    acc += std::log(d);
  }
  return acc;
}

Mat cholesky_lower(const Mat& spd) {
  Eigen::LLT<Mat> llt(spd);
  require(llt.info() == Eigen::Success, "cholesky: matrix not positive definite");
  return llt.matrixL();
}

double min_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, "eigenvalues: solver failed");
  return es.eigenvalues().minCoeff();
}

}  // namespace kflow
