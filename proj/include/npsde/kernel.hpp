#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "npsde/error.hpp"

namespace npsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Gaussian kernel hyperparameters: signal variance and one lengthscale per
/// state dimension. Used for both the drift and the diffusion kernel.
struct KernelParams {
  double variance = 1.0;
  Vector lengthscales;

  KernelParams() = default;
  KernelParams(double var, Vector ls) : variance(var), lengthscales(std::move(ls)) { validate(); }

  static KernelParams isotropic(Eigen::Index dim, double lengthscale, double var = 1.0) {
    return KernelParams(var, Vector::Constant(dim, lengthscale));
  }

  Eigen::Index dim() const { return lengthscales.size(); }

  void validate() const {
    if (!(variance > 0.0) || !std::isfinite(variance))
      throw InputError("kernel variance must be positive and finite");
    if (lengthscales.size() == 0) throw InputError("kernel needs at least one lengthscale");
    for (Eigen::Index d = 0; d < lengthscales.size(); ++d)
      if (!(lengthscales[d] > 0.0) || !std::isfinite(lengthscales[d]))
        throw InputError("kernel lengthscales must be positive and finite");
  }

  friend bool operator==(const KernelParams& a, const KernelParams& b) {
    return a.variance == b.variance && a.lengthscales.size() == b.lengthscales.size() &&
           a.lengthscales == b.lengthscales;
  }
};

// Diagonal jitter added to every Gram matrix before factorization, relative
// to the kernel variance.
inline constexpr double kRelativeJitter = 1e-6;

namespace detail {

template <class A, class B>
void check_dims(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x2, const KernelParams& p) {
  if (x.size() != p.dim() || x2.size() != p.dim())
    throw InputError("rbf: state dimension " + std::to_string(x.size()) + "/" +
                     std::to_string(x2.size()) + " does not match kernel dimension " +
                     std::to_string(p.dim()));
}

// Unchecked kernel value for hot loops.
template <class A, class B>
double rbf_unchecked(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x2, const KernelParams& p) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double r = (x[d] - x2[d]) / p.lengthscales[d];
    s += r * r;
  }
  return p.variance * std::exp(-0.5 * s);
}

}  // namespace detail

/// k(x, x2) = variance * exp(-1/2 sum_d (x_d - x2_d)^2 / l_d^2)
template <class A, class B>
double rbf(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x2, const KernelParams& p) {
  detail::check_dims(x, x2, p);
  return detail::rbf_unchecked(x, x2, p);
}

/// Gradient of rbf with respect to its first argument.
template <class A, class B>
Vector rbf_grad_x(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& x2, const KernelParams& p) {
  detail::check_dims(x, x2, p);
  const double k = detail::rbf_unchecked(x, x2, p);
  Vector g(x.size());
  for (Eigen::Index d = 0; d < x.size(); ++d)
    g[d] = -k * (x[d] - x2[d]) / (p.lengthscales[d] * p.lengthscales[d]);
  return g;
}

/// Gram matrix between the rows of X (N x D) and the rows of Z (M x D).
inline Matrix gram(const Matrix& X, const Matrix& Z, const KernelParams& p) {
  if (X.rows() == 0 || Z.rows() == 0) throw InputError("gram: empty state list");
  if (X.cols() != p.dim() || Z.cols() != p.dim())
    throw InputError("gram: state dimension does not match kernel dimension");
  Matrix K(X.rows(), Z.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Z.rows(); ++j) K(i, j) = detail::rbf_unchecked(X.row(i), Z.row(j), p);
  return K;
}

/// Symmetric positive-semidefinite coupling between output dimensions of a
/// decomposable matrix-valued kernel k(x, x') * A.
class DependencyMatrix {
 public:
  explicit DependencyMatrix(Eigen::Index dim) : A_(Matrix::Identity(dim, dim)), identity_(true) {}

  explicit DependencyMatrix(Matrix A) : A_(std::move(A)) {
    if (A_.rows() != A_.cols() || A_.rows() == 0) throw InputError("dependency matrix must be square");
    if (!A_.allFinite()) throw InputError("dependency matrix has non-finite entries");
    if ((A_ - A_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + A_.cwiseAbs().maxCoeff()))
      throw InputError("dependency matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(A_, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * (1.0 + eig.eigenvalues().cwiseAbs().maxCoeff()))
      throw InputError("dependency matrix must be positive semidefinite");
    identity_ = A_.isIdentity(0.0);
  }

  const Matrix& matrix() const { return A_; }
  Eigen::Index dim() const { return A_.rows(); }
  bool is_identity() const { return identity_; }

  friend bool operator==(const DependencyMatrix& a, const DependencyMatrix& b) {
    return a.A_.rows() == b.A_.rows() && a.A_ == b.A_;
  }

 private:
  Matrix A_;
  bool identity_ = false;
};

/// Block Gram matrix (ND x MD). Block (i, j) is the contiguous D x D tile
/// rbf(X_i, Z_j) * A, so vectors are ordered state-major, dimension-minor.
inline Matrix gram_blocked(const Matrix& X, const Matrix& Z, const KernelParams& p, const DependencyMatrix& A) {
  if (A.dim() != p.dim()) throw InputError("gram_blocked: dependency matrix dimension mismatch");
  const Matrix K = gram(X, Z, p);
  const Eigen::Index D = A.dim();
  Matrix B(X.rows() * D, Z.rows() * D);
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Z.rows(); ++j) B.block(i * D, j * D, D, D) = K(i, j) * A.matrix();
  return B;
}

}  // namespace npsde
