#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "npsde/kernel.hpp"

namespace npsde {

/// Inducing-point parameterization of the drift vector field and the scalar
/// diffusion function. Both fields share the inducing locations Z.
struct InducingModel {
  Matrix Z;             // M x D inducing locations, one per row
  Matrix U_f;           // M x D drift inducing vectors
  Vector u_sigma;       // M diffusion inducing values
  KernelParams drift_params;
  KernelParams diff_params;
  DependencyMatrix A{1};
  Vector noise_vars;    // D observation noise variances (diagonal of Omega)

  InducingModel() = default;

  // Zero fields, identity A, unit noise.
  InducingModel(Matrix z, KernelParams drift, KernelParams diff)
      : Z(std::move(z)),
        U_f(Matrix::Zero(Z.rows(), Z.cols())),
        u_sigma(Vector::Zero(Z.rows())),
        drift_params(std::move(drift)),
        diff_params(std::move(diff)),
        A(Z.cols()),
        noise_vars(Vector::Ones(Z.cols())) {
    validate();
  }

  Eigen::Index dim() const { return Z.cols(); }
  Eigen::Index size() const { return Z.rows(); }

  // vec(U_f) with entry m*D + d holding U_f(m, d).
  Vector u_f() const {
    Vector u(U_f.size());
    for (Eigen::Index m = 0; m < U_f.rows(); ++m)
      for (Eigen::Index d = 0; d < U_f.cols(); ++d) u[m * U_f.cols() + d] = U_f(m, d);
    return u;
  }

  void set_u_f(const Eigen::Ref<const Vector>& u) {
    if (u.size() != U_f.size()) throw InputError("set_u_f: size mismatch");
    for (Eigen::Index m = 0; m < U_f.rows(); ++m)
      for (Eigen::Index d = 0; d < U_f.cols(); ++d) U_f(m, d) = u[m * U_f.cols() + d];
  }

  void validate() const {
    const Eigen::Index M = Z.rows(), D = Z.cols();
    if (M < 1 || D < 1) throw InputError("model needs at least one inducing point and dimension");
    if (!Z.allFinite()) throw InputError("inducing locations must be finite");
    if (U_f.rows() != M || U_f.cols() != D) throw InputError("U_f must be M x D");
    if (u_sigma.size() != M) throw InputError("u_sigma must have M entries");
    if (!U_f.allFinite() || !u_sigma.allFinite()) throw InputError("inducing values must be finite");
    drift_params.validate();
    diff_params.validate();
    if (drift_params.dim() != D || diff_params.dim() != D)
      throw InputError("kernel lengthscales must have one entry per state dimension");
    if (A.dim() != D) throw InputError("dependency matrix must be D x D");
    if (noise_vars.size() != D) throw InputError("noise_vars must have D entries");
    for (Eigen::Index d = 0; d < D; ++d)
      if (!(noise_vars[d] > 0.0) || !std::isfinite(noise_vars[d]))
        throw InputError("noise variances must be positive and finite");
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index j = i + 1; j < M; ++j)
        if (Z.row(i) == Z.row(j)) throw InputError("inducing locations must be distinct");
  }
};

namespace detail {

inline Eigen::LLT<Matrix> factor_gram(Matrix K, double variance, const char* which) {
  K.diagonal().array() += kRelativeJitter * variance;
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(K, Eigen::EigenvaluesOnly);
    std::ostringstream os;
    os << which << " Gram matrix is not positive definite after jitter (eigenvalues in ["
       << eig.eigenvalues().minCoeff() << ", " << eig.eigenvalues().maxCoeff() << "])";
    throw NumericalError(os.str());
  }
  return llt;
}

}  // namespace detail

/// Factorizations and solved weights for one InducingModel.
///
/// The factorizations depend only on Z, the kernel parameters and A. The
/// solved weights depend on the inducing values and are refreshed with
/// update_values(), which reuses the factorizations.
class FieldCache {
 public:
  explicit FieldCache(const InducingModel& m) : Z_(m.Z), drift_params_(m.drift_params), diff_params_(m.diff_params), A_(m.A) {
    m.validate();
    const Eigen::Index M = m.size(), D = m.dim();

    chol_diff_ = detail::factor_gram(gram(m.Z, m.Z, m.diff_params), m.diff_params.variance, "diffusion");
    kinv_diff_ = chol_diff_.solve(Matrix::Identity(M, M));

    chol_drift_ = detail::factor_gram(gram_blocked(m.Z, m.Z, m.drift_params, m.A), m.drift_params.variance, "drift");
    if (m.A.is_identity()) {
      // (K + eps I) (x) I_D factors blockwise, so the scalar inverse suffices.
      const auto llt = detail::factor_gram(gram(m.Z, m.Z, m.drift_params), m.drift_params.variance, "drift");
      kinv_drift_ = llt.solve(Matrix::Identity(M, M));
    } else {
      kinv_drift_ = chol_drift_.solve(Matrix::Identity(M * D, M * D));
    }
    update_values(m);
  }

  /// Re-solves the weights for new inducing values. Z, kernel parameters
  /// and A must be unchanged.
  void update_values(const InducingModel& m) {
    require_match(m);
    if (m.U_f.rows() != Z_.rows() || m.u_sigma.size() != Z_.rows())
      throw InputError("inducing values do not match cached model size");
    alpha_drift_ = chol_drift_.solve(m.u_f());
    alpha_diff_ = chol_diff_.solve(m.u_sigma);
    alpha_drift_rows_.resize(Z_.rows(), Z_.cols());
    for (Eigen::Index i = 0; i < Z_.rows(); ++i)
      for (Eigen::Index d = 0; d < Z_.cols(); ++d) alpha_drift_rows_(i, d) = alpha_drift_[i * Z_.cols() + d];
    if (!A_.is_identity()) alpha_drift_rows_ = alpha_drift_rows_ * A_.matrix();  // rows become (A alpha_m)^T
  }

  bool matches(const InducingModel& m) const {
    return m.Z.rows() == Z_.rows() && m.Z.cols() == Z_.cols() && m.Z == Z_ &&
           m.drift_params == drift_params_ && m.diff_params == diff_params_ && m.A == A_;
  }

  void require_match(const InducingModel& m) const {
    if (!matches(m)) throw std::logic_error("FieldCache does not correspond to this model (Z, kernel or A changed)");
  }

  const Eigen::LLT<Matrix>& chol_drift() const { return chol_drift_; }
  const Eigen::LLT<Matrix>& chol_diff() const { return chol_diff_; }
  const Vector& alpha_drift() const { return alpha_drift_; }
  const Vector& alpha_diff() const { return alpha_diff_; }

  // Row m holds A * alpha_m, the drift contribution per unit kernel weight.
  const Matrix& drift_weight_rows() const { return alpha_drift_rows_; }
  // (K_f(Z,Z) + jitter)^-1: M x M when A = I, otherwise MD x MD.
  const Matrix& drift_kinv() const { return kinv_drift_; }
  const Matrix& diff_kinv() const { return kinv_diff_; }

  const Matrix& Z() const { return Z_; }
  const KernelParams& drift_params() const { return drift_params_; }
  const KernelParams& diff_params() const { return diff_params_; }
  const DependencyMatrix& A() const { return A_; }

 private:
  Matrix Z_;
  KernelParams drift_params_;
  KernelParams diff_params_;
  DependencyMatrix A_;
  Eigen::LLT<Matrix> chol_drift_;
  Eigen::LLT<Matrix> chol_diff_;
  Matrix kinv_drift_;
  Matrix kinv_diff_;
  Vector alpha_drift_;
  Vector alpha_diff_;
  Matrix alpha_drift_rows_;
};

/// Everything the simulator and the sensitivity recursion need at one state.
/// Filled by evaluate_field(); the u-derivatives are optional.
struct LocalField {
  Vector drift;         // D
  Matrix drift_jac_x;   // D x D
  double diffusion = 0.0;
  Vector diff_grad_x;   // D
  Vector kf;            // M, drift kernel row k_f(x, Z)
  Vector ks;            // M, diffusion kernel row k_s(x, Z)
  Vector drift_w;       // M, (K+eps)^-1 k_f(x,Z) when A = I
  Matrix drift_jac_u;   // D x MD, only filled when A != I
  Vector diff_grad_u;   // M
};

/// Evaluates the fields at x. With derivs = false only drift and diffusion
/// are computed; with derivs = true also every partial derivative.
template <class X>
void evaluate_field(const Eigen::MatrixBase<X>& x, const FieldCache& c, LocalField& out, bool derivs) {
  const Matrix& Z = c.Z();
  const Eigen::Index M = Z.rows(), D = Z.cols();
  if (x.size() != D) throw InputError("field evaluation: state dimension mismatch");
  const auto& pf = c.drift_params();
  const auto& ps = c.diff_params();

  out.kf.resize(M);
  out.ks.resize(M);
  out.drift.setZero(D);
  out.diffusion = 0.0;
  if (derivs) {
    out.drift_jac_x.setZero(D, D);
    out.diff_grad_x.setZero(D);
  }
  const Matrix& wrows = c.drift_weight_rows();
  const Vector& as = c.alpha_diff();
  for (Eigen::Index m = 0; m < M; ++m) {
    double sf = 0.0, ss = 0.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      const double r = x[d] - Z(m, d);
      const double rf = r / pf.lengthscales[d];
      const double rs = r / ps.lengthscales[d];
      sf += rf * rf;
      ss += rs * rs;
    }
    const double kf = pf.variance * std::exp(-0.5 * sf);
    const double ks = ps.variance * std::exp(-0.5 * ss);
    out.kf[m] = kf;
    out.ks[m] = ks;
    out.drift.noalias() += kf * wrows.row(m).transpose();
    out.diffusion += ks * as[m];
    if (derivs) {
      for (Eigen::Index e = 0; e < D; ++e) {
        const double r = x[e] - Z(m, e);
        const double gf = -kf * r / (pf.lengthscales[e] * pf.lengthscales[e]);
        const double gs = -ks * r / (ps.lengthscales[e] * ps.lengthscales[e]);
        out.drift_jac_x.col(e).noalias() += gf * wrows.row(m).transpose();
        out.diff_grad_x[e] += gs * as[m];
      }
    }
  }
  if (derivs) {
    out.diff_grad_u.noalias() = c.diff_kinv() * out.ks;
    if (c.A().is_identity()) {
      out.drift_w.noalias() = c.drift_kinv() * out.kf;
      out.drift_jac_u.resize(0, 0);
    } else {
      Matrix kblock(D, M * D);
      for (Eigen::Index m = 0; m < M; ++m) kblock.block(0, m * D, D, D) = out.kf[m] * c.A().matrix();
      out.drift_jac_u.noalias() = kblock * c.drift_kinv();
      out.drift_w.resize(0);
    }
  }
}

/// Dense D x MD drift Jacobian with respect to vec(U_f) from a LocalField.
inline Matrix dense_drift_jac_u(const LocalField& lf, Eigen::Index D) {
  if (lf.drift_jac_u.size() > 0) return lf.drift_jac_u;
  const Eigen::Index M = lf.drift_w.size();
  Matrix J = Matrix::Zero(D, M * D);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index d = 0; d < D; ++d) J(d, m * D + d) = lf.drift_w[m];
  return J;
}

namespace detail {
inline void check_model_cache(const InducingModel& m, const FieldCache& c) {
  if (m.Z.rows() != c.Z().rows() || m.Z.cols() != c.Z().cols())
    throw std::logic_error("FieldCache does not correspond to this model");
}
}  // namespace detail

/// f(x) = K_f(x, Z) K_f(Z, Z)^-1 u_f
template <class X>
Vector drift_at(const Eigen::MatrixBase<X>& x, const InducingModel& m, const FieldCache& c) {
  detail::check_model_cache(m, c);
  LocalField lf;
  evaluate_field(x, c, lf, false);
  return lf.drift;
}

/// sigma(x) = K_s(x, Z) K_s(Z, Z)^-1 u_sigma. Signed; callers reporting a
/// physical diffusion should take the absolute value.
template <class X>
double diffusion_at(const Eigen::MatrixBase<X>& x, const InducingModel& m, const FieldCache& c) {
  detail::check_model_cache(m, c);
  LocalField lf;
  evaluate_field(x, c, lf, false);
  return lf.diffusion;
}

template <class X>
Matrix drift_jac_x(const Eigen::MatrixBase<X>& x, const InducingModel& m, const FieldCache& c) {
  detail::check_model_cache(m, c);
  LocalField lf;
  evaluate_field(x, c, lf, true);
  return lf.drift_jac_x;
}

template <class X>
Matrix drift_jac_u(const Eigen::MatrixBase<X>& x, const InducingModel& m, const FieldCache& c) {
  detail::check_model_cache(m, c);
  LocalField lf;
  evaluate_field(x, c, lf, true);
  return dense_drift_jac_u(lf, m.dim());
}

template <class X>
Vector diff_grad_x(const Eigen::MatrixBase<X>& x, const InducingModel& m, const FieldCache& c) {
  detail::check_model_cache(m, c);
  LocalField lf;
  evaluate_field(x, c, lf, true);
  return lf.diff_grad_x;
}

template <class X>
Vector diff_grad_u(const Eigen::MatrixBase<X>& x, const InducingModel& m, const FieldCache& c) {
  detail::check_model_cache(m, c);
  LocalField lf;
  evaluate_field(x, c, lf, true);
  return lf.diff_grad_u;
}

/// log N(u_f | 0, K_f(Z,Z)) + log N(u_sigma | 0, K_s(Z,Z)), jittered Grams.
inline double log_prior(const InducingModel& m, const FieldCache& c) {
  c.require_match(m);
  const Vector uf = m.u_f();
  const double two_pi = 2.0 * std::numbers::pi;
  auto gauss = [&](const Eigen::LLT<Matrix>& llt, const Vector& u, const Vector& alpha) {
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * u.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(u.size()) * std::log(two_pi);
  };
  const Vector af = c.chol_drift().solve(uf);
  const Vector as = c.chol_diff().solve(m.u_sigma);
  return gauss(c.chol_drift(), uf, af) + gauss(c.chol_diff(), m.u_sigma, as);
}

/// Gradients of log_prior with respect to vec(U_f) and u_sigma.
inline std::pair<Vector, Vector> log_prior_grad(const InducingModel& m, const FieldCache& c) {
  c.require_match(m);
  return {-c.chol_drift().solve(m.u_f()), -c.chol_diff().solve(m.u_sigma)};
}

}  // namespace npsde
