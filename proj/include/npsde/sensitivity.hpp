#pragma once

#include <vector>

#include "npsde/simulate.hpp"

namespace npsde {

/// Derivatives of the current simulated state with respect to vec(U_f)
/// (D x MD) and u_sigma (D x M).
struct SensitivityState {
  Matrix dxdu_f;
  Matrix dxdu_s;

  static SensitivityState zero(Eigen::Index D, Eigen::Index M) {
    return {Matrix::Zero(D, M * D), Matrix::Zero(D, M)};
  }

  bool all_finite() const { return dxdu_f.allFinite() && dxdu_s.allFinite(); }
};

namespace detail {

// In-place sensitivity update given the field evaluated at the pre-step state.
inline void propagate_in_place(SensitivityState& s, const LocalField& lf, double dt, const Vector& dW,
                               Eigen::Index D) {
  // State feedback enters through both fields for both parameter blocks.
  const Eigen::RowVectorXd gs_f = lf.diff_grad_x.transpose() * s.dxdu_f;
  Eigen::RowVectorXd gs_s = lf.diff_grad_x.transpose() * s.dxdu_s;
  gs_s += lf.diff_grad_u.transpose();

  Matrix jf = lf.drift_jac_x * s.dxdu_f;
  const Matrix js = lf.drift_jac_x * s.dxdu_s;
  if (lf.drift_jac_u.size() > 0) {
    jf += lf.drift_jac_u;
  } else {
    const Eigen::Index M = lf.drift_w.size();
    for (Eigen::Index m = 0; m < M; ++m)
      for (Eigen::Index d = 0; d < D; ++d) jf(d, m * D + d) += lf.drift_w[m];
  }
  s.dxdu_f.noalias() += dt * jf;
  s.dxdu_f.noalias() += dW * gs_f;
  s.dxdu_s.noalias() += dt * js;
  s.dxdu_s.noalias() += dW * gs_s;
}

}  // namespace detail

/// One Euler-Maruyama step of the sensitivity recursion, taken from state x.
///
/// dx'/du_f = dx/du_f + (df/dx dx/du_f + df/du_f) dt + dW (dsigma/dx dx/du_f)
/// dx'/du_s = dx/du_s + (df/dx dx/du_s) dt + dW (dsigma/dx dx/du_s + dsigma/du_s)
inline SensitivityState propagate_step(SensitivityState s, const Vector& x, const InducingModel& m,
                                       const FieldCache& c, double dt, const Vector& dW) {
  detail::check_model_cache(m, c);
  const Eigen::Index D = m.dim(), M = m.size();
  if (s.dxdu_f.rows() != D || s.dxdu_f.cols() != M * D || s.dxdu_s.rows() != D || s.dxdu_s.cols() != M)
    throw InputError("propagate_step: sensitivity shapes do not match the model");
  if (dW.size() != D) throw InputError("propagate_step: increment dimension mismatch");
  LocalField lf;
  evaluate_field(x, c, lf, true);
  detail::propagate_in_place(s, lf, dt, dW, D);
  if (!s.all_finite()) throw SensitivityError("non-finite sensitivity", 0);
  return s;
}

/// A simulated path and the sensitivities at the grid's observation nodes.
struct SensitivePath {
  Matrix path;                              // (n_steps + 1) x D
  Matrix obs_states;                        // states at grid.obs_index, one per row
  std::vector<SensitivityState> at_obs;     // one per grid.obs_index entry
};

/// Runs the path and its sensitivities together in one pass.
inline SensitivePath simulate_with_sensitivities(const InducingModel& m, const FieldCache& c, const Vector& x0,
                                                 const TimeGrid& grid, const Increments& increments,
                                                 std::size_t sample = 0) {
  detail::check_model_cache(m, c);
  const Eigen::Index D = m.dim(), M = m.size();
  if (x0.size() != D) throw InputError("simulate_with_sensitivities: initial state dimension mismatch");
  if (increments.rows() != static_cast<Eigen::Index>(grid.n_steps) || increments.cols() != D)
    throw InputError("simulate_with_sensitivities: increments must be n_steps x D");

  SensitivePath out;
  out.path.resize(static_cast<Eigen::Index>(grid.n_nodes()), D);
  out.at_obs.reserve(grid.obs_index.size());
  out.obs_states.resize(static_cast<Eigen::Index>(grid.obs_index.size()), D);

  SensitivityState s = SensitivityState::zero(D, M);
  Vector x = x0, dW(D);
  LocalField lf;
  std::size_t next_obs = 0;
  auto record = [&](std::size_t node) {
    while (next_obs < grid.obs_index.size() && grid.obs_index[next_obs] == node) {
      out.obs_states.row(static_cast<Eigen::Index>(next_obs)) = x.transpose();
      out.at_obs.push_back(s);
      ++next_obs;
    }
  };
  out.path.row(0) = x.transpose();
  record(0);
  for (std::size_t i = 0; i < grid.n_steps; ++i) {
    evaluate_field(x, c, lf, true);
    dW = increments.row(static_cast<Eigen::Index>(i)).transpose();
    detail::propagate_in_place(s, lf, grid.dt, dW, D);
    x += lf.drift * grid.dt + lf.diffusion * dW;
    detail::guard_state(x, i + 1, sample);
    if (!s.all_finite()) throw SensitivityError("non-finite sensitivity", i + 1, sample);
    out.path.row(static_cast<Eigen::Index>(i + 1)) = x.transpose();
    record(i + 1);
  }
  return out;
}

}  // namespace npsde
