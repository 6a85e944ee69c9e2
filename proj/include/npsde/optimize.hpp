#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npsde/lbfgs.hpp"
#include "npsde/objective.hpp"

namespace npsde {

/// One axis of the inducing grid. NaN bounds are filled in from the data's
/// range widened by 10% on each side.
struct GridAxis {
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  int count = 10;
};

/// Isotropic drift and diffusion lengthscales tried by the fit.
struct LengthscaleCandidate {
  double drift = 1.0;
  double diffusion = 1.0;
  friend bool operator==(const LengthscaleCandidate&, const LengthscaleCandidate&) = default;
};

// Relative grid used when FitConfig::lengthscale_grid is empty; multiplied
// by the observation standard deviation.
inline constexpr double kDefaultLengthscaleMultipliers[] = {0.2, 0.5, 1.0, 2.0};

struct FitConfig {
  int max_iters = 500;
  double grad_tol = 1e-4;
  std::vector<LengthscaleCandidate> lengthscale_grid;  // empty: default relative grid
  std::vector<GridAxis> inducing_grid;                 // one per state dimension
  SimConfig sim;
  double drift_variance = 1.0;
  double diff_variance = 1.0;
  // Lower bound on the initial observation noise std, relative to each
  // dimension's spread.
  double min_noise_fraction = 0.01;
  double init_ridge = 1e-3;  // gradient-matching ridge, relative
  int lbfgs_memory = 10;
};

enum class Termination { converged, max_iters, error };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iters: return "max_iters";
    case Termination::error: return "error";
  }
  return "unknown";
}

struct TraceEntry {
  int iteration = 0;
  int epoch = 0;
  double log_posterior = 0.0;
  double grad_norm = 0.0;  // infinity norm of the log-posterior gradient
};

struct CandidateResult {
  LengthscaleCandidate lengthscales;
  Termination termination = Termination::error;
  double init_log_posterior = -std::numeric_limits<double>::infinity();
  double final_log_posterior = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string message;
};

struct FitReport {
  InducingModel final_model;
  std::vector<TraceEntry> trace;  // of the selected candidate
  LengthscaleCandidate selected_lengthscales;
  double wall_time = 0.0;  // seconds
  Termination termination = Termination::error;
  // Both evaluated under the epoch-0 frozen noise of the configured seed.
  double init_log_posterior = 0.0;
  double final_log_posterior = 0.0;
  std::vector<CandidateResult> candidates;
  std::string message;
};

namespace detail {

inline void bounding_box(std::span<const Trajectory> data, Vector& lo, Vector& hi) {
  if (data.empty()) throw InputError("no trajectories");
  const Eigen::Index D = data.front().dim();
  lo = Vector::Constant(D, std::numeric_limits<double>::infinity());
  hi = Vector::Constant(D, -std::numeric_limits<double>::infinity());
  for (const auto& tr : data) {
    tr.validate();
    if (tr.dim() != D) throw InputError("trajectories differ in dimension");
    lo = lo.cwiseMin(tr.obs.colwise().minCoeff().transpose());
    hi = hi.cwiseMax(tr.obs.colwise().maxCoeff().transpose());
  }
}

inline Vector data_std(std::span<const Trajectory> data) {
  const Eigen::Index D = data.front().dim();
  Vector sum = Vector::Zero(D), sq = Vector::Zero(D);
  double n = 0.0;
  for (const auto& tr : data) {
    sum += tr.obs.colwise().sum().transpose();
    sq += tr.obs.array().square().colwise().sum().matrix().transpose();
    n += static_cast<double>(tr.obs.rows());
  }
  const Vector mean = sum / n;
  return (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
}

}  // namespace detail

/// Regular Cartesian grid of inducing locations (first dimension varying
/// slowest). Unset bounds cover the data's bounding box plus 10% per side.
inline Matrix build_inducing_grid(std::span<const GridAxis> spec, std::span<const Trajectory> data) {
  if (spec.empty()) throw InputError("inducing grid needs one axis per dimension");
  Vector lo(static_cast<Eigen::Index>(spec.size())), hi(static_cast<Eigen::Index>(spec.size()));
  Vector dlo, dhi;
  bool have_data = false;
  for (std::size_t d = 0; d < spec.size(); ++d) {
    const GridAxis& ax = spec[d];
    if (ax.count < 2) throw InputError("inducing grid needs at least 2 points per dimension");
    double a = ax.min, b = ax.max;
    if (std::isnan(a) || std::isnan(b)) {
      if (!have_data) {
        detail::bounding_box(data, dlo, dhi);
        if (dlo.size() != static_cast<Eigen::Index>(spec.size()))
          throw InputError("inducing grid dimension does not match the data");
        have_data = true;
      }
      const double range = dhi[static_cast<Eigen::Index>(d)] - dlo[static_cast<Eigen::Index>(d)];
      if (!(range > 0.0)) throw InputError("degenerate data range in dimension " + std::to_string(d + 1));
      if (std::isnan(a)) a = dlo[static_cast<Eigen::Index>(d)] - 0.1 * range;
      if (std::isnan(b)) b = dhi[static_cast<Eigen::Index>(d)] + 0.1 * range;
    }
    if (!(b > a)) throw InputError("inducing grid axis needs max > min");
    lo[static_cast<Eigen::Index>(d)] = a;
    hi[static_cast<Eigen::Index>(d)] = b;
  }
  const Eigen::Index D = lo.size();
  Eigen::Index total = 1;
  for (const auto& ax : spec) total *= ax.count;
  Matrix Z(total, D);
  for (Eigen::Index k = 0; k < total; ++k) {
    Eigen::Index rem = k;
    for (Eigen::Index d = D - 1; d >= 0; --d) {
      const int n = spec[static_cast<std::size_t>(d)].count;
      const Eigen::Index j = rem % n;
      rem /= n;
      Z(k, d) = lo[d] + (hi[d] - lo[d]) * static_cast<double>(j) / (n - 1);
    }
  }
  return Z;
}

/// Result of gradient matching: initial inducing values plus the noise
/// variances implied by the slope residuals.
struct GradientMatchInit {
  Matrix U_f;
  Vector u_sigma;
  Vector noise_vars;
};

/// Initial inducing values from empirical slopes.
///
/// Slopes g_i = (y_{i+1} - y_i) / dt_i are fitted by the inducing
/// interpolant f(x) = K(x, Z) alpha with a ridge penalty on
/// alpha' K(Z, Z) alpha, scaled relative to the mean diagonal of
/// K(Z, X) K(X, Z) so that the result does not depend on the kernel
/// variance. Then U_f = K(Z, Z) alpha.
///
/// The increment residuals r_i = y_{i+1} - y_i - f(y_i) dt_i give the
/// observation noise through their lag-one covariance (-omega^2) and a
/// constant diffusion from E[r^2] = sigma^2 dt + 2 omega^2.
inline GradientMatchInit gradient_match_init(std::span<const Trajectory> data, const Matrix& Z,
                                             const KernelParams& drift_params, double ridge = 1e-3) {
  const Eigen::Index D = Z.cols();
  std::vector<Vector> xs, gs;
  std::vector<double> dts;
  std::vector<std::size_t> traj_of;
  for (std::size_t j = 0; j < data.size(); ++j) {
    const Trajectory& tr = data[j];
    tr.validate();
    if (tr.dim() != D) throw InputError("gradient_match_init: trajectory dimension mismatch");
    if (tr.size() < 2) continue;  // no slope available
    for (std::size_t i = 0; i + 1 < tr.size(); ++i) {
      const double dt = tr.times[i + 1] - tr.times[i];
      const auto ii = static_cast<Eigen::Index>(i);
      xs.push_back(tr.obs.row(ii).transpose());
      gs.push_back((tr.obs.row(ii + 1) - tr.obs.row(ii)).transpose() / dt);
      dts.push_back(dt);
      traj_of.push_back(j);
    }
  }
  if (xs.empty()) throw InputError("gradient_match_init: no trajectory has two or more observations");

  const auto N = static_cast<Eigen::Index>(xs.size());
  Matrix X(N, D), G(N, D);
  for (Eigen::Index i = 0; i < N; ++i) {
    X.row(i) = xs[static_cast<std::size_t>(i)].transpose();
    G.row(i) = gs[static_cast<std::size_t>(i)].transpose();
  }
  const double jitter = kRelativeJitter * drift_params.variance;
  Matrix Kzz = gram(Z, Z, drift_params);
  Kzz.diagonal().array() += jitter;
  const Matrix Kzx = gram(Z, X, drift_params);
  const Matrix S0 = Kzx * Kzx.transpose();
  const double scale = std::max(S0.diagonal().mean(), jitter);
  Matrix S = S0 + (ridge * scale / drift_params.variance) * Kzz;
  S.diagonal().array() += jitter * scale;
  const Eigen::LDLT<Matrix> ldlt(S);
  if (ldlt.info() != Eigen::Success) throw NumericalError("gradient matching regression is ill-conditioned");
  const Matrix alpha = ldlt.solve(Kzx * G);
  const Matrix U = Kzz * alpha;

  // Residual statistics per dimension.
  const Matrix R = G - Kzx.transpose() * alpha;  // slope residuals
  Vector sq = Vector::Zero(D), lag = Vector::Zero(D);
  double n_sq = 0.0, n_lag = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const double dt = dts[static_cast<std::size_t>(i)];
    const Vector r = R.row(i).transpose() * dt;  // increment residual
    sq += r.cwiseProduct(r) / dt;
    n_sq += 1.0;
    if (i + 1 < N && traj_of[static_cast<std::size_t>(i + 1)] == traj_of[static_cast<std::size_t>(i)]) {
      const Vector r2 = R.row(i + 1).transpose() * dts[static_cast<std::size_t>(i + 1)];
      lag += r.cwiseProduct(r2);
      n_lag += 1.0;
    }
  }
  double mean_dt = 0.0;
  for (double dt : dts) mean_dt += dt;
  mean_dt /= static_cast<double>(dts.size());

  GradientMatchInit out;
  out.U_f = U;
  out.noise_vars.resize(D);
  double sigma2 = 0.0;
  for (Eigen::Index d = 0; d < D; ++d) {
    const double raw = sq[d] / n_sq;  // sigma^2 + 2 omega^2 / dt
    double omega2 = n_lag > 0.0 ? std::max(0.0, -lag[d] / n_lag) : 0.0;
    // Never attribute more than half of the raw spread to observation noise.
    omega2 = std::min(omega2, 0.25 * raw * mean_dt);
    out.noise_vars[d] = omega2;
    sigma2 += raw - 2.0 * omega2 / mean_dt;
  }
  out.u_sigma = Vector::Constant(Z.rows(), std::sqrt(std::max(sigma2 / static_cast<double>(D), 0.0)));
  return out;
}

namespace detail {

inline Vector pack(const InducingModel& m) {
  const Eigen::Index MD = m.U_f.size(), M = m.size(), D = m.dim();
  Vector th(MD + M + D);
  th.head(MD) = m.u_f();
  th.segment(MD, M) = m.u_sigma;
  th.tail(D) = m.noise_vars.array().log().matrix();
  return th;
}

inline void unpack(const Vector& th, InducingModel& m) {
  const Eigen::Index MD = m.U_f.size(), M = m.size(), D = m.dim();
  m.set_u_f(th.head(MD));
  m.u_sigma = th.segment(MD, M);
  m.noise_vars = th.tail(D).array().exp().matrix();
}

inline Vector pack_grad(const ObjectiveValue& v) {
  Vector g(v.grad_u_f.size() + v.grad_u_s.size() + v.grad_log_noise.size());
  g << v.grad_u_f, v.grad_u_s, v.grad_log_noise;
  return g;
}

// Bound on log noise variances; keeps exp() finite during line searches.
inline constexpr double kMaxLogNoise = 50.0;

}  // namespace detail

/// Frozen-noise objective over the packed parameter vector
/// (vec U_f, u_sigma, log noise variances).
class MapObjective {
 public:
  MapObjective(std::span<const Trajectory> data, InducingModel model, const SimConfig& sim)
      : data_(data), model_(std::move(model)), cache_(model_), sim_(sim) {
    set_epoch(0);
  }

  void set_epoch(std::uint64_t epoch) {
    noise_ = freeze_noise(data_, model_.dim(), sim_, epoch);
    epoch_ = epoch;
  }
  std::uint64_t epoch() const { return epoch_; }

  ObjectiveValue evaluate(const Vector& theta) {
    if (theta.tail(model_.dim()).cwiseAbs().maxCoeff() > detail::kMaxLogNoise)
      throw NumericalError("noise variance out of range");
    detail::unpack(theta, model_);
    cache_.update_values(model_);
    return evaluate_objective(data_, model_, cache_, noise_, sim_.threads);
  }

  // Negative log-posterior for the minimizer.
  double operator()(const Vector& theta, Vector& grad) {
    const ObjectiveValue v = evaluate(theta);
    grad = -detail::pack_grad(v);
    return -v.log_posterior;
  }

  InducingModel model_at(const Vector& theta) const {
    InducingModel m = model_;
    detail::unpack(theta, m);
    return m;
  }

 private:
  std::span<const Trajectory> data_;
  InducingModel model_;
  FieldCache cache_;
  SimConfig sim_;
  FrozenNoise noise_;
  std::uint64_t epoch_ = 0;
};

/// Observation-scale defaults for the lengthscale grid.
inline std::vector<LengthscaleCandidate> resolve_lengthscale_grid(const FitConfig& cfg,
                                                                  std::span<const Trajectory> data) {
  if (!cfg.lengthscale_grid.empty()) return cfg.lengthscale_grid;
  const Vector sd = detail::data_std(data);
  const double scale = sd.mean() > 0.0 ? sd.mean() : 1.0;
  std::vector<LengthscaleCandidate> out;
  for (double mult : kDefaultLengthscaleMultipliers) out.push_back({mult * scale, mult * scale});
  return out;
}

namespace detail {

struct CandidateFit {
  CandidateResult result;
  InducingModel model;
  std::vector<TraceEntry> trace;
};

inline CandidateFit fit_candidate(std::span<const Trajectory> data, const Matrix& Z, const LengthscaleCandidate& ls,
                                  const FitConfig& cfg) {
  const Eigen::Index D = Z.cols();
  CandidateFit out;
  out.result.lengthscales = ls;
  const KernelParams pf = KernelParams::isotropic(D, ls.drift, cfg.drift_variance);
  const KernelParams ps = KernelParams::isotropic(D, ls.diffusion, cfg.diff_variance);
  InducingModel init(Z, pf, ps);
  GradientMatchInit gm = gradient_match_init(data, Z, pf, cfg.init_ridge);
  init.U_f = std::move(gm.U_f);
  init.u_sigma = std::move(gm.u_sigma);
  // Residual-based noise estimate, floored at a fraction of the data spread.
  const Vector sd = data_std(data);
  for (Eigen::Index d = 0; d < D; ++d) {
    const double floor_sd = cfg.min_noise_fraction * (sd[d] > 0.0 ? sd[d] : 1.0);
    init.noise_vars[d] = std::max(gm.noise_vars[d], floor_sd * floor_sd);
  }
  out.model = init;

  MapObjective objective(data, init, cfg.sim);
  auto fn = [&](const Vector& th, Vector& g) { return objective(th, g); };
  const Vector theta0 = pack(init);

  Lbfgs opt(LbfgsOptions{.memory = cfg.lbfgs_memory});
  opt.restart(fn, theta0);
  out.result.init_log_posterior = -opt.value();
  out.trace.push_back({0, 0, -opt.value(), opt.gradient().lpNorm<Eigen::Infinity>()});

  std::uint64_t epoch = 0;
  std::size_t accepted_in_epoch = 0;
  out.result.termination = Termination::max_iters;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (opt.gradient().lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
      out.result.termination = Termination::converged;
      break;
    }
    if (!opt.step(fn)) {
      out.result.termination = Termination::converged;
      out.result.message = "line search made no further progress";
      break;
    }
    ++accepted_in_epoch;
    out.trace.push_back({it + 1, static_cast<int>(epoch), -opt.value(), opt.gradient().lpNorm<Eigen::Infinity>()});
    if (cfg.sim.resample_period > 0 && accepted_in_epoch >= cfg.sim.resample_period && it + 1 < cfg.max_iters) {
      ++epoch;
      accepted_in_epoch = 0;
      objective.set_epoch(epoch);
      opt.restart(fn, opt.x());
      out.trace.push_back({it + 1, static_cast<int>(epoch), -opt.value(), opt.gradient().lpNorm<Eigen::Infinity>()});
    }
  }
  out.result.iterations = it;
  const Vector theta = opt.x();
  out.model = objective.model_at(theta);

  // Compare candidates (and init vs final) under the same epoch-0 noise.
  if (epoch != 0) {
    objective.set_epoch(0);
    Vector g;
    out.result.final_log_posterior = -objective(theta, g);
  } else {
    out.result.final_log_posterior = -opt.value();
  }
  return out;
}

}  // namespace detail

/// MAP fit: for every lengthscale candidate, gradient-matching init followed
/// by L-BFGS ascent of the frozen-noise log-posterior; keeps the candidate
/// with the highest final log-posterior.
inline FitReport fit_map(std::span<const Trajectory> data, const FitConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  if (data.empty()) throw InputError("fit_map: no trajectories");
  const Eigen::Index D = data.front().dim();
  if (static_cast<Eigen::Index>(cfg.inducing_grid.size()) != D)
    throw InputError("fit_map: inducing grid needs one axis per state dimension");
  if (cfg.max_iters < 0) throw InputError("fit_map: max_iters must be >= 0");
  const Matrix Z = build_inducing_grid(cfg.inducing_grid, data);
  const auto grid = resolve_lengthscale_grid(cfg, data);
  if (grid.empty()) throw InputError("fit_map: empty lengthscale grid");

  FitReport report;
  bool have_best = false;
  std::string failures;
  for (const auto& ls : grid) {
    try {
      auto fit = detail::fit_candidate(data, Z, ls, cfg);
      report.candidates.push_back(fit.result);
      if (!have_best || fit.result.final_log_posterior > report.final_log_posterior) {
        have_best = true;
        report.final_model = std::move(fit.model);
        report.trace = std::move(fit.trace);
        report.selected_lengthscales = ls;
        report.termination = fit.result.termination;
        report.init_log_posterior = fit.result.init_log_posterior;
        report.final_log_posterior = fit.result.final_log_posterior;
        report.message = fit.result.message;
      }
    } catch (const NumericalError& e) {
      CandidateResult failed;
      failed.lengthscales = ls;
      failed.termination = Termination::error;
      failed.message = e.what();
      report.candidates.push_back(failed);
      failures += "  lengthscales (" + std::to_string(ls.drift) + ", " + std::to_string(ls.diffusion) +
                  "): " + e.what() + "\n";
    }
  }
  if (!have_best) throw FitError("every lengthscale candidate failed:\n" + failures);
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace npsde
