#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "npsde/objective.hpp"

namespace npsde {

/// A ground-truth SDE given by closed-form drift and diffusion.
struct ParametricSystem {
  std::string name;
  Eigen::Index dimension = 1;
  std::function<Vector(const Vector&)> drift_fn;
  std::function<double(const Vector&)> diffusion_fn;

  Eigen::Index dim() const { return dimension; }
  Vector drift(const Vector& x) const { return drift_fn(x); }
  double diffusion(const Vector& x) const { return diffusion_fn(x); }

  double evaluate(const Vector& x, Vector& drift) const {
    drift = drift_fn(x);
    return diffusion_fn(x);
  }
};

/// f(x) = 4 (x - x^3), sigma(x) = 1.5.
inline ParametricSystem double_well() {
  return {"double-well", 1,
          [](const Vector& x) {
            Vector f(1);
            f[0] = 4.0 * (x[0] - x[0] * x[0] * x[0]);
            return f;
          },
          [](const Vector&) { return 1.5; }};
}

namespace detail {
// Isotropic bivariate Gaussian density N(x | mean, var I).
inline double gauss2(const Vector& x, double m1, double m2, double var) {
  const double r2 = (x[0] - m1) * (x[0] - m1) + (x[1] - m2) * (x[1] - m2);
  return std::exp(-0.5 * r2 / var) / (2.0 * std::numbers::pi * var);
}
}  // namespace detail

/// Limit-cycle oscillator with a diffusion hotspot at (-1, -1):
/// f_1 = x_1 (1 - |x|^2) - x_2, f_2 = x_2 (1 - |x|^2) + x_1,
/// sigma(x) = 2 N(x | (-1, -1), 0.5 I) + 0.3.
inline ParametricSystem oscillator_hotspot() {
  return {"oscillator", 2,
          [](const Vector& x) {
            const double r = 1.0 - x[0] * x[0] - x[1] * x[1];
            Vector f(2);
            f << x[0] * r - x[1], x[1] * r + x[0];
            return f;
          },
          [](const Vector& x) { return 2.0 * detail::gauss2(x, -1.0, -1.0, 0.5) + 0.3; }};
}

/// Van der Pol oscillator f(x, y) = (y, mu (1 - x^2) y - x) with a local
/// diffusion bump: sigma = base + bump * N(x | center, bump_var I).
/// The diffusion settings are a representative choice, not a reference one.
struct VanDerPolDiffusion {
  double base = 0.3;
  double bump = 1.5;
  double bump_var = 0.25;
  double center_x = 2.0;
  double center_y = 0.0;
};

inline ParametricSystem van_der_pol(double mu = 1.0, VanDerPolDiffusion diff = {}) {
  if (!(mu >= 0.0)) throw InputError("van_der_pol: mu must be non-negative");
  return {"van-der-pol", 2,
          [mu](const Vector& x) {
            Vector f(2);
            f << x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
            return f;
          },
          [diff](const Vector& x) {
            return diff.base + diff.bump * detail::gauss2(x, diff.center_x, diff.center_y, diff.bump_var);
          }};
}

/// Looks a benchmark up by name: double-well, oscillator, van-der-pol.
inline ParametricSystem system_by_name(const std::string& name) {
  if (name == "double-well") return double_well();
  if (name == "oscillator") return oscillator_hotspot();
  if (name == "van-der-pol") return van_der_pol();
  throw InputError("unknown system '" + name + "' (expected double-well, oscillator or van-der-pol)");
}

/// Synthetic data protocol: EM at gen_dt, keep every subsample_every-th
/// state, add N(0, noise_std^2) observation noise.
struct GenSpec {
  std::size_t n_traj = 1;
  std::size_t n_obs_per_traj = 25;
  double gen_dt = 0.005;
  std::size_t subsample_every = 100;
  double noise_std = 0.1;
  Box x0_box;
  std::uint64_t seed = 0;
  int max_retries = 10;

  void validate(Eigen::Index D) const {
    if (n_traj < 1) throw InputError("generate: need at least one trajectory");
    if (n_obs_per_traj < 2) throw InputError("generate: need at least two observations per trajectory");
    if (!(gen_dt > 0.0)) throw InputError("generate: gen_dt must be positive");
    if (subsample_every < 1) throw InputError("generate: subsample_every must be >= 1");
    if (!(noise_std >= 0.0)) throw InputError("generate: noise_std must be non-negative");
    x0_box.validate();
    if (x0_box.dim() != D) throw InputError("generate: x0 box dimension does not match the system");
  }
};

/// Simulates spec.n_traj noisy trajectories. Trajectory k depends only on
/// (seed, k), so a batch's first k trajectories equal a k-trajectory batch.
inline std::vector<Trajectory> generate(const ParametricSystem& sys, const GenSpec& spec) {
  const Eigen::Index D = sys.dim();
  spec.validate(D);
  const std::size_t n_steps = (spec.n_obs_per_traj - 1) * spec.subsample_every;
  const TimeGrid grid = uniform_grid(0.0, spec.gen_dt, n_steps, spec.subsample_every);
  std::vector<Trajectory> out(spec.n_traj);
  for (std::size_t k = 0; k < spec.n_traj; ++k) {
    bool done = false;
    for (int attempt = 0; attempt <= spec.max_retries && !done; ++attempt) {
      NormalStream rng(substream_seed(spec.seed, 0xda7aULL, k, static_cast<std::uint64_t>(attempt)));
      Vector x0(D);
      for (Eigen::Index d = 0; d < D; ++d)
        x0[d] = spec.x0_box.lo[d] + (spec.x0_box.hi[d] - spec.x0_box.lo[d]) * rng.uniform();
      Increments inc(static_cast<Eigen::Index>(n_steps), D);
      const double sd = std::sqrt(spec.gen_dt);
      for (Eigen::Index i = 0; i < inc.rows(); ++i)
        for (Eigen::Index d = 0; d < D; ++d) inc(i, d) = sd * rng();
      Matrix path;
      try {
        path = euler_maruyama(sys, x0, grid, inc, k);
      } catch (const SimulationError&) {
        continue;
      }
      Trajectory& tr = out[k];
      tr.obs.resize(static_cast<Eigen::Index>(spec.n_obs_per_traj), D);
      tr.times.resize(spec.n_obs_per_traj);
      for (std::size_t i = 0; i < spec.n_obs_per_traj; ++i) {
        const std::size_t node = grid.obs_index[i];
        tr.times[i] = grid.time(node);
        for (Eigen::Index d = 0; d < D; ++d)
          tr.obs(static_cast<Eigen::Index>(i), d) = path(static_cast<Eigen::Index>(node), d) + spec.noise_std * rng();
      }
      done = true;
    }
    if (!done) throw SimulationError("generate: trajectory kept blowing up after retries", 0, k);
  }
  return out;
}

/// Inducing model whose values are the true fields evaluated at Z, so the
/// GP interpolant reproduces the system at the inducing locations.
inline InducingModel inject_system(const ParametricSystem& sys, const Matrix& Z, const KernelParams& drift_params,
                                   const KernelParams& diff_params) {
  if (Z.cols() != sys.dim()) throw InputError("inject_system: dimension mismatch");
  InducingModel m(Z, drift_params, diff_params);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const Vector z = Z.row(i).transpose();
    m.U_f.row(i) = sys.drift(z).transpose();
    m.u_sigma[i] = sys.diffusion(z);
  }
  return m;
}

/// Region where a set of training states has appreciable density: the
/// Gaussian KDE (Silverman bandwidth) exceeds `fraction` of its maximum over
/// the evaluation lattice.
class VisitedRegion {
 public:
  VisitedRegion(Matrix states, const Box& box, int n_grid, double fraction = 0.01) : states_(std::move(states)) {
    if (states_.rows() < 2) throw InputError("VisitedRegion: need at least two states");
    bandwidth_ = silverman_bandwidth(states_);
    const Vector dens = kde(states_, box.lattice(n_grid), bandwidth_);
    threshold_ = fraction * dens.maxCoeff();
  }

  static VisitedRegion from_trajectories(std::span<const Trajectory> data, const Box& box, int n_grid,
                                         double fraction = 0.01) {
    Eigen::Index rows = 0;
    for (const auto& tr : data) rows += tr.obs.rows();
    if (data.empty()) throw InputError("VisitedRegion: no data");
    Matrix S(rows, data.front().dim());
    Eigen::Index r = 0;
    for (const auto& tr : data) {
      S.middleRows(r, tr.obs.rows()) = tr.obs;
      r += tr.obs.rows();
    }
    return VisitedRegion(std::move(S), box, n_grid, fraction);
  }

  bool contains(const Vector& x) const {
    Matrix p = x.transpose();
    return kde(states_, p, bandwidth_)[0] >= threshold_;
  }

  double bandwidth() const { return bandwidth_; }

 private:
  Matrix states_;
  double bandwidth_ = 1.0;
  double threshold_ = 0.0;
};

namespace detail {
template <class ErrFn>
double rms_over(const Box& box, int n_grid, const VisitedRegion* region, ErrFn&& err) {
  const Matrix P = box.lattice(n_grid);
  double acc = 0.0;
  std::size_t n = 0;
  for (Eigen::Index k = 0; k < P.rows(); ++k) {
    const Vector x = P.row(k).transpose();
    if (region && !region->contains(x)) continue;
    const double e = err(x);
    acc += e * e;
    ++n;
  }
  if (n == 0) throw InputError("error metric: no evaluation point inside the visited region");
  return std::sqrt(acc / static_cast<double>(n));
}
}  // namespace detail

/// RMS of |f_true(x) - f_fit(x)| over an n_grid^D lattice on eval_box,
/// optionally restricted to a visited region.
inline double drift_error(const ParametricSystem& truth, const InducingModel& fitted, const Box& eval_box, int n_grid,
                          const VisitedRegion* region = nullptr) {
  const FieldCache c(fitted);
  LocalField lf;
  return detail::rms_over(eval_box, n_grid, region, [&](const Vector& x) {
    evaluate_field(x, c, lf, false);
    return (truth.drift(x) - lf.drift).norm();
  });
}

/// RMS of |sigma_true(x) - |sigma_fit(x)||; the fitted sign is ignored.
inline double diffusion_error(const ParametricSystem& truth, const InducingModel& fitted, const Box& eval_box,
                              int n_grid, const VisitedRegion* region = nullptr) {
  const FieldCache c(fitted);
  LocalField lf;
  return detail::rms_over(eval_box, n_grid, region, [&](const Vector& x) {
    evaluate_field(x, c, lf, false);
    return truth.diffusion(x) - std::abs(lf.diffusion);
  });
}

enum class DiscrepancyMetric { energy, kde_l2 };

struct DiscrepancyOptions {
  double dt = 0.01;
  double checkpoint_interval = 0.5;
  DiscrepancyMetric metric = DiscrepancyMetric::energy;
  // Only used by kde_l2.
  Box kde_box;
  int kde_grid = 50;
  double kde_bandwidth = 0.2;
  unsigned threads = 0;
  // Draw the fitted system's noise from a separate stream instead of
  // sharing the truth's increments.
  bool independent_noise = false;
};

/// Time-integrated distance between the state distributions of two systems
/// started at x0: both are simulated with the same seed and step, and the
/// per-checkpoint distance is summed times the checkpoint interval.
template <SdeField A, SdeField B>
double distribution_discrepancy(const A& truth, const B& fitted, const Vector& x0, double horizon,
                                std::size_t n_paths, std::uint64_t seed, const DiscrepancyOptions& opt = {}) {
  if (!(horizon > 0.0)) throw InputError("distribution_discrepancy: horizon must be positive");
  if (!(opt.dt > 0.0) || !(opt.checkpoint_interval >= opt.dt))
    throw InputError("distribution_discrepancy: need 0 < dt <= checkpoint interval");
  if (truth.dim() != fitted.dim()) throw InputError("distribution_discrepancy: dimension mismatch");
  const auto every = static_cast<std::size_t>(std::llround(opt.checkpoint_interval / opt.dt));
  const auto n_steps = static_cast<std::size_t>(std::llround(horizon / opt.dt));
  const TimeGrid grid = uniform_grid(0.0, opt.dt, n_steps, every);
  const PathBundle a = sample_paths(truth, x0, grid, n_paths, seed, 0, opt.threads);
  const PathBundle b = sample_paths(fitted, x0, grid, n_paths, seed, opt.independent_noise ? 1 : 0, opt.threads);
  double total = 0.0;
  for (std::size_t node : grid.obs_index) {
    if (node == 0) continue;
    const Matrix sa = a.states_at(node), sb = b.states_at(node);
    const double dist = opt.metric == DiscrepancyMetric::energy
                            ? energy_distance(sa, sb)
                            : kde_l2_distance(sa, sb, opt.kde_box, opt.kde_grid, opt.kde_bandwidth);
    total += dist * static_cast<double>(every) * opt.dt;
  }
  return total;
}

}  // namespace npsde
