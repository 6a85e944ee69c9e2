#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "npsde/sensitivity.hpp"

namespace npsde {

/// One observed time series: strictly increasing times and an N x D matrix
/// of noisy observations.
struct Trajectory {
  std::vector<double> times;
  Matrix obs;

  std::size_t size() const { return times.size(); }
  Eigen::Index dim() const { return obs.cols(); }

  void validate() const {
    if (static_cast<Eigen::Index>(times.size()) != obs.rows())
      throw InputError("trajectory: times and observations differ in length");
    if (times.empty()) throw InputError("trajectory: no observations");
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (!std::isfinite(times[i])) throw InputError("trajectory: non-finite time");
      if (i > 0 && !(times[i] > times[i - 1])) throw InputError("trajectory: times must be strictly increasing");
    }
    if (!obs.allFinite()) throw InputError("trajectory: non-finite observation");
  }
};

/// Simulation settings for the Monte Carlo objective.
struct SimConfig {
  int resolution_factor = 10;       // EM steps per observation interval
  std::size_t n_samples = 50;
  std::uint64_t seed = 0;
  std::size_t resample_period = 20; // accepted optimizer steps per frozen-noise epoch; 0 = never
  unsigned threads = 0;             // 0 = default_thread_count()
};

struct ObjectiveValue {
  double log_posterior = 0.0;
  double log_likelihood = 0.0;
  double log_prior = 0.0;
  Vector grad_u_f;        // MD
  Vector grad_u_s;        // M
  Vector grad_log_noise;  // D, with respect to log omega_d^2
  std::vector<double> per_obs_loglik;
};

/// Brownian increments held fixed for one optimizer epoch: one grid and
/// N_s increment matrices per trajectory.
struct FrozenNoise {
  std::vector<TimeGrid> grids;
  std::vector<std::vector<Increments>> increments;
  std::uint64_t seed = 0;
};

inline std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
  return epoch == 0 ? seed : substream_seed(seed, 0x5eedULL, epoch);
}

inline FrozenNoise freeze_noise(std::span<const Trajectory> trajs, Eigen::Index D, const SimConfig& sim,
                                std::uint64_t epoch = 0) {
  if (trajs.empty()) throw InputError("no trajectories");
  if (sim.n_samples == 0) throw InputError("need at least one Monte Carlo sample");
  FrozenNoise fn;
  fn.seed = epoch_seed(sim.seed, epoch);
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    trajs[j].validate();
    if (trajs[j].dim() != D) throw InputError("trajectory dimension does not match the model");
    fn.grids.push_back(build_grid(trajs[j].times, sim.resolution_factor));
    fn.increments.push_back(sample_increments(fn.grids.back(), sim.n_samples, D, fn.seed, j));
  }
  return fn;
}

namespace detail {

// log N(y | x, diag(noise_vars)) from a residual r = y - x.
inline double log_gauss_diag(const Vector& r, const Vector& noise_vars) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < r.size(); ++d)
    s += std::log(2.0 * std::numbers::pi * noise_vars[d]) + r[d] * r[d] / noise_vars[d];
  return -0.5 * s;
}

inline double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double a : v) mx = std::max(mx, a);
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double a : v) acc += std::exp(a - mx);
  return mx + std::log(acc);
}

}  // namespace detail

/// Monte Carlo log-likelihood sum_i log (1/N_s) sum_s N(y_i | x_i^(s), Omega),
/// summed over trajectories, from one bundle per trajectory.
inline double mc_loglik(std::span<const Trajectory> trajs, const InducingModel& m,
                        std::span<const PathBundle> bundles) {
  if (trajs.size() != bundles.size()) throw InputError("mc_loglik: one bundle per trajectory required");
  double total = 0.0;
  std::vector<double> lw;
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    const Trajectory& tr = trajs[j];
    const PathBundle& b = bundles[j];
    if (b.paths.empty()) throw InputError("mc_loglik: empty bundle");
    if (b.grid.obs_index.size() != tr.size()) throw InputError("mc_loglik: bundle grid does not match trajectory");
    if (tr.dim() != m.dim()) throw InputError("mc_loglik: trajectory dimension mismatch");
    const double log_ns = std::log(static_cast<double>(b.n_samples()));
    lw.resize(b.n_samples());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const auto node = static_cast<Eigen::Index>(b.grid.obs_index[i]);
      for (std::size_t s = 0; s < b.n_samples(); ++s) {
        if (b.paths[s].cols() != m.dim() || node >= b.paths[s].rows())
          throw InputError("mc_loglik: path shape mismatch");
        const Vector r = tr.obs.row(static_cast<Eigen::Index>(i)).transpose() - b.paths[s].row(node).transpose();
        lw[s] = detail::log_gauss_diag(r, m.noise_vars);
      }
      total += detail::log_sum_exp(lw) - log_ns;
    }
  }
  return total;
}

/// Log-posterior and its gradient from simulated paths with sensitivities.
///
/// The likelihood gradient with respect to u is, per observation, the
/// average of dlogN/dx * dx^(s)/du weighted by the normalized sample
/// likelihoods. The noise gradient is taken with respect to log omega_d^2.
inline ObjectiveValue mc_loglik_grad(std::span<const Trajectory> trajs, const InducingModel& m, const FieldCache& c,
                                     std::span<const std::vector<SensitivePath>> sims) {
  if (trajs.size() != sims.size()) throw InputError("mc_loglik_grad: one sample set per trajectory required");
  const Eigen::Index D = m.dim(), M = m.size();
  ObjectiveValue v;
  v.grad_u_f = Vector::Zero(M * D);
  v.grad_u_s = Vector::Zero(M);
  v.grad_log_noise = Vector::Zero(D);

  const Vector inv_noise = m.noise_vars.cwiseInverse();
  std::vector<double> lw;
  Vector score(D);
  Matrix residuals;
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    const Trajectory& tr = trajs[j];
    const auto& samples = sims[j];
    if (samples.empty()) throw InputError("mc_loglik_grad: no samples");
    if (tr.dim() != D) throw InputError("mc_loglik_grad: trajectory dimension mismatch");
    const std::size_t ns = samples.size();
    for (const auto& sp : samples)
      if (sp.at_obs.size() != tr.size() || sp.obs_states.rows() != static_cast<Eigen::Index>(tr.size()))
        throw InputError("mc_loglik_grad: sample does not cover the trajectory's observations");
    const double log_ns = std::log(static_cast<double>(ns));
    lw.resize(ns);
    residuals.resize(static_cast<Eigen::Index>(ns), D);
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t s = 0; s < ns; ++s) {
        const auto si = static_cast<Eigen::Index>(s);
        residuals.row(si) = tr.obs.row(ii) - samples[s].obs_states.row(ii);
        lw[s] = detail::log_gauss_diag(residuals.row(si).transpose(), m.noise_vars);
      }
      const double lse = detail::log_sum_exp(lw);
      const double ll = lse - log_ns;
      v.per_obs_loglik.push_back(ll);
      v.log_likelihood += ll;
      for (std::size_t s = 0; s < ns; ++s) {
        const double w = std::exp(lw[s] - lse);
        if (w == 0.0) continue;
        const auto si = static_cast<Eigen::Index>(s);
        score = residuals.row(si).transpose().cwiseProduct(inv_noise);  // dlogN/dx
        const SensitivityState& st = samples[s].at_obs[i];
        v.grad_u_f.noalias() += w * (st.dxdu_f.transpose() * score);
        v.grad_u_s.noalias() += w * (st.dxdu_s.transpose() * score);
        for (Eigen::Index d = 0; d < D; ++d)
          v.grad_log_noise[d] += w * 0.5 * (residuals(si, d) * residuals(si, d) * inv_noise[d] - 1.0);
      }
    }
  }

  v.log_prior = log_prior(m, c);
  const auto [gf, gs] = log_prior_grad(m, c);
  v.grad_u_f += gf;
  v.grad_u_s += gs;
  v.log_posterior = v.log_likelihood + v.log_prior;
  return v;
}

/// Simulates every (trajectory, sample) pair with sensitivities under the
/// given frozen noise. Samples run in parallel; results land in fixed slots.
inline std::vector<std::vector<SensitivePath>> simulate_all(std::span<const Trajectory> trajs, const InducingModel& m,
                                                            const FieldCache& c, const FrozenNoise& noise,
                                                            unsigned threads = 0) {
  if (noise.grids.size() != trajs.size()) throw InputError("frozen noise does not match the trajectories");
  std::vector<std::vector<SensitivePath>> sims(trajs.size());
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    sims[j].resize(noise.increments[j].size());
    for (std::size_t s = 0; s < noise.increments[j].size(); ++s) jobs.emplace_back(j, s);
  }
  parallel_for(
      jobs.size(),
      [&](std::size_t k) {
        const auto [j, s] = jobs[k];
        const Vector x0 = trajs[j].obs.row(0).transpose();
        sims[j][s] = simulate_with_sensitivities(m, c, x0, noise.grids[j], noise.increments[j][s], s);
      },
      threads);
  return sims;
}

/// Frozen-noise log-posterior and gradient.
inline ObjectiveValue evaluate_objective(std::span<const Trajectory> trajs, const InducingModel& m,
                                         const FieldCache& c, const FrozenNoise& noise, unsigned threads = 0) {
  const auto sims = simulate_all(trajs, m, c, noise, threads);
  return mc_loglik_grad(trajs, m, c, sims);
}

/// Full stochastic log-posterior: draws the noise for `sim.seed`, simulates
/// with sensitivities and returns value and gradient.
inline ObjectiveValue log_posterior(std::span<const Trajectory> trajs, const InducingModel& m, const SimConfig& sim) {
  m.validate();
  const FieldCache c(m);
  const FrozenNoise noise = freeze_noise(trajs, m.dim(), sim);
  return evaluate_objective(trajs, m, c, noise, sim.threads);
}

/// Plain path bundles (no sensitivities) for each trajectory under frozen noise.
inline std::vector<PathBundle> simulate_bundles(std::span<const Trajectory> trajs, const InducingModel& m,
                                                const FieldCache& c, const FrozenNoise& noise, unsigned threads = 0) {
  std::vector<PathBundle> out(trajs.size());
  const InducingField field(m, c);
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    PathBundle& b = out[j];
    b.seed = noise.seed;
    b.grid = noise.grids[j];
    b.increments = noise.increments[j];
    b.paths.resize(b.increments.size());
    const Vector x0 = trajs[j].obs.row(0).transpose();
    parallel_for(
        b.increments.size(),
        [&](std::size_t s) { b.paths[s] = euler_maruyama(field, x0, b.grid, b.increments[s], s); }, threads);
  }
  return out;
}

}  // namespace npsde
