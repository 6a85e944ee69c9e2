#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "npsde/gpfield.hpp"
#include "npsde/parallel.hpp"
#include "npsde/rng.hpp"

namespace npsde {

// Any state component beyond this magnitude aborts a simulated path.
inline constexpr double kBlowUpThreshold = 1e6;

/// Uniform Euler-Maruyama grid with observation times snapped to nodes.
struct TimeGrid {
  double t0 = 0.0;
  double dt = 1.0;
  std::size_t n_steps = 0;
  std::vector<std::size_t> obs_index;

  double time(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
  std::size_t n_nodes() const { return n_steps + 1; }
};

/// Grid from the first to the last observation time with
/// dt = (t_N - t_1) / (resolution_factor * (N - 1)).
inline TimeGrid build_grid(std::span<const double> obs_times, int resolution_factor) {
  if (obs_times.size() < 2) throw InputError("build_grid: need at least two observation times");
  if (resolution_factor < 1) throw InputError("build_grid: resolution factor must be >= 1");
  for (std::size_t i = 0; i < obs_times.size(); ++i) {
    if (!std::isfinite(obs_times[i])) throw InputError("build_grid: non-finite observation time");
    if (i > 0 && obs_times[i] == obs_times[i - 1]) throw InputError("build_grid: duplicate observation time");
    if (i > 0 && obs_times[i] < obs_times[i - 1]) throw InputError("build_grid: observation times not increasing");
  }
  TimeGrid g;
  g.t0 = obs_times.front();
  g.n_steps = static_cast<std::size_t>(resolution_factor) * (obs_times.size() - 1);
  g.dt = (obs_times.back() - obs_times.front()) / static_cast<double>(g.n_steps);
  g.obs_index.reserve(obs_times.size());
  for (double t : obs_times) {
    const auto idx = static_cast<std::size_t>(std::llround((t - g.t0) / g.dt));
    if (!g.obs_index.empty() && idx <= g.obs_index.back())
      throw InputError("build_grid: two observations snap to the same node; increase the resolution factor");
    g.obs_index.push_back(std::min(idx, g.n_steps));
  }
  return g;
}

/// Grid of n_steps steps of width dt, observed at every `every`-th node.
inline TimeGrid uniform_grid(double t0, double dt, std::size_t n_steps, std::size_t every = 1) {
  if (!(dt > 0.0)) throw InputError("uniform_grid: dt must be positive");
  if (every == 0) throw InputError("uniform_grid: observation stride must be >= 1");
  TimeGrid g{t0, dt, n_steps, {}};
  for (std::size_t i = 0; i <= n_steps; i += every) g.obs_index.push_back(i);
  return g;
}

using Increments = Matrix;  // n_steps x D, one sample's Brownian increments

/// Independent N(0, dt I) increments for n_samples paths. Sample s of stream
/// `stream` draws from its own substream of `seed`, so it does not depend on
/// how many other samples are drawn.
inline std::vector<Increments> sample_increments(const TimeGrid& grid, std::size_t n_samples, Eigen::Index D,
                                                 std::uint64_t seed, std::uint64_t stream = 0) {
  if (!(grid.dt > 0.0)) throw InputError("sample_increments: grid step must be positive");
  if (D < 1) throw InputError("sample_increments: dimension must be >= 1");
  const double sd = std::sqrt(grid.dt);
  std::vector<Increments> out(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    NormalStream normal(substream_seed(seed, stream, s));
    Increments& inc = out[s];
    inc.resize(static_cast<Eigen::Index>(grid.n_steps), D);
    for (Eigen::Index i = 0; i < inc.rows(); ++i)
      for (Eigen::Index d = 0; d < D; ++d) inc(i, d) = sd * normal();
  }
  return out;
}

/// A drift/diffusion pair the simulator can step. evaluate() writes f(x)
/// into drift and returns sigma(x).
template <class F>
concept SdeField = requires(const F& f, const Vector& x, Vector& drift) {
  { f.dim() } -> std::convertible_to<Eigen::Index>;
  { f.evaluate(x, drift) } -> std::convertible_to<double>;
};

/// SdeField view of an inducing model and its cache.
class InducingField {
 public:
  InducingField(const InducingModel& m, const FieldCache& c) : model_(&m), cache_(&c) { c.require_match(m); }

  Eigen::Index dim() const { return model_->dim(); }

  double evaluate(const Vector& x, Vector& drift) const {
    thread_local LocalField lf;
    evaluate_field(x, *cache_, lf, false);
    drift = lf.drift;
    return lf.diffusion;
  }

  const InducingModel& model() const { return *model_; }
  const FieldCache& cache() const { return *cache_; }

 private:
  const InducingModel* model_;
  const FieldCache* cache_;
};

namespace detail {
inline void guard_state(const Vector& x, std::size_t step, std::size_t sample) {
  for (Eigen::Index d = 0; d < x.size(); ++d)
    if (!std::isfinite(x[d]) || std::abs(x[d]) > kBlowUpThreshold)
      throw SimulationError("simulated state left the admissible range", step, sample);
}
}  // namespace detail

/// x_{i+1} = x_i + f(x_i) dt + sigma(x_i) dW_i, returning all n_steps + 1 states.
template <SdeField F>
Matrix euler_maruyama(const F& field, const Vector& x0, const TimeGrid& grid, const Increments& increments,
                      std::size_t sample = 0) {
  const Eigen::Index D = field.dim();
  if (x0.size() != D) throw InputError("euler_maruyama: initial state dimension mismatch");
  if (increments.rows() != static_cast<Eigen::Index>(grid.n_steps) || increments.cols() != D)
    throw InputError("euler_maruyama: increments must be n_steps x D");
  Matrix path(static_cast<Eigen::Index>(grid.n_nodes()), D);
  Vector x = x0, drift(D);
  path.row(0) = x.transpose();
  for (std::size_t i = 0; i < grid.n_steps; ++i) {
    const double sigma = field.evaluate(x, drift);
    x += drift * grid.dt + sigma * increments.row(static_cast<Eigen::Index>(i)).transpose();
    detail::guard_state(x, i + 1, sample);
    path.row(static_cast<Eigen::Index>(i + 1)) = x.transpose();
  }
  return path;
}

inline Matrix euler_maruyama(const InducingModel& m, const FieldCache& c, const Vector& x0, const TimeGrid& grid,
                             const Increments& increments) {
  return euler_maruyama(InducingField(m, c), x0, grid, increments);
}

/// N_s simulated paths sharing an initial state, with their increments.
struct PathBundle {
  std::vector<Matrix> paths;         // each (n_steps + 1) x D
  std::vector<Increments> increments;
  std::uint64_t seed = 0;
  TimeGrid grid;

  std::size_t n_samples() const { return paths.size(); }

  // States of every sample at one grid node, one per row.
  Matrix states_at(std::size_t node) const {
    if (paths.empty()) throw InputError("empty path bundle");
    if (node > grid.n_steps) throw InputError("grid index out of range");
    Matrix S(static_cast<Eigen::Index>(paths.size()), paths.front().cols());
    for (std::size_t s = 0; s < paths.size(); ++s)
      S.row(static_cast<Eigen::Index>(s)) = paths[s].row(static_cast<Eigen::Index>(node));
    return S;
  }
};

template <SdeField F>
PathBundle sample_paths(const F& field, const Vector& x0, const TimeGrid& grid, std::size_t n_samples,
                        std::uint64_t seed, std::uint64_t stream = 0, unsigned threads = 0) {
  if (n_samples == 0) throw InputError("sample_paths: need at least one sample");
  PathBundle b;
  b.seed = seed;
  b.grid = grid;
  b.increments = sample_increments(grid, n_samples, field.dim(), seed, stream);
  b.paths.resize(n_samples);
  parallel_for(
      n_samples, [&](std::size_t s) { b.paths[s] = euler_maruyama(field, x0, grid, b.increments[s], s); }, threads);
  return b;
}

inline PathBundle sample_paths(const InducingModel& m, const FieldCache& c, const Vector& x0, const TimeGrid& grid,
                               std::size_t n_samples, std::uint64_t seed) {
  return sample_paths(InducingField(m, c), x0, grid, n_samples, seed);
}

/// Gaussian kernel density estimate of a set of states (rows of `samples`)
/// evaluated at the rows of `eval_points`.
inline Vector kde(const Matrix& samples, const Matrix& eval_points, double bandwidth) {
  if (samples.rows() == 0) throw InputError("kde: no samples");
  if (!(bandwidth > 0.0)) throw InputError("kde: bandwidth must be positive");
  if (eval_points.cols() != samples.cols()) throw InputError("kde: dimension mismatch");
  const double D = static_cast<double>(samples.cols());
  const double norm = std::pow(2.0 * std::numbers::pi * bandwidth * bandwidth, -0.5 * D) /
                      static_cast<double>(samples.rows());
  const double inv_h2 = 1.0 / (bandwidth * bandwidth);
  Vector out(eval_points.rows());
  for (Eigen::Index k = 0; k < eval_points.rows(); ++k) {
    double acc = 0.0;
    for (Eigen::Index s = 0; s < samples.rows(); ++s)
      acc += std::exp(-0.5 * (eval_points.row(k) - samples.row(s)).squaredNorm() * inv_h2);
    out[k] = norm * acc;
  }
  return out;
}

/// Silverman's rule-of-thumb bandwidth for an isotropic Gaussian KDE, using
/// the pooled per-dimension standard deviation.
inline double silverman_bandwidth(const Matrix& samples, double min_bandwidth = 1e-3) {
  if (samples.rows() < 2) throw InputError("silverman_bandwidth: need at least two samples");
  const double n = static_cast<double>(samples.rows());
  const double D = static_cast<double>(samples.cols());
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const double sd = std::sqrt((samples.rowwise() - mean).squaredNorm() / (n * D));
  return std::max(min_bandwidth, sd * std::pow(4.0 / (n * (D + 2.0)), 1.0 / (D + 4.0)));
}

/// KDE of the bundle's states at one grid node.
inline Vector state_density(const PathBundle& bundle, std::size_t grid_index, const Matrix& eval_points,
                            double bandwidth) {
  if (bundle.paths.empty()) throw InputError("state_density: empty bundle");
  return kde(bundle.states_at(grid_index), eval_points, bandwidth);
}

/// Axis-aligned box with a regular evaluation lattice.
struct Box {
  Vector lo;
  Vector hi;

  Eigen::Index dim() const { return lo.size(); }

  void validate() const {
    if (lo.size() == 0 || lo.size() != hi.size()) throw InputError("box bounds must be non-empty and equal length");
    for (Eigen::Index d = 0; d < lo.size(); ++d)
      if (!(hi[d] >= lo[d])) throw InputError("box upper bound below lower bound");
  }

  // n points per dimension (n = 1 uses the lower corner), first dimension
  // varying slowest.
  Matrix lattice(int n) const {
    validate();
    if (n < 1) throw InputError("lattice needs at least one point per dimension");
    const Eigen::Index D = dim();
    Eigen::Index total = 1;
    for (Eigen::Index d = 0; d < D; ++d) total *= n;
    Matrix P(total, D);
    for (Eigen::Index k = 0; k < total; ++k) {
      Eigen::Index rem = k;
      for (Eigen::Index d = D - 1; d >= 0; --d) {
        const Eigen::Index j = rem % n;
        rem /= n;
        P(k, d) = n == 1 ? lo[d] : lo[d] + (hi[d] - lo[d]) * static_cast<double>(j) / (n - 1);
      }
    }
    return P;
  }

  // Volume of one lattice cell.
  double cell_volume(int n) const {
    double v = 1.0;
    for (Eigen::Index d = 0; d < dim(); ++d) v *= n > 1 ? (hi[d] - lo[d]) / (n - 1) : 1.0;
    return v;
  }
};

/// L2 distance between the KDEs of two sample sets over a lattice on box.
inline double kde_l2_distance(const Matrix& a, const Matrix& b, const Box& box, int n_grid, double bandwidth) {
  const Matrix P = box.lattice(n_grid);
  const Vector diff = kde(a, P, bandwidth) - kde(b, P, bandwidth);
  return std::sqrt(diff.squaredNorm() * box.cell_volume(n_grid));
}

/// Energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| (V-statistic form, so it is
/// non-negative and exactly zero for identical samples).
inline double energy_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InputError("energy_distance: empty sample");
  if (a.cols() != b.cols()) throw InputError("energy_distance: dimension mismatch");
  auto mean_dist = [](const Matrix& x, const Matrix& y) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < y.rows(); ++j) acc += (x.row(i) - y.row(j)).norm();
    return acc / (static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
  };
  const double e = 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
  return std::max(0.0, e);
}

}  // namespace npsde
