#include <gtest/gtest.h>

#include <numeric>

#include "npsde/simulate.hpp"
#include "npsde/systems.hpp"
#include "oracles.hpp"

using namespace npsde;

namespace {

Matrix line(double lo, double hi, int n) {
  Matrix Z(n, 1);
  for (int i = 0; i < n; ++i) Z(i, 0) = lo + (hi - lo) * i / (n - 1);
  return Z;
}

// OU process f(x) = -theta x with constant sigma, carried by dense inducing points.
InducingModel ou_model(double theta, double sigma) {
  const Matrix Z = line(-5.0, 5.0, 41);
  InducingModel m(Z, KernelParams::isotropic(1, 0.5), KernelParams::isotropic(1, 0.5));
  m.U_f = -theta * Z;
  m.u_sigma.setConstant(sigma);
  return m;
}

ParametricSystem ou_system(double theta, double sigma) {
  return {"ou", 1, [theta](const Vector& x) { return Vector(-theta * x); }, [sigma](const Vector&) { return sigma; }};
}

Vector scalar(double v) { return Vector::Constant(1, v); }

double mean(const Vector& v) { return v.mean(); }
double var(const Vector& v) { return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1); }

}  // namespace

TEST(BuildGrid, UnitSpacing) {
  const std::vector<double> t{0.0, 1.0, 2.0};
  const TimeGrid g = build_grid(t, 1);
  EXPECT_DOUBLE_EQ(g.dt, 1.0);
  EXPECT_EQ(g.n_steps, 2u);
  EXPECT_EQ(g.obs_index, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(BuildGrid, ResolutionFactor) {
  const std::vector<double> t{0.0, 1.0};
  const TimeGrid g = build_grid(t, 100);
  EXPECT_DOUBLE_EQ(g.dt, 0.01);
  EXPECT_EQ(g.n_steps, 100u);
  EXPECT_EQ(g.obs_index, (std::vector<std::size_t>{0, 100}));
}

TEST(BuildGrid, ObservationGapOfSubsampledGenerator) {
  // Generation step 0.005 observed every 100th state gives a 0.5 gap.
  std::vector<double> t;
  for (int i = 0; i < 5; ++i) t.push_back(i * 100 * 0.005);
  const TimeGrid g = build_grid(t, 1);
  EXPECT_NEAR(g.dt, 0.5, 1e-15);
}

TEST(BuildGrid, SnapsIrregularTimesWithinHalfStep) {
  const std::vector<double> t{0.0, 0.13, 0.5, 0.61, 1.7, 2.0};
  for (int factor : {10, 30}) {
    const TimeGrid g = build_grid(t, factor);
    ASSERT_EQ(g.obs_index.size(), t.size());
    EXPECT_GE(g.n_steps, t.size() - 1);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(std::abs(g.time(g.obs_index[i]) - t[i]), 0.5 * g.dt + 1e-12);
    for (std::size_t i = 1; i < t.size(); ++i) EXPECT_GT(g.obs_index[i], g.obs_index[i - 1]);
  }
}

TEST(BuildGrid, RejectsBadTimes) {
  const std::vector<double> dup{0.0, 1.0, 1.0, 2.0}, backwards{0.0, 2.0, 1.0}, single{0.0};
  EXPECT_THROW(build_grid(dup, 2), InputError);
  EXPECT_THROW(build_grid(backwards, 2), InputError);
  EXPECT_THROW(build_grid(single, 2), InputError);
  const std::vector<double> ok{0.0, 1.0};
  EXPECT_THROW(build_grid(ok, 0), InputError);
  // Two observations that land on one node under a coarse grid.
  const std::vector<double> crowded{0.0, 0.01, 0.02, 10.0};
  EXPECT_THROW(build_grid(crowded, 1), InputError);
}

TEST(SampleIncrements, Deterministic) {
  const TimeGrid g = uniform_grid(0.0, 0.1, 20);
  const auto a = sample_increments(g, 4, 2, 99), b = sample_increments(g, 4, 2, 99), c = sample_increments(g, 4, 2, 100);
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(a[s], b[s]);
    EXPECT_NE(a[s], c[s]);
  }
}

TEST(SampleIncrements, SubstreamsIndependentOfSampleCount) {
  const TimeGrid g = uniform_grid(0.0, 0.1, 20);
  const auto few = sample_increments(g, 2, 1, 5), many = sample_increments(g, 8, 1, 5);
  EXPECT_EQ(few[0], many[0]);
  EXPECT_EQ(few[1], many[1]);
}

TEST(SampleIncrements, VarianceMatchesStep) {
  // 10^6 draws with dt = 0.01; the 99% chi-square band is about [0.0097, 0.0103].
  const TimeGrid g = uniform_grid(0.0, 0.01, 10000);
  const auto inc = sample_increments(g, 100, 1, 12345);
  double ss = 0.0, sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : inc) {
    ss += m.squaredNorm();
    sum += m.sum();
    n += static_cast<std::size_t>(m.size());
  }
  const double dof = static_cast<double>(n);
  const double lo = 0.01 * oracle::chi2_quantile(dof, -2.5758) / dof;
  const double hi = 0.01 * oracle::chi2_quantile(dof, 2.5758) / dof;
  EXPECT_GE(lo, 0.0097);
  EXPECT_LE(hi, 0.0103);
  const double v = ss / dof;
  EXPECT_GE(v, lo);
  EXPECT_LE(v, hi);
  EXPECT_LT(std::abs(sum / dof), 4.0 * std::sqrt(0.01 / dof));
}

TEST(EulerMaruyama, ZeroFieldIsConstant) {
  InducingModel m(line(-1, 1, 5), KernelParams::isotropic(1, 0.7), KernelParams::isotropic(1, 0.7));
  const FieldCache c(m);
  const TimeGrid g = uniform_grid(0.0, 0.05, 40);
  const auto inc = sample_increments(g, 1, 1, 3);
  const Matrix path = euler_maruyama(m, c, scalar(0.4), g, inc[0]);
  ASSERT_EQ(path.rows(), 41);
  for (Eigen::Index i = 0; i < path.rows(); ++i) EXPECT_EQ(path(i, 0), 0.4);
}

TEST(EulerMaruyama, DriftOnlyMatchesForwardEuler) {
  InducingModel m(line(-2, 2, 9), KernelParams::isotropic(1, 0.6), KernelParams::isotropic(1, 0.6));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.U_f(i, 0) = std::sin(m.Z(i, 0));
  const FieldCache c(m);
  const TimeGrid g = uniform_grid(0.0, 0.02, 100);
  const auto inc = sample_increments(g, 1, 1, 8);
  const Matrix path = euler_maruyama(m, c, scalar(-0.3), g, inc[0]);
  const Matrix ode = oracle::forward_euler([&](const Vector& x) { return drift_at(x, m, c); }, scalar(-0.3), 0.02, 100);
  EXPECT_EQ(path, ode);
}

TEST(EulerMaruyama, StepByStepUpdate) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  InducingModel m(Matrix::Random(6, 2) * 1.5, KernelParams::isotropic(2, 1.0), KernelParams::isotropic(2, 1.0));
  for (Eigen::Index i = 0; i < m.U_f.size(); ++i) m.U_f.data()[i] = n01(rng);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.u_sigma[i] = 0.5 + 0.1 * n01(rng);
  const FieldCache c(m);
  const TimeGrid g = uniform_grid(0.0, 0.1, 10);
  const auto inc = sample_increments(g, 1, 2, 2);
  const Matrix path = euler_maruyama(m, c, Vector::Zero(2), g, inc[0]);
  for (Eigen::Index i = 0; i < 10; ++i) {
    const Vector x = path.row(i).transpose();
    const Vector next = x + drift_at(x, m, c) * 0.1 + diffusion_at(x, m, c) * inc[0].row(i).transpose();
    EXPECT_LT((path.row(i + 1).transpose() - next).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(EulerMaruyama, BlowUpReportsStep) {
  const ParametricSystem explosive{"x3", 1, [](const Vector& x) { return Vector(x.array().cube()); },
                                   [](const Vector&) { return 0.0; }};
  const TimeGrid g = uniform_grid(0.0, 0.1, 200);
  const Increments inc = Increments::Zero(200, 1);
  try {
    euler_maruyama(explosive, scalar(2.0), g, inc, 7);
    FAIL() << "expected a simulation error";
  } catch (const SimulationError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_LE(e.step(), 200u);
    EXPECT_EQ(e.sample(), 7u);
  }
}

TEST(EulerMaruyama, RejectsShapeMismatch) {
  const auto sys = ou_system(1.0, 1.0);
  const TimeGrid g = uniform_grid(0.0, 0.1, 10);
  EXPECT_THROW(euler_maruyama(sys, scalar(0.0), g, Increments::Zero(9, 1)), InputError);
  EXPECT_THROW(euler_maruyama(sys, Vector::Zero(2), g, Increments::Zero(10, 1)), InputError);
}

TEST(EulerMaruyama, EmbeddedOrnsteinUhlenbeckMoments) {
  const double theta = 1.0, sigma = 0.5, x0 = 1.0, T = 1.0;
  const InducingModel m = ou_model(theta, sigma);
  const FieldCache c(m);
  const TimeGrid g = uniform_grid(0.0, 0.01, 100);
  const std::size_t n = 10000;
  const PathBundle b = sample_paths(m, c, scalar(x0), g, n, 2024);
  const Vector xt = b.states_at(g.n_steps).col(0);
  const double mu = oracle::ou_mean(x0, theta, T), v = oracle::ou_var(sigma, theta, T);
  const double se_mean = std::sqrt(v / n), se_var = v * std::sqrt(2.0 / (n - 1));
  EXPECT_LE(std::abs(mean(xt) - mu), 3.0 * se_mean);
  EXPECT_LE(std::abs(var(xt) - v), 3.0 * se_var);
}

TEST(EulerMaruyama, WeakErrorShrinksWithStep) {
  // Common random numbers: coarse increments are sums of the finest ones, so
  // the Monte Carlo noise is shared and the discretisation bias dominates.
  const double theta = 1.0, sigma = 1.0, x0 = 2.0, T = 1.0;
  const auto sys = ou_system(theta, sigma);
  const std::size_t n = 100000, fine_steps = 40;
  const TimeGrid fine = uniform_grid(0.0, T / fine_steps, fine_steps);
  const auto inc = sample_increments(fine, n, 1, 77);
  std::vector<double> mean_err, var_err;
  for (std::size_t agg : {4u, 2u, 1u}) {
    const TimeGrid g = uniform_grid(0.0, T / (fine_steps / agg), fine_steps / agg);
    Vector xt(static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < n; ++s) {
      Increments coarse = Increments::Zero(static_cast<Eigen::Index>(g.n_steps), 1);
      for (Eigen::Index i = 0; i < inc[s].rows(); ++i) coarse(i / static_cast<Eigen::Index>(agg), 0) += inc[s](i, 0);
      xt[static_cast<Eigen::Index>(s)] = euler_maruyama(sys, scalar(x0), g, coarse)(g.n_steps, 0);
    }
    mean_err.push_back(std::abs(mean(xt) - oracle::ou_mean(x0, theta, T)));
    var_err.push_back(std::abs(var(xt) - oracle::ou_var(sigma, theta, T)));
  }
  EXPECT_GT(mean_err[0], mean_err[1]);
  EXPECT_GT(mean_err[1], mean_err[2]);
  EXPECT_GT(var_err[0], var_err[1]);
  EXPECT_GT(var_err[1], var_err[2]);
}

TEST(SamplePaths, SingleSampleMatchesEulerMaruyama) {
  const InducingModel m = ou_model(0.5, 0.3);
  const FieldCache c(m);
  const TimeGrid g = uniform_grid(0.0, 0.05, 30);
  const PathBundle b = sample_paths(m, c, scalar(0.2), g, 1, 11);
  ASSERT_EQ(b.n_samples(), 1u);
  EXPECT_EQ(b.paths[0], euler_maruyama(m, c, scalar(0.2), g, b.increments[0]));
  EXPECT_EQ(b.increments[0], sample_increments(g, 1, 1, 11)[0]);
  EXPECT_EQ(b.paths[0](0, 0), 0.2);
}

TEST(SamplePaths, SeedDeterminesBundle) {
  const InducingModel m = ou_model(0.5, 0.3);
  const FieldCache c(m);
  const TimeGrid g = uniform_grid(0.0, 0.05, 30);
  const PathBundle a = sample_paths(m, c, scalar(0.2), g, 16, 1);
  const PathBundle b = sample_paths(InducingField(m, c), scalar(0.2), g, 16, 1, 0, 3);
  const PathBundle d = sample_paths(m, c, scalar(0.2), g, 16, 2);
  for (std::size_t s = 0; s < 16; ++s) {
    EXPECT_EQ(a.paths[s], b.paths[s]);
    EXPECT_NE(a.paths[s], d.paths[s]);
  }
}

TEST(SamplePaths, ErrorCarriesSampleIndex) {
  const ParametricSystem sys{"unstable", 1, [](const Vector& x) { return Vector(x.array().cube()); },
                             [](const Vector&) { return 1.0; }};
  const TimeGrid g = uniform_grid(0.0, 0.1, 300);
  EXPECT_THROW(sample_paths(sys, scalar(3.0), g, 4, 1), SimulationError);
}

TEST(StateDensity, SingleAtomPeak) {
  PathBundle b;
  b.grid = uniform_grid(0.0, 0.1, 1);
  b.paths.push_back(Matrix::Constant(2, 2, 0.3));
  Matrix at(1, 2);
  at << 0.3, 0.3;
  const double h = 0.2;
  EXPECT_NEAR(state_density(b, 1, at, h)[0], 1.0 / (2.0 * std::numbers::pi * h * h), 1e-12);
}

TEST(StateDensity, NonNegativeAndIntegratesToOne) {
  const InducingModel m = ou_model(1.0, 0.5);
  const FieldCache c(m);
  const TimeGrid g = uniform_grid(0.0, 0.05, 20);
  const PathBundle b = sample_paths(m, c, scalar(0.5), g, 200, 5);
  const Box box{Vector::Constant(1, -4.0), Vector::Constant(1, 5.0)};
  const int n = 901;
  const Vector dens = state_density(b, g.n_steps, box.lattice(n), 0.1);
  EXPECT_GE(dens.minCoeff(), 0.0);
  const double integral = dens.sum() * box.cell_volume(n);
  EXPECT_GE(integral, 0.98);
  EXPECT_LE(integral, 1.02);
}

TEST(StateDensity, EmptyBundleRejected) {
  PathBundle b;
  EXPECT_THROW(state_density(b, 0, Matrix::Zero(1, 1), 0.1), InputError);
}

TEST(Distances, IdenticalSamplesHaveZeroDistance) {
  const Matrix a = Matrix::Random(50, 2);
  const Box box{Vector::Constant(2, -2.0), Vector::Constant(2, 2.0)};
  EXPECT_EQ(energy_distance(a, a), 0.0);
  EXPECT_EQ(kde_l2_distance(a, a, box, 20, 0.3), 0.0);
  const Matrix shifted = (a.array() + 1.0).matrix();
  EXPECT_GT(energy_distance(a, shifted), 0.1);
  EXPECT_GT(kde_l2_distance(a, shifted, box, 20, 0.3), 0.1);
}

TEST(Distances, EnergyDistanceOfPointMasses) {
  // For point masses at a and b the energy distance is 2|a - b|.
  Matrix a(1, 1), b(1, 1);
  a << 0.0;
  b << 1.5;
  EXPECT_DOUBLE_EQ(energy_distance(a, b), 3.0);
}
