#include <gtest/gtest.h>

#include <random>

#include "npsde/systems.hpp"
#include "oracles.hpp"

using namespace npsde;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }
Vector v2(double a, double b) {
  Vector x(2);
  x << a, b;
  return x;
}

Box box1(double lo, double hi) { return Box{v1(lo), v1(hi)}; }

// Dense inducing injection of a 1D system.
InducingModel inject_1d(const ParametricSystem& sys) {
  Matrix Z(61, 1);
  for (int i = 0; i < 61; ++i) Z(i, 0) = -3.0 + 0.1 * i;
  return inject_system(sys, Z, KernelParams::isotropic(1, 0.15), KernelParams::isotropic(1, 0.15));
}

}  // namespace

TEST(DoubleWell, ClosedForm) {
  const auto sys = double_well();
  EXPECT_EQ(sys.dim(), 1);
  for (double r : {0.0, 1.0, -1.0}) EXPECT_EQ(sys.drift(v1(r))[0], 0.0);
  EXPECT_DOUBLE_EQ(sys.drift(v1(0.5))[0], 1.5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 5; ++i) {
    const double x = u(rng);
    EXPECT_NEAR(sys.drift(v1(x))[0], 4.0 * x - 4.0 * x * x * x, 1e-12 * (1.0 + std::abs(x * x * x)));
    EXPECT_EQ(sys.diffusion(v1(x)), 1.5);
  }
}

TEST(Oscillator, ClosedForm) {
  const auto sys = oscillator_hotspot();
  EXPECT_EQ(sys.dim(), 2);
  // Pure rotation on the unit circle.
  for (double th : {0.0, 0.7, 2.0, 4.0}) {
    const Vector x = v2(std::cos(th), std::sin(th));
    const Vector f = sys.drift(x);
    EXPECT_NEAR(f[0], -x[1], 1e-12);
    EXPECT_NEAR(f[1], x[0], 1e-12);
  }
  EXPECT_NEAR(sys.diffusion(v2(-1, -1)), 2.0 / std::numbers::pi + 0.3, 1e-12);
  EXPECT_NEAR(sys.diffusion(v2(-1, -1)), 0.9366, 1e-4);
  EXPECT_NEAR(sys.diffusion(v2(8, 8)), 0.3, 1e-12);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 5; ++i) {
    const double a = u(rng), b = u(rng);
    const double r = 1.0 - a * a - b * b;
    const Vector f = sys.drift(v2(a, b));
    EXPECT_NEAR(f[0], a * r - b, 1e-12);
    EXPECT_NEAR(f[1], b * r + a, 1e-12);
    const double dens = std::exp(-((a + 1) * (a + 1) + (b + 1) * (b + 1))) / std::numbers::pi;
    EXPECT_NEAR(sys.diffusion(v2(a, b)), 2.0 * dens + 0.3, 1e-12);
  }
}

TEST(VanDerPol, ClosedForm) {
  const auto sys = van_der_pol(1.0);
  EXPECT_EQ(sys.drift(v2(0, 0)), v2(0, 0));
  const auto harmonic = van_der_pol(0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 5; ++i) {
    const double a = u(rng), b = u(rng);
    EXPECT_EQ(harmonic.drift(v2(a, b)), v2(b, -a));
    const Vector f = van_der_pol(1.7).drift(v2(a, b));
    EXPECT_NEAR(f[1], 1.7 * (1.0 - a * a) * b - a, 1e-12);
    const double bump = 1.5 * std::exp(-0.5 * ((a - 2) * (a - 2) + b * b) / 0.25) / (2.0 * std::numbers::pi * 0.25);
    EXPECT_NEAR(sys.diffusion(v2(a, b)), 0.3 + bump, 1e-12);
  }
  EXPECT_THROW(van_der_pol(-1.0), InputError);
}

TEST(VanDerPol, LimitCycleReturnsToStart) {
  const auto sys = van_der_pol(1.0);
  const double dt = 1e-3;
  const Matrix path = oracle::forward_euler([&](const Vector& x) { return sys.drift(x); }, v2(2, 0), dt, 7000);
  double best = 1e9;
  for (Eigen::Index i = 3000; i < path.rows(); ++i) best = std::min(best, (path.row(i) - Eigen::RowVector2d(2, 0)).norm());
  EXPECT_LT(best, 0.5);
}

TEST(Systems, LookupByName) {
  EXPECT_EQ(system_by_name("double-well").name, "double-well");
  EXPECT_EQ(system_by_name("oscillator").dim(), 2);
  EXPECT_EQ(system_by_name("van-der-pol").dim(), 2);
  EXPECT_THROW(system_by_name("lorenz"), InputError);
}

TEST(Generate, NoiselessDeterministicSystemMatchesForwardEuler) {
  const ParametricSystem sys{"decay", 1, [](const Vector& x) { return Vector(-0.7 * x + Vector::Constant(1, 0.2)); },
                             [](const Vector&) { return 0.0; }};
  GenSpec g;
  g.n_traj = 3;
  g.n_obs_per_traj = 30;
  g.gen_dt = 0.05;
  g.subsample_every = 1;
  g.noise_std = 0.0;
  g.x0_box = box1(-1, 1);
  g.seed = 4;
  const auto data = generate(sys, g);
  ASSERT_EQ(data.size(), 3u);
  for (const auto& tr : data) {
    const Matrix ode = oracle::forward_euler([&](const Vector& x) { return sys.drift(x); }, tr.obs.row(0).transpose(),
                                             0.05, 29);
    EXPECT_LT((tr.obs - ode).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(tr.times.back(), 29 * 0.05, 1e-12);
  }
}

TEST(Generate, ProtocolShapes) {
  GenSpec osc;
  osc.n_traj = 2;
  osc.n_obs_per_traj = 25;
  osc.gen_dt = 0.005;
  osc.subsample_every = 100;
  osc.noise_std = 0.1;
  osc.x0_box = Box{v2(-2, -2), v2(2, 2)};
  const auto a = generate(oscillator_hotspot(), osc);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].size(), 25u);
  EXPECT_NEAR(a[0].times[1] - a[0].times[0], 0.5, 1e-12);

  GenSpec dw;
  dw.n_traj = 6;
  dw.n_obs_per_traj = 250;
  dw.gen_dt = 0.01;
  dw.subsample_every = 2;
  dw.x0_box = box1(-1.5, 1.5);
  const auto b = generate(double_well(), dw);
  EXPECT_EQ(b.size(), 6u);
  for (const auto& tr : b) {
    EXPECT_EQ(tr.obs.rows(), 250);
    EXPECT_NO_THROW(tr.validate());
  }
}

TEST(Generate, DeterministicAndPrefixStable) {
  GenSpec g;
  g.n_traj = 5;
  g.n_obs_per_traj = 20;
  g.gen_dt = 0.01;
  g.subsample_every = 5;
  g.x0_box = Box{v2(-1, -1), v2(1, 1)};
  g.seed = 17;
  const auto all = generate(oscillator_hotspot(), g);
  const auto again = generate(oscillator_hotspot(), g);
  g.n_traj = 2;
  const auto prefix = generate(oscillator_hotspot(), g);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(all[k].obs, again[k].obs);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(all[k].obs, prefix[k].obs);
    EXPECT_EQ(all[k].times, prefix[k].times);
  }
  g.seed = 18;
  EXPECT_NE(generate(oscillator_hotspot(), g)[0].obs, all[0].obs);
}

TEST(Generate, ObservationNoiseHasRequestedSpread) {
  const ParametricSystem still{"still", 1, [](const Vector&) { return Vector::Zero(1); },
                               [](const Vector&) { return 0.0; }};
  GenSpec g;
  g.n_traj = 4;
  g.n_obs_per_traj = 2500;
  g.gen_dt = 0.01;
  g.subsample_every = 1;
  g.noise_std = 0.1;
  g.x0_box = box1(0.0, 0.0);
  const auto data = generate(still, g);
  double ss = 0.0;
  std::size_t n = 0;
  for (const auto& tr : data) {
    ss += tr.obs.squaredNorm();
    n += static_cast<std::size_t>(tr.obs.size());
  }
  const double dof = static_cast<double>(n);
  EXPECT_GE(ss / dof, 0.01 * oracle::chi2_quantile(dof, -3.0) / dof);
  EXPECT_LE(ss / dof, 0.01 * oracle::chi2_quantile(dof, 3.0) / dof);
}

TEST(Generate, BlowUpExhaustsRetries) {
  const ParametricSystem bad{"bad", 1, [](const Vector& x) { return Vector(x.array().cube()); },
                             [](const Vector&) { return 0.0; }};
  GenSpec g;
  g.n_obs_per_traj = 100;
  g.gen_dt = 0.1;
  g.subsample_every = 1;
  g.x0_box = box1(5.0, 6.0);
  g.max_retries = 2;
  EXPECT_THROW(generate(bad, g), SimulationError);
  g.x0_box = box1(-1.0, 1.0);
  g.n_obs_per_traj = 1;
  EXPECT_THROW(generate(bad, g), InputError);
}

TEST(DriftError, InjectedTruthIsBelowTolerance) {
  const auto sys = double_well();
  const InducingModel m = inject_1d(sys);
  EXPECT_LT(drift_error(sys, m, box1(-2, 2), 201), 0.05);
  EXPECT_LT(diffusion_error(sys, m, box1(-2, 2), 201), 0.05);
}

TEST(DriftError, ZeroFieldEqualsTrueFieldRms) {
  const auto sys = double_well();
  Matrix Z(5, 1);
  Z << -2, -1, 0, 1, 2;
  const InducingModel zero(Z, KernelParams::isotropic(1, 1.0), KernelParams::isotropic(1, 1.0));
  double acc = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double x = -2.0 + 4.0 * i / 100.0;
    acc += std::pow(4.0 * (x - x * x * x), 2);
  }
  EXPECT_NEAR(drift_error(sys, zero, box1(-2, 2), 101), std::sqrt(acc / 101.0), 1e-10);
  EXPECT_NEAR(diffusion_error(sys, zero, box1(-2, 2), 101), 1.5, 1e-12);
}

TEST(DriftError, SharedZeroGivesZero) {
  const auto sys = double_well();
  Matrix Z(3, 1);
  Z << -1, 0, 1;
  InducingModel m(Z, KernelParams::isotropic(1, 1.0), KernelParams::isotropic(1, 1.0));
  m.U_f << -3.0, 0.0, 3.0;  // odd field: zero at the origin
  EXPECT_EQ(drift_error(sys, m, box1(0, 1), 1), 0.0);
  // Diffusion: the sign of the fitted value is ignored.
  m.u_sigma.setConstant(-1.5);
  const ParametricSystem match{"m", 1, sys.drift_fn, [&](const Vector& x) {
                                 const FieldCache c(m);
                                 return std::abs(diffusion_at(x, m, c));
                               }};
  EXPECT_NEAR(diffusion_error(match, m, box1(0.3, 1), 1), 0.0, 1e-15);
}

TEST(DriftError, RestrictedToVisitedRegion) {
  Trajectory tr;
  for (int i = 0; i < 50; ++i) tr.times.push_back(i);
  tr.obs.resize(50, 1);
  for (int i = 0; i < 50; ++i) tr.obs(i, 0) = -1.0 + 2.0 * i / 49.0;
  const std::vector<Trajectory> data{tr};
  const VisitedRegion region = VisitedRegion::from_trajectories(data, box1(-5, 5), 201);
  EXPECT_TRUE(region.contains(v1(0.0)));
  EXPECT_FALSE(region.contains(v1(4.0)));
  // Far from data the zero-reverting fit is excluded from the error.
  const auto sys = double_well();
  const InducingModel m = inject_1d(sys);
  EXPECT_LT(drift_error(sys, m, box1(-5, 5), 201, &region), 0.05);
  EXPECT_GT(drift_error(sys, m, box1(-5, 5), 201), 1.0);
}

TEST(Discrepancy, MatchedSeedsGiveZero) {
  const auto sys = double_well();
  EXPECT_EQ(distribution_discrepancy(sys, sys, v1(0.5), 1.0, 200, 3), 0.0);
}

TEST(Discrepancy, SelfDistanceBelowNoiseFloorAndZeroFieldAbove) {
  const auto sys = double_well();
  const std::size_t n = 1000;
  DiscrepancyOptions indep;
  indep.independent_noise = true;
  // Noise floor: distance between independent true ensembles over several seeds.
  double floor = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) floor = std::max(floor, distribution_discrepancy(sys, sys, v1(0.5), 1.0, n, 100 + s, indep));
  floor *= 1.5;
  EXPECT_LT(distribution_discrepancy(sys, sys, v1(0.5), 1.0, n, 7, indep), floor);

  Matrix Z(5, 1);
  Z << -2, -1, 0, 1, 2;
  const InducingModel zero(Z, KernelParams::isotropic(1, 1.0), KernelParams::isotropic(1, 1.0));
  const FieldCache c(zero);
  EXPECT_GT(distribution_discrepancy(sys, InducingField(zero, c), v1(0.5), 1.0, n, 7, indep), floor);
}

TEST(Discrepancy, KdeMetricAvailable) {
  const auto sys = double_well();
  DiscrepancyOptions opt;
  opt.metric = DiscrepancyMetric::kde_l2;
  opt.kde_box = box1(-3, 3);
  EXPECT_EQ(distribution_discrepancy(sys, sys, v1(0.0), 1.0, 100, 1, opt), 0.0);
  opt.independent_noise = true;
  EXPECT_GT(distribution_discrepancy(sys, sys, v1(0.0), 1.0, 100, 1, opt), 0.0);
  EXPECT_THROW(distribution_discrepancy(sys, sys, v1(0.0), 0.0, 100, 1), InputError);
}
