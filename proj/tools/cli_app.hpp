#pragma once

// Command-line front end: generate | fit | simulate | evaluate.
//
// Exit statuses: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "npsde/npsde.hpp"

namespace npsde::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

// Bad command-line values that the parser itself cannot detect.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered key/value echo of a fully resolved configuration, written as an
/// INI section so it can be passed back through --config.
class Manifest {
 public:
  explicit Manifest(std::string section) : section_(std::move(section)) {}

  void set(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }
  void set(const std::string& key, double v) { set(key, io::format_real(v)); }
  void set(const std::string& key, int v) { set(key, std::to_string(v)); }
  void set(const std::string& key, std::size_t v) { set(key, std::to_string(v)); }
  void set(const std::string& key, std::uint64_t v, bool) { set(key, std::to_string(v)); }
  void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }
  void set(const std::string& key, const Vector& v) {
    std::vector<std::string> parts;
    for (Eigen::Index i = 0; i < v.size(); ++i) parts.push_back(io::format_real(v[i]));
    set_list(key, parts);
  }
  void comment(const std::string& text) { entries_.emplace_back("; " + text, ""); }
  void set_list(const std::string& key, const std::vector<std::string>& parts) {
    std::string s = "[";
    for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? ", " : "") + quote(parts[i]);
    set(key, s + "]");
  }

  std::string str() const {
    std::string s = "[" + section_ + "]\n";
    for (const auto& [k, v] : entries_) s += k.starts_with(";") ? k + "\n" : k + "=" + v + "\n";
    return s;
  }

 private:
  static std::string quote(const std::string& s) {
    const bool numeric = !s.empty() && s.find_first_not_of("0123456789+-.eE") == std::string::npos;
    return numeric ? s : "\"" + s + "\"";
  }

  std::string section_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + dir.string() + "'");
  const fs::path probe = dir / ".npsde_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw UsageError("output directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);
}

inline ParametricSystem lookup_system(const std::string& name) {
  try {
    return system_by_name(name);
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
}

inline Vector broadcast(const std::vector<double>& v, Eigen::Index D, const char* what) {
  if (v.size() == 1) return Vector::Constant(D, v[0]);
  if (static_cast<Eigen::Index>(v.size()) != D)
    throw UsageError(std::string(what) + " needs 1 or " + std::to_string(D) + " values");
  return Eigen::Map<const Vector>(v.data(), D);
}

// Trajectory CSVs from a list of files and/or directories (sorted *.csv).
inline std::vector<Trajectory> load_dataset(const std::vector<std::string>& inputs,
                                            std::vector<std::string>* resolved = nullptr) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      if (found.empty()) throw InputError("no .csv files in '" + p.string() + "'");
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  std::vector<Trajectory> data;
  for (const auto& f : files) {
    data.push_back(io::load_trajectory(f));
    if (resolved) resolved->push_back(f.string());
    if (data.back().dim() != data.front().dim())
      throw InputError("'" + f.string() + "': dimension differs from the first trajectory");
  }
  if (data.empty()) throw InputError("no trajectories given");
  return data;
}

struct SystemDefaults {
  double gen_dt;
  std::size_t every;
  double x0_lo, x0_hi;
  double box_lo, box_hi;
};

inline SystemDefaults defaults_for(const std::string& name) {
  if (name == "double-well") return {0.01, 2, -1.5, 1.5, -1.8, 1.8};
  if (name == "oscillator") return {0.005, 100, -2.0, 2.0, -2.5, 2.5};
  return {0.005, 100, -3.0, 3.0, -3.5, 3.5};
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::string system;
  std::size_t n_traj = 1;
  std::size_t n_obs = 25;
  std::optional<double> gen_dt;
  std::optional<std::size_t> every;
  double noise_std = 0.1;
  std::vector<double> x0_min, x0_max;
  std::uint64_t seed = 0;
  std::string out;
};

inline void add_generate(CLI::App& app, GenerateArgs& a) {
  auto* c = app.add_subcommand("generate", "Simulate noisy trajectories from a benchmark system");
  c->add_option("--system", a.system, "double-well | oscillator | van-der-pol")->required();
  c->add_option("--n-traj", a.n_traj, "Number of trajectories")->check(CLI::PositiveNumber);
  c->add_option("--n-obs", a.n_obs, "Observations per trajectory")->check(CLI::Range(2, 100000000));
  c->add_option("--gen-dt", a.gen_dt, "Euler-Maruyama step used for generation")->check(CLI::PositiveNumber);
  c->add_option("--subsample-every", a.every, "Keep every k-th simulated state")->check(CLI::PositiveNumber);
  c->add_option("--noise-std", a.noise_std, "Observation noise standard deviation")->check(CLI::NonNegativeNumber);
  c->add_option("--x0-min", a.x0_min, "Lower corner of the initial-state box (1 or D values)");
  c->add_option("--x0-max", a.x0_max, "Upper corner of the initial-state box (1 or D values)");
  c->add_option("--seed", a.seed, "Random seed");
  c->add_option("--out", a.out, "Output directory")->required();
}

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const ParametricSystem sys = lookup_system(a.system);
  const SystemDefaults def = defaults_for(sys.name);
  const Eigen::Index D = sys.dim();
  GenSpec spec;
  spec.n_traj = a.n_traj;
  spec.n_obs_per_traj = a.n_obs;
  spec.gen_dt = a.gen_dt.value_or(def.gen_dt);
  spec.subsample_every = a.every.value_or(def.every);
  spec.noise_std = a.noise_std;
  spec.x0_box.lo = a.x0_min.empty() ? Vector::Constant(D, def.x0_lo) : broadcast(a.x0_min, D, "--x0-min");
  spec.x0_box.hi = a.x0_max.empty() ? Vector::Constant(D, def.x0_hi) : broadcast(a.x0_max, D, "--x0-max");
  spec.seed = a.seed;
  try {
    spec.validate(D);
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  prepare_output_dir(a.out);

  const auto data = generate(sys, spec);
  Manifest m("generate");
  m.set("system", sys.name);
  m.set("n-traj", spec.n_traj);
  m.set("n-obs", spec.n_obs_per_traj);
  m.set("gen-dt", spec.gen_dt);
  m.set("subsample-every", spec.subsample_every);
  m.set("noise-std", spec.noise_std);
  m.set("x0-min", spec.x0_box.lo);
  m.set("x0-max", spec.x0_box.hi);
  m.set("seed", spec.seed, true);
  std::string names;
  for (std::size_t k = 0; k < data.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "traj_%03zu.csv", k);
    io::atomic_write(fs::path(a.out) / name, io::trajectory_to_csv(data[k]));
    names += (k ? " " : "") + std::string(name);
  }
  m.comment("wrote: " + names);
  io::atomic_write(fs::path(a.out) / "manifest.ini", m.str());
  out << "wrote " << data.size() << " trajectories to " << a.out << "\n";
  return kOk;
}

// ---- fit ----------------------------------------------------------------------

struct FitArgs {
  std::vector<std::string> data;
  std::string out;
  int max_iters = 500;
  double grad_tol = 1e-4;
  std::vector<std::string> lengthscales;
  std::vector<int> inducing_count;
  std::vector<double> inducing_min, inducing_max;
  std::size_t samples = 50;
  int resolution = 10;
  std::uint64_t seed = 0;
  std::size_t resample_period = 20;
  double drift_variance = 1.0;
  double diffusion_variance = 1.0;
  unsigned threads = 0;
  bool timing = false;
};

inline void add_fit(CLI::App& app, FitArgs& a) {
  auto* c = app.add_subcommand("fit", "MAP fit of an inducing-point SDE model to trajectory CSVs");
  c->add_option("--data", a.data, "Trajectory CSV files or directories")->required();
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_option("--max-iters", a.max_iters, "Optimizer iterations per lengthscale candidate")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--grad-tol", a.grad_tol, "Stop when the gradient infinity norm is below this")
      ->check(CLI::PositiveNumber);
  c->add_option("--lengthscale", a.lengthscales,
                "Lengthscale candidate, 'L' (drift and diffusion) or 'Lf:Ls'; repeatable. "
                "Default: {0.2, 0.5, 1, 2} times the data spread");
  c->add_option("--inducing-count", a.inducing_count, "Inducing points per dimension (1 or D values)");
  c->add_option("--inducing-min", a.inducing_min, "Inducing grid lower bounds (default: data range - 10%)");
  c->add_option("--inducing-max", a.inducing_max, "Inducing grid upper bounds (default: data range + 10%)");
  c->add_option("--samples", a.samples, "Monte Carlo sample paths per trajectory")->check(CLI::PositiveNumber);
  c->add_option("--resolution", a.resolution, "Euler-Maruyama steps per observation interval")
      ->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed, "Seed for the Brownian increments");
  c->add_option("--resample-period", a.resample_period, "Accepted steps before redrawing the noise (0: never)");
  c->add_option("--drift-variance", a.drift_variance, "Drift kernel variance")->check(CLI::PositiveNumber);
  c->add_option("--diffusion-variance", a.diffusion_variance, "Diffusion kernel variance")
      ->check(CLI::PositiveNumber);
  c->add_option("--threads", a.threads, "Worker threads (0: NPSDE_THREADS or hardware count)");
  c->add_flag("--report-timing", a.timing, "Include wall-clock time in report.json");
}

inline LengthscaleCandidate parse_lengthscale(const std::string& s) {
  try {
    const auto colon = s.find(':');
    std::size_t used = 0;
    LengthscaleCandidate c;
    if (colon == std::string::npos) {
      c.drift = c.diffusion = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
    } else {
      const std::string a = s.substr(0, colon), b = s.substr(colon + 1);
      c.drift = std::stod(a, &used);
      if (used != a.size()) throw std::invalid_argument(s);
      c.diffusion = std::stod(b, &used);
      if (used != b.size()) throw std::invalid_argument(s);
    }
    if (!(c.drift > 0.0) || !(c.diffusion > 0.0)) throw std::invalid_argument(s);
    return c;
  } catch (const std::exception&) {
    throw UsageError("--lengthscale: expected 'L' or 'Lf:Ls' with positive values, got '" + s + "'");
  }
}

inline int default_inducing_count(Eigen::Index D) { return D == 1 ? 15 : D == 2 ? 7 : 5; }

inline int cmd_fit(const FitArgs& a, std::ostream& out) {
  std::vector<std::string> files;
  const auto data = load_dataset(a.data, &files);
  const Eigen::Index D = data.front().dim();

  FitConfig cfg;
  cfg.max_iters = a.max_iters;
  cfg.grad_tol = a.grad_tol;
  for (const auto& s : a.lengthscales) cfg.lengthscale_grid.push_back(parse_lengthscale(s));
  std::vector<double> counts;
  for (int c : a.inducing_count) counts.push_back(c);
  const Vector count = counts.empty() ? Vector::Constant(D, default_inducing_count(D))
                                      : broadcast(counts, D, "--inducing-count");
  const Vector nan = Vector::Constant(D, std::numeric_limits<double>::quiet_NaN());
  const Vector lo = a.inducing_min.empty() ? nan : broadcast(a.inducing_min, D, "--inducing-min");
  const Vector hi = a.inducing_max.empty() ? nan : broadcast(a.inducing_max, D, "--inducing-max");
  for (Eigen::Index d = 0; d < D; ++d) {
    if (count[d] < 2) throw UsageError("--inducing-count must be at least 2");
    cfg.inducing_grid.push_back(GridAxis{lo[d], hi[d], static_cast<int>(count[d])});
  }
  cfg.sim.n_samples = a.samples;
  cfg.sim.resolution_factor = a.resolution;
  cfg.sim.seed = a.seed;
  cfg.sim.resample_period = a.resample_period;
  cfg.sim.threads = a.threads;
  cfg.drift_variance = a.drift_variance;
  cfg.diff_variance = a.diffusion_variance;
  prepare_output_dir(a.out);

  // Resolve every default so the manifest reproduces the run exactly.
  const Matrix Z = build_inducing_grid(cfg.inducing_grid, data);
  cfg.lengthscale_grid = resolve_lengthscale_grid(cfg, data);
  Vector zlo(D), zhi(D);
  for (Eigen::Index d = 0; d < D; ++d) {
    zlo[d] = Z.col(d).minCoeff();
    zhi[d] = Z.col(d).maxCoeff();
    cfg.inducing_grid[static_cast<std::size_t>(d)].min = zlo[d];
    cfg.inducing_grid[static_cast<std::size_t>(d)].max = zhi[d];
  }
  Manifest m("fit");
  m.set_list("data", files);
  m.set("max-iters", a.max_iters);
  m.set("grad-tol", a.grad_tol);
  std::vector<std::string> ls;
  for (const auto& c : cfg.lengthscale_grid) ls.push_back(io::format_real(c.drift) + ":" + io::format_real(c.diffusion));
  m.set_list("lengthscale", ls);
  m.set("inducing-count", count);
  m.set("inducing-min", zlo);
  m.set("inducing-max", zhi);
  m.set("samples", a.samples);
  m.set("resolution", a.resolution);
  m.set("seed", a.seed, true);
  m.set("resample-period", a.resample_period);
  m.set("drift-variance", a.drift_variance);
  m.set("diffusion-variance", a.diffusion_variance);
  io::atomic_write(fs::path(a.out) / "manifest.ini", m.str());

  FitReport report;
  try {
    report = fit_map(data, cfg);
  } catch (const FitError& e) {
    io::atomic_write(fs::path(a.out) / "fit_error.txt", std::string(e.what()) + "\n");
    throw;
  }
  io::save_model(fs::path(a.out) / "model.json", report.final_model);
  io::atomic_write(fs::path(a.out) / "report.json", io::report_to_json(report, a.timing).dump(2) + "\n");
  io::atomic_write(fs::path(a.out) / "trace.csv", io::trace_to_csv(report));
  out << "fit " << to_string(report.termination) << ": log posterior " << io::format_real(report.init_log_posterior)
      << " -> " << io::format_real(report.final_log_posterior) << ", lengthscales "
      << io::format_real(report.selected_lengthscales.drift) << ":"
      << io::format_real(report.selected_lengthscales.diffusion) << "\n";
  return kOk;
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string model;
  std::vector<double> x0;
  double t_end = 5.0;
  double dt = 0.01;
  std::size_t samples = 50;
  std::uint64_t seed = 0;
  std::string out;
  std::optional<int> density_grid;
  std::optional<double> density_time;
  std::vector<double> density_min, density_max;
  std::optional<double> bandwidth;
  unsigned threads = 0;
};

inline void add_simulate(CLI::App& app, SimulateArgs& a) {
  auto* c = app.add_subcommand("simulate", "Sample Euler-Maruyama paths from a fitted model");
  c->add_option("--model", a.model, "Model JSON file")->required();
  c->add_option("--x0", a.x0, "Initial state (D values)")->required();
  c->add_option("--t-end", a.t_end, "Simulation horizon")->check(CLI::PositiveNumber);
  c->add_option("--dt", a.dt, "Time step")->check(CLI::PositiveNumber);
  c->add_option("--samples", a.samples, "Number of paths")->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed, "Random seed");
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_option("--density-grid", a.density_grid, "Also write a KDE on this many points per dimension")
      ->check(CLI::Range(2, 100000));
  c->add_option("--density-time", a.density_time, "Time of the density snapshot (default: t-end)");
  c->add_option("--density-min", a.density_min, "Density box lower corner (default: states - 4 bandwidths)");
  c->add_option("--density-max", a.density_max, "Density box upper corner (default: states + 4 bandwidths)");
  c->add_option("--bandwidth", a.bandwidth, "KDE bandwidth (default: Silverman's rule)")->check(CLI::PositiveNumber);
  c->add_option("--threads", a.threads, "Worker threads (0: NPSDE_THREADS or hardware count)");
}

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const InducingModel model = io::load_model(a.model);
  const Eigen::Index D = model.dim();
  if (static_cast<Eigen::Index>(a.x0.size()) != D)
    throw UsageError("--x0 needs " + std::to_string(D) + " values for this model");
  const Vector x0 = Eigen::Map<const Vector>(a.x0.data(), D);
  const auto n_steps = static_cast<std::size_t>(std::llround(a.t_end / a.dt));
  if (n_steps == 0) throw UsageError("--t-end must be at least one --dt");
  const double t_density = a.density_time.value_or(a.t_end);
  const auto density_node = static_cast<std::size_t>(std::llround(t_density / a.dt));
  if (a.density_grid && (t_density < 0.0 || density_node > n_steps))
    throw UsageError("--density-time must lie within [0, t-end]");
  prepare_output_dir(a.out);

  const FieldCache cache(model);
  const TimeGrid grid = uniform_grid(0.0, a.dt, n_steps);
  const PathBundle bundle = sample_paths(InducingField(model, cache), x0, grid, a.samples, a.seed, 0, a.threads);
  io::atomic_write(fs::path(a.out) / "paths.csv", io::paths_to_csv(bundle));

  Manifest m("simulate");
  m.set("model", a.model);
  m.set("x0", x0);
  m.set("t-end", a.t_end);
  m.set("dt", a.dt);
  m.set("samples", a.samples);
  m.set("seed", a.seed, true);
  if (a.density_grid) {
    const Matrix states = bundle.states_at(density_node);
    double h = 0.0;
    if (a.bandwidth) {
      h = *a.bandwidth;
    } else {
      h = states.rows() >= 2 ? silverman_bandwidth(states) : 0.1;
    }
    Box box;
    box.lo = a.density_min.empty() ? Vector((states.colwise().minCoeff().array() - 4.0 * h).transpose())
                                   : broadcast(a.density_min, D, "--density-min");
    box.hi = a.density_max.empty() ? Vector((states.colwise().maxCoeff().array() + 4.0 * h).transpose())
                                   : broadcast(a.density_max, D, "--density-max");
    try {
      box.validate();
    } catch (const InputError& e) {
      throw UsageError(e.what());
    }
    const Matrix pts = box.lattice(*a.density_grid);
    io::atomic_write(fs::path(a.out) / "density.csv", io::density_to_csv(pts, kde(states, pts, h)));
    m.set("density-grid", *a.density_grid);
    m.set("density-time", grid.time(density_node));
    m.set("density-min", box.lo);
    m.set("density-max", box.hi);
    m.set("bandwidth", h);
  }
  io::atomic_write(fs::path(a.out) / "manifest.ini", m.str());
  out << "wrote " << a.samples << " paths of " << n_steps + 1 << " states to " << a.out << "\n";
  return kOk;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string system;
  std::vector<std::string> data;
  std::vector<double> box_min, box_max;
  std::optional<int> grid;
  std::vector<double> x0;
  double horizon = 5.0;
  std::size_t paths = 200;
  double dt = 0.01;
  double checkpoint = 0.5;
  double bandwidth = 0.2;
  std::uint64_t seed = 0;
  std::string out;
  unsigned threads = 0;
};

inline void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* c = app.add_subcommand("evaluate", "Compare a fitted model with a benchmark system");
  c->add_option("--model", a.model, "Model JSON file")->required();
  c->add_option("--system", a.system, "double-well | oscillator | van-der-pol")->required();
  c->add_option("--data", a.data, "Training CSVs; restricts field errors to the visited region");
  c->add_option("--box-min", a.box_min, "Evaluation box lower corner (1 or D values)");
  c->add_option("--box-max", a.box_max, "Evaluation box upper corner (1 or D values)");
  c->add_option("--grid", a.grid, "Evaluation points per dimension")->check(CLI::Range(1, 100000));
  c->add_option("--x0", a.x0, "Start of the discrepancy ensembles (default: first observation of --data)");
  c->add_option("--horizon", a.horizon, "Discrepancy horizon")->check(CLI::PositiveNumber);
  c->add_option("--paths", a.paths, "Paths per ensemble")->check(CLI::PositiveNumber);
  c->add_option("--dt", a.dt, "Simulation step")->check(CLI::PositiveNumber);
  c->add_option("--checkpoint", a.checkpoint, "Spacing of the distribution checkpoints")->check(CLI::PositiveNumber);
  c->add_option("--bandwidth", a.bandwidth, "KDE bandwidth for the L2 discrepancy")->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed, "Random seed");
  c->add_option("--out", a.out, "Also write metrics.json and manifest.ini here");
  c->add_option("--threads", a.threads, "Worker threads (0: NPSDE_THREADS or hardware count)");
}

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const ParametricSystem sys = lookup_system(a.system);
  const InducingModel model = io::load_model(a.model);
  const Eigen::Index D = sys.dim();
  if (model.dim() != D) throw UsageError("model dimension does not match --system");
  if (a.checkpoint < a.dt) throw UsageError("--checkpoint must be at least --dt");
  std::vector<std::string> files;
  std::vector<Trajectory> data;
  if (!a.data.empty()) {
    data = load_dataset(a.data, &files);
    if (data.front().dim() != D) throw InputError("data dimension does not match --system");
  }
  const SystemDefaults def = defaults_for(sys.name);
  Box box;
  box.lo = a.box_min.empty() ? Vector::Constant(D, def.box_lo) : broadcast(a.box_min, D, "--box-min");
  box.hi = a.box_max.empty() ? Vector::Constant(D, def.box_hi) : broadcast(a.box_max, D, "--box-max");
  try {
    box.validate();
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  const int n_grid = a.grid.value_or(D == 1 ? 201 : 41);
  Vector x0;
  if (!a.x0.empty()) {
    x0 = broadcast(a.x0, D, "--x0");
  } else if (!data.empty()) {
    x0 = data.front().obs.row(0).transpose();
  } else {
    throw UsageError("--x0 is required when no --data is given");
  }
  if (!a.out.empty()) prepare_output_dir(a.out);

  std::optional<VisitedRegion> region;
  if (!data.empty()) region.emplace(VisitedRegion::from_trajectories(data, box, n_grid));
  const VisitedRegion* rp = region ? &*region : nullptr;

  const FieldCache cache(model);
  const InducingField fitted(model, cache);
  DiscrepancyOptions opt;
  opt.dt = a.dt;
  opt.checkpoint_interval = a.checkpoint;
  opt.threads = a.threads;
  opt.kde_box = box;
  opt.kde_grid = std::max(n_grid, 2);
  opt.kde_bandwidth = a.bandwidth;
  DiscrepancyOptions opt_l2 = opt;
  opt_l2.metric = DiscrepancyMetric::kde_l2;
  // Calibration: two independent ensembles of the true system.
  DiscrepancyOptions floor_e = opt, floor_l2 = opt_l2;
  floor_e.independent_noise = floor_l2.independent_noise = true;

  nlohmann::ordered_json j;
  j["system"] = sys.name;
  j["model"] = a.model;
  j["region"] = rp ? "visited" : "box";
  j["drift_error"] = drift_error(sys, model, box, n_grid, rp);
  j["diffusion_error"] = diffusion_error(sys, model, box, n_grid, rp);
  j["discrepancy"] = {
      {"energy", distribution_discrepancy(sys, fitted, x0, a.horizon, a.paths, a.seed, opt)},
      {"kde_l2", distribution_discrepancy(sys, fitted, x0, a.horizon, a.paths, a.seed, opt_l2)},
      {"noise_floor_energy", distribution_discrepancy(sys, sys, x0, a.horizon, a.paths, a.seed, floor_e)},
      {"noise_floor_kde_l2", distribution_discrepancy(sys, sys, x0, a.horizon, a.paths, a.seed, floor_l2)}};
  const std::string text = j.dump(2) + "\n";
  out << text;

  if (!a.out.empty()) {
    Manifest m("evaluate");
    m.set("model", a.model);
    m.set("system", sys.name);
    if (!files.empty()) m.set_list("data", files);
    m.set("box-min", box.lo);
    m.set("box-max", box.hi);
    m.set("grid", n_grid);
    m.set("x0", x0);
    m.set("horizon", a.horizon);
    m.set("paths", a.paths);
    m.set("dt", a.dt);
    m.set("checkpoint", a.checkpoint);
    m.set("bandwidth", a.bandwidth);
    m.set("seed", a.seed, true);
    io::atomic_write(fs::path(a.out) / "metrics.json", text);
    io::atomic_write(fs::path(a.out) / "manifest.ini", m.str());
  }
  return kOk;
}

// ---- entry point --------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app("Non-parametric SDE learning: inducing-point Gaussian process drift and diffusion", "npsde");
  app.set_config("--config", "", "INI file with one [command] section; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  GenerateArgs gen;
  FitArgs fit;
  SimulateArgs sim;
  EvaluateArgs eval;
  add_generate(app, gen);
  add_fit(app, fit);
  add_simulate(app, sim);
  add_evaluate(app, eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (app.got_subcommand("generate")) return cmd_generate(gen, out);
    if (app.got_subcommand("fit")) return cmd_fit(fit, out);
    if (app.got_subcommand("simulate")) return cmd_simulate(sim, out);
    return cmd_evaluate(eval, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const InputError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace npsde::cli
