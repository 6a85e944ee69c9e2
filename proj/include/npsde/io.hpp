#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npsde/optimize.hpp"

namespace npsde::io {

using nlohmann::json;

inline constexpr const char* kModelSchema = "npsde.model";
inline constexpr int kModelVersion = 1;
inline constexpr const char* kReportSchema = "npsde.fit_report";
inline constexpr int kReportVersion = 1;

// 17 significant digits: enough to round-trip any double.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes to a sibling temporary file and renames it over the target.
inline void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + tmp.string() + "' for writing");
    out << contents;
    out.flush();
    if (!out) throw InputError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- trajectories ---------------------------------------------------------

inline std::string trajectory_to_csv(const Trajectory& tr) {
  std::string s = "t";
  for (Eigen::Index d = 0; d < tr.dim(); ++d) s += ",x_" + std::to_string(d + 1);
  s += '\n';
  for (std::size_t i = 0; i < tr.size(); ++i) {
    s += format_real(tr.times[i]);
    for (Eigen::Index d = 0; d < tr.dim(); ++d) s += ',' + format_real(tr.obs(static_cast<Eigen::Index>(i), d));
    s += '\n';
  }
  return s;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_real(const std::string& cell, const std::string& file, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (...) {
    throw ParseError(file, line, "not a number: '" + cell + "'");
  }
  if (used != cell.size()) throw ParseError(file, line, "trailing characters in number: '" + cell + "'");
  return v;
}

}  // namespace detail

/// Parses a `t,x_1,...,x_D` CSV. `name` is used in error messages.
inline Trajectory trajectory_from_csv(const std::string& text, const std::string& name = "<csv>") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(name, 1, "empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv(line);
  if (header.size() < 2 || header[0] != "t") throw ParseError(name, 1, "expected header 't,x_1,...,x_D'");
  for (std::size_t d = 1; d < header.size(); ++d)
    if (header[d] != "x_" + std::to_string(d)) throw ParseError(name, 1, "unexpected column '" + header[d] + "'");
  const auto D = static_cast<Eigen::Index>(header.size() - 1);
  std::vector<double> times;
  std::vector<double> vals;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (static_cast<Eigen::Index>(cells.size()) != D + 1)
      throw ParseError(name, lineno, "expected " + std::to_string(D + 1) + " columns, got " + std::to_string(cells.size()));
    times.push_back(detail::parse_real(cells[0], name, lineno));
    for (Eigen::Index d = 0; d < D; ++d) vals.push_back(detail::parse_real(cells[static_cast<std::size_t>(d + 1)], name, lineno));
  }
  Trajectory tr;
  tr.times = std::move(times);
  tr.obs = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      vals.data(), static_cast<Eigen::Index>(tr.times.size()), D);
  try {
    tr.validate();
  } catch (const InputError& e) {
    throw ParseError(name, lineno, e.what());
  }
  return tr;
}

inline Trajectory load_trajectory(const std::filesystem::path& path) {
  return trajectory_from_csv(read_file(path), path.string());
}

// ---- model ----------------------------------------------------------------

namespace detail {

inline json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json mat_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Vector json_vec(const json& j, Eigen::Index n, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    throw InputError(std::string("model file: '") + what + "' must be an array of " + std::to_string(n) + " numbers");
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

inline Matrix json_mat(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw InputError(std::string("model file: '") + what + "' must have " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = json_vec(j[static_cast<std::size_t>(i)], cols, what).transpose();
  return m;
}

inline json kernel_json(const KernelParams& p) {
  return {{"variance", p.variance}, {"lengthscales", vec_json(p.lengthscales)}};
}

inline KernelParams json_kernel(const json& j, Eigen::Index D) {
  return KernelParams(j.at("variance").get<double>(), json_vec(j.at("lengthscales"), D, "lengthscales"));
}

}  // namespace detail

inline json model_to_json(const InducingModel& m) {
  return {{"schema", kModelSchema},
          {"version", kModelVersion},
          {"D", m.dim()},
          {"M", m.size()},
          {"Z", detail::mat_json(m.Z)},
          {"U_f", detail::mat_json(m.U_f)},
          {"u_sigma", detail::vec_json(m.u_sigma)},
          {"drift_kernel", detail::kernel_json(m.drift_params)},
          {"diffusion_kernel", detail::kernel_json(m.diff_params)},
          {"A", detail::mat_json(m.A.matrix())},
          {"noise_vars", detail::vec_json(m.noise_vars)}};
}

inline InducingModel model_from_json(const json& j) {
  try {
    if (j.at("schema").get<std::string>() != kModelSchema) throw InputError("model file: wrong schema");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) throw InputError("model file: unsupported version " + std::to_string(version));
    const auto D = j.at("D").get<Eigen::Index>();
    const auto M = j.at("M").get<Eigen::Index>();
    if (D < 1 || M < 1) throw InputError("model file: D and M must be positive");
    InducingModel m;
    m.Z = detail::json_mat(j.at("Z"), M, D, "Z");
    m.U_f = detail::json_mat(j.at("U_f"), M, D, "U_f");
    m.u_sigma = detail::json_vec(j.at("u_sigma"), M, "u_sigma");
    m.drift_params = detail::json_kernel(j.at("drift_kernel"), D);
    m.diff_params = detail::json_kernel(j.at("diffusion_kernel"), D);
    m.A = DependencyMatrix(detail::json_mat(j.at("A"), D, D, "A"));
    m.noise_vars = detail::json_vec(j.at("noise_vars"), D, "noise_vars");
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("model file: ") + e.what());
  }
}

inline std::string model_to_string(const InducingModel& m) { return model_to_json(m).dump(2) + "\n"; }

inline InducingModel load_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return model_from_json(j);
}

inline void save_model(const std::filesystem::path& path, const InducingModel& m) {
  atomic_write(path, model_to_string(m));
}

// ---- fit report -----------------------------------------------------------

inline json report_to_json(const FitReport& r, bool include_timing = false) {
  json trace = json::array();
  for (const auto& t : r.trace)
    trace.push_back({{"iteration", t.iteration}, {"epoch", t.epoch}, {"log_posterior", t.log_posterior},
                     {"grad_norm", t.grad_norm}});
  json cands = json::array();
  for (const auto& c : r.candidates)
    cands.push_back({{"drift_lengthscale", c.lengthscales.drift},
                     {"diffusion_lengthscale", c.lengthscales.diffusion},
                     {"termination", to_string(c.termination)},
                     {"iterations", c.iterations},
                     {"init_log_posterior", c.init_log_posterior},
                     {"final_log_posterior", c.final_log_posterior},
                     {"message", c.message}});
  json j = {{"schema", kReportSchema},
            {"version", kReportVersion},
            {"termination", to_string(r.termination)},
            {"message", r.message},
            {"selected_lengthscales",
             {{"drift", r.selected_lengthscales.drift}, {"diffusion", r.selected_lengthscales.diffusion}}},
            {"init_log_posterior", r.init_log_posterior},
            {"final_log_posterior", r.final_log_posterior},
            {"candidates", std::move(cands)},
            {"trace", std::move(trace)},
            {"final_model", model_to_json(r.final_model)}};
  if (include_timing) j["wall_time"] = r.wall_time;
  return j;
}

inline std::string trace_to_csv(const FitReport& r) {
  std::string s = "iteration,epoch,objective,grad_norm\n";
  for (const auto& t : r.trace)
    s += std::to_string(t.iteration) + ',' + std::to_string(t.epoch) + ',' + format_real(t.log_posterior) + ',' +
         format_real(t.grad_norm) + '\n';
  return s;
}

// ---- simulation outputs ---------------------------------------------------

inline std::string paths_to_csv(const PathBundle& b) {
  if (b.paths.empty()) throw InputError("paths_to_csv: empty bundle");
  const Eigen::Index D = b.paths.front().cols();
  std::string s = "sample,step,time";
  for (Eigen::Index d = 0; d < D; ++d) s += ",x_" + std::to_string(d + 1);
  s += '\n';
  for (std::size_t k = 0; k < b.paths.size(); ++k)
    for (Eigen::Index i = 0; i < b.paths[k].rows(); ++i) {
      s += std::to_string(k) + ',' + std::to_string(i) + ',' + format_real(b.grid.time(static_cast<std::size_t>(i)));
      for (Eigen::Index d = 0; d < D; ++d) s += ',' + format_real(b.paths[k](i, d));
      s += '\n';
    }
  return s;
}

inline std::string density_to_csv(const Matrix& points, const Vector& density) {
  std::string s;
  for (Eigen::Index d = 0; d < points.cols(); ++d) s += "x_" + std::to_string(d + 1) + ',';
  s += "density\n";
  for (Eigen::Index k = 0; k < points.rows(); ++k) {
    for (Eigen::Index d = 0; d < points.cols(); ++d) s += format_real(points(k, d)) + ',';
    s += format_real(density[k]) + '\n';
  }
  return s;
}

}  // namespace npsde::io
