#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "npsde/error.hpp"

namespace npsde {

struct LbfgsOptions {
  int memory = 10;
  double c1 = 1e-4;           // sufficient decrease
  double c2 = 0.9;            // curvature
  int max_line_search = 30;
  double max_step = 1e10;
};

/// Limited-memory BFGS minimizer with a strong-Wolfe line search.
///
/// The caller drives iterations with step() so that it can swap the
/// objective between calls (frozen-noise epochs) via restart(). The objective
/// is fn(x, grad) -> value; a thrown NumericalError counts as +infinity.
class Lbfgs {
 public:
  using Vec = Eigen::VectorXd;

  explicit Lbfgs(LbfgsOptions opt = {}) : opt_(opt) {}

  /// Evaluates fn at x0 and clears the curvature memory.
  template <class Fn>
  void restart(Fn&& fn, const Vec& x0) {
    x_ = x0;
    g_.resize(x0.size());
    f_ = fn(x_, g_);
    if (!std::isfinite(f_) || !g_.allFinite()) throw NumericalError("objective is not finite at the starting point");
    s_.clear();
    y_.clear();
  }

  /// One quasi-Newton iteration. Returns false when no step satisfying the
  /// Wolfe conditions could be found even along steepest descent; the
  /// iterate is left unchanged in that case.
  template <class Fn>
  bool step(Fn&& fn) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      Vec d = direction();
      double dphi0 = g_.dot(d);
      if (!(dphi0 < 0.0)) {
        s_.clear();
        y_.clear();
        d = -g_;
        dphi0 = g_.dot(d);
        if (!(dphi0 < 0.0)) return false;
      }
      const double alpha0 = s_.empty() ? std::min(1.0, 1.0 / std::max(g_.lpNorm<Eigen::Infinity>(), 1e-300)) : 1.0;
      if (auto res = line_search(fn, d, dphi0, alpha0)) {
        const Vec s = res->x - x_;
        const Vec y = res->g - g_;
        if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
          s_.push_back(s);
          y_.push_back(y);
          if (static_cast<int>(s_.size()) > opt_.memory) {
            s_.pop_front();
            y_.pop_front();
          }
        }
        x_ = std::move(res->x);
        g_ = std::move(res->g);
        f_ = res->f;
        return true;
      }
      if (s_.empty()) return false;
      s_.clear();
      y_.clear();
    }
    return false;
  }

  const Vec& x() const { return x_; }
  const Vec& gradient() const { return g_; }
  double value() const { return f_; }

 private:
  struct Point {
    Vec x;
    Vec g;
    double f;
    double dphi;
  };

  // Two-loop recursion for -H g.
  Vec direction() const {
    Vec q = g_;
    const std::size_t k = s_.size();
    std::vector<double> a(k), rho(k);
    for (std::size_t i = k; i-- > 0;) {
      rho[i] = 1.0 / y_[i].dot(s_[i]);
      a[i] = rho[i] * s_[i].dot(q);
      q -= a[i] * y_[i];
    }
    if (k > 0) q *= s_.back().dot(y_.back()) / y_.back().squaredNorm();
    for (std::size_t i = 0; i < k; ++i) {
      const double b = rho[i] * y_[i].dot(q);
      q += (a[i] - b) * s_[i];
    }
    return -q;
  }

  template <class Fn>
  Point eval(Fn& fn, const Vec& d, double alpha) {
    Point p{x_ + alpha * d, Vec(x_.size()), std::numeric_limits<double>::infinity(), 0.0};
    try {
      p.f = fn(p.x, p.g);
    } catch (const NumericalError&) {
      p.f = std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(p.f) || !p.g.allFinite()) {
      p.f = std::numeric_limits<double>::infinity();
      p.dphi = std::numeric_limits<double>::quiet_NaN();
    } else {
      p.dphi = p.g.dot(d);
    }
    return p;
  }

  // Minimizer of the cubic through (a, fa, da), (b, fb, db), clamped into
  // the interior of [a, b]; bisection when the cubic is unusable.
  static double interpolate(double a, double fa, double da, double b, double fb, double db) {
    const double lo = std::min(a, b), hi = std::max(a, b);
    double t = 0.5 * (a + b);
    if (std::isfinite(fb) && std::isfinite(db)) {
      const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
      const double disc = d1 * d1 - da * db;
      if (disc >= 0.0) {
        const double d2 = std::copysign(std::sqrt(disc), b - a);
        const double c = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if (std::isfinite(c)) t = c;
      }
    }
    const double margin = 0.1 * (hi - lo);
    return std::clamp(t, lo + margin, hi - margin);
  }

  template <class Fn>
  std::optional<Point> line_search(Fn& fn, const Vec& d, double dphi0, double alpha) {
    const double f0 = f_;
    double a_prev = 0.0, f_prev = f0, d_prev = dphi0;
    for (int i = 0; i < opt_.max_line_search; ++i) {
      Point p = eval(fn, d, alpha);
      if (p.f > f0 + opt_.c1 * alpha * dphi0 || (i > 0 && p.f >= f_prev))
        return zoom(fn, d, dphi0, a_prev, f_prev, d_prev, alpha, p.f, p.dphi);
      if (std::abs(p.dphi) <= -opt_.c2 * dphi0) return p;
      if (p.dphi >= 0.0) return zoom(fn, d, dphi0, alpha, p.f, p.dphi, a_prev, f_prev, d_prev);
      a_prev = alpha;
      f_prev = p.f;
      d_prev = p.dphi;
      alpha = std::min(2.0 * alpha, opt_.max_step);
    }
    return std::nullopt;
  }

  template <class Fn>
  std::optional<Point> zoom(Fn& fn, const Vec& d, double dphi0, double lo, double flo, double dlo, double hi,
                            double fhi, double dhi) {
    const double f0 = f_;
    std::optional<Point> best;
    for (int i = 0; i < opt_.max_line_search; ++i) {
      if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
      const double a = interpolate(lo, flo, dlo, hi, fhi, dhi);
      Point p = eval(fn, d, a);
      if (p.f > f0 + opt_.c1 * a * dphi0 || p.f >= flo) {
        hi = a;
        fhi = p.f;
        dhi = p.dphi;
        continue;
      }
      if (std::abs(p.dphi) <= -opt_.c2 * dphi0) return p;
      if (p.dphi * (hi - lo) >= 0.0) {
        hi = lo;
        fhi = flo;
        dhi = dlo;
      }
      lo = a;
      flo = p.f;
      dlo = p.dphi;
      best = std::move(p);
    }
    // Sufficient decrease without curvature is still a valid descent step.
    if (best && best->f < f0) return best;
    return std::nullopt;
  }

  LbfgsOptions opt_;
  Vec x_;
  Vec g_;
  double f_ = 0.0;
  std::deque<Vec> s_;
  std::deque<Vec> y_;
};

}  // namespace npsde
