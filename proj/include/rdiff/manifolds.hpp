#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <variant>

#include "rdiff/error.hpp"
#include "rdiff/rng.hpp"

namespace rdiff {

/// A manifold element. Euclidean: d x 1 vector; Sphere: unit vector in
/// R^{d+1}; Grassmann G(d,p): d x p matrix with orthonormal columns that
/// represents its column span.
struct Point {
  Eigen::MatrixXd coords;
};

/// Element of the tangent space at `base`, stored in ambient coordinates.
struct TangentVector {
  Eigen::MatrixXd base;
  Eigen::MatrixXd vec;

  double norm() const { return vec.norm(); }
  TangentVector scaled(double a) const { return {base, a * vec}; }
};

enum class ManifoldKind { Euclidean, Sphere, Grassmann };

inline const char* to_string(ManifoldKind k) {
  switch (k) {
    case ManifoldKind::Euclidean: return "euclidean";
    case ManifoldKind::Sphere: return "sphere";
    case ManifoldKind::Grassmann: return "grassmann";
  }
  return "?";
}

/// Geometry of the working domain: curvature bounds, injectivity radius and
/// the user-chosen diameter cap D of the geodesically convex set.
struct ManifoldSpec {
  ManifoldKind kind = ManifoldKind::Euclidean;
  int d = 1;
  int p = 1;
  double k_min = 0.0;
  double k_max = 0.0;
  double inj = std::numeric_limits<double>::infinity();
  double diameter = 1.0;

  /// Throws DomainTooLarge naming the violated condition.
  void validate() const {
    if (!(k_min <= k_max))
      throw Error(ErrorCode::DomainTooLarge, "curvature bounds require K_min <= K_max");
    if (!(diameter > 0.0))
      throw Error(ErrorCode::DomainTooLarge, "diameter D must be positive");
    if (!(diameter < inj))
      throw Error(ErrorCode::DomainTooLarge,
                  "diameter D=" + std::to_string(diameter) + " must be below the injectivity radius " +
                      std::to_string(inj));
    if (k_max > 0.0 && !(diameter < std::numbers::pi / (2.0 * std::sqrt(k_max))))
      throw Error(ErrorCode::DomainTooLarge,
                  "diameter D=" + std::to_string(diameter) + " must satisfy D < pi/(2 sqrt(K_max))");
  }
};

namespace detail {

inline constexpr double kBaseTol = 1e-12;

inline void require_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                          const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + " has shape " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols));
}

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = rng.normal();
  return g;
}

}  // namespace detail

/// Shared operations for the concrete geometries. Derived classes provide
/// rows(), cols(), exp, log, dist, project_tangent, random_point and the
/// curvature data; everything here is written once on top of those.
template <class Derived>
class ManifoldBase {
 public:
  const Derived& self() const { return static_cast<const Derived&>(*this); }

  void check_point(const Point& x) const {
    detail::require_shape(x.coords, self().rows(), self().cols(), "point");
  }

  void check_base(const Point& x, const TangentVector& v) const {
    check_point(x);
    detail::require_shape(v.vec, self().rows(), self().cols(), "tangent vector");
    if (v.base.rows() != x.coords.rows() || v.base.cols() != x.coords.cols() ||
        (v.base - x.coords).cwiseAbs().maxCoeff() > detail::kBaseTol)
      throw Error(ErrorCode::BaseMismatch, "tangent vector is not based at the given point");
  }

  TangentVector zero_tangent(const Point& x) const {
    return {x.coords, Eigen::MatrixXd::Zero(x.coords.rows(), x.coords.cols())};
  }

  /// Trace inner product on ambient coordinates.
  double inner(const Point& x, const TangentVector& u, const TangentVector& v) const {
    check_base(x, u);
    check_base(x, v);
    return (u.vec.array() * v.vec.array()).sum();
  }

  double norm(const Point& x, const TangentVector& v) const {
    check_base(x, v);
    return v.vec.norm();
  }

  TangentVector random_tangent(const Point& x, double norm, Rng& rng) const {
    check_point(x);
    if (norm == 0.0) return zero_tangent(x);
    TangentVector t;
    do {
      t = self().project_tangent(x, detail::gaussian(self().rows(), self().cols(), rng));
    } while (t.vec.norm() < 1e-8);
    t.vec *= norm / t.vec.norm();
    return t;
  }

  ManifoldSpec spec(double diameter) const {
    ManifoldSpec s;
    s.kind = Derived::kKind;
    s.d = self().dim_d();
    s.p = self().dim_p();
    s.k_min = self().k_min();
    s.k_max = self().k_max();
    s.inj = self().injectivity_radius();
    s.diameter = diameter;
    return s;
  }

 protected:
  void check_injectivity(const TangentVector& v) const {
    if (!(v.vec.norm() < self().injectivity_radius()))
      throw Error(ErrorCode::InjectivityViolation,
                  "tangent norm " + std::to_string(v.vec.norm()) +
                      " reaches the injectivity radius " +
                      std::to_string(self().injectivity_radius()));
  }
};

/// Flat R^d.
class Euclidean : public ManifoldBase<Euclidean> {
 public:
  static constexpr ManifoldKind kKind = ManifoldKind::Euclidean;

  explicit Euclidean(int d) : d_(d) {}

  int dim_d() const { return d_; }
  int dim_p() const { return 1; }
  Eigen::Index rows() const { return d_; }
  Eigen::Index cols() const { return 1; }
  double k_min() const { return 0.0; }
  double k_max() const { return 0.0; }
  double injectivity_radius() const { return std::numeric_limits<double>::infinity(); }

  Point exp(const Point& x, const TangentVector& v) const {
    check_base(x, v);
    return {x.coords + v.vec};
  }

  TangentVector log(const Point& x, const Point& y) const {
    check_point(x);
    check_point(y);
    return {x.coords, y.coords - x.coords};
  }

  double dist(const Point& x, const Point& y) const {
    check_point(x);
    check_point(y);
    return (y.coords - x.coords).norm();
  }

  TangentVector project_tangent(const Point& x, const Eigen::MatrixXd& w) const {
    check_point(x);
    detail::require_shape(w, rows(), cols(), "ambient vector");
    return {x.coords, w};
  }

  Point random_point(Rng& rng) const { return {detail::gaussian(d_, 1, rng)}; }

  bool contains(const Point& x, double tol = 1e-10) const {
    (void)tol;
    return x.coords.rows() == d_ && x.coords.cols() == 1 && x.coords.allFinite();
  }

 private:
  int d_;
};

/// Unit sphere S^d embedded in R^{d+1}, curvature 1.
class Sphere : public ManifoldBase<Sphere> {
 public:
  static constexpr ManifoldKind kKind = ManifoldKind::Sphere;
  /// log refuses pairs whose inner product is below -1 + this.
  static constexpr double kAntipodalTol = 1e-12;

  explicit Sphere(int d) : d_(d) {}

  int dim_d() const { return d_; }
  int dim_p() const { return 1; }
  Eigen::Index rows() const { return d_ + 1; }
  Eigen::Index cols() const { return 1; }
  double k_min() const { return 1.0; }
  double k_max() const { return 1.0; }
  double injectivity_radius() const { return std::numbers::pi; }

  Point exp(const Point& x, const TangentVector& v) const {
    check_base(x, v);
    check_injectivity(v);
    const double nv = v.vec.norm();
    Eigen::MatrixXd y;
    if (nv < 1e-300) {
      return {x.coords};
    } else {
      y = std::cos(nv) * x.coords + (std::sin(nv) / nv) * v.vec;
    }
    y /= y.norm();
    return {y};
  }

  TangentVector log(const Point& x, const Point& y) const {
    check_point(x);
    check_point(y);
    if (x.coords == y.coords) return zero_tangent(x);
    const double c = (x.coords.array() * y.coords.array()).sum();
    if (c < -1.0 + kAntipodalTol)
      throw Error(ErrorCode::CutLocus, "sphere points are (numerically) antipodal");
    Eigen::MatrixXd u = y.coords - c * x.coords;
    const double nu = u.norm();
    if (nu == 0.0) return zero_tangent(x);
    const double theta = std::atan2(nu, c);
    u *= theta / nu;
    // strip the residual normal component left by rounding
    u -= (x.coords.array() * u.array()).sum() * x.coords;
    return {x.coords, u};
  }

  double dist(const Point& x, const Point& y) const {
    check_point(x);
    check_point(y);
    const double chord = (x.coords - y.coords).norm();
    return 2.0 * std::asin(std::min(1.0, 0.5 * chord));
  }

  TangentVector project_tangent(const Point& x, const Eigen::MatrixXd& w) const {
    check_point(x);
    detail::require_shape(w, rows(), cols(), "ambient vector");
    return {x.coords, w - (x.coords.array() * w.array()).sum() * x.coords};
  }

  Point random_point(Rng& rng) const {
    Eigen::MatrixXd g;
    do {
      g = detail::gaussian(rows(), 1, rng);
    } while (g.norm() < 1e-12);
    return {g / g.norm()};
  }

  bool contains(const Point& x, double tol = 1e-10) const {
    return x.coords.rows() == rows() && x.coords.cols() == 1 &&
           std::abs(x.coords.norm() - 1.0) <= tol;
  }

 private:
  int d_;
};

/// Grassmann manifold G(d,p) of p-planes in R^d with the canonical metric.
/// Points are orthonormal d x p representatives; tangent vectors are
/// horizontal lifts at that representative (X^T H = 0).
class Grassmann : public ManifoldBase<Grassmann> {
 public:
  static constexpr ManifoldKind kKind = ManifoldKind::Grassmann;
  /// log refuses pairs with a principal angle above pi/2 - this.
  static constexpr double kCutAngleTol = 1e-6;
  /// exp re-orthonormalizes its result when ||Y^T Y - I|| exceeds this.
  static constexpr double kDriftTol = 1e-10;

  Grassmann(int d, int p) : d_(d), p_(p) {
    if (d < 1 || p < 1 || p > d)
      throw Error(ErrorCode::DimensionMismatch, "Grassmann requires 1 <= p <= d");
  }

  int dim_d() const { return d_; }
  int dim_p() const { return p_; }
  Eigen::Index rows() const { return d_; }
  Eigen::Index cols() const { return p_; }
  double k_min() const { return 0.0; }
  double k_max() const { return 2.0; }
  double injectivity_radius() const { return std::numbers::pi / 2.0; }

  Point exp(const Point& x, const TangentVector& v) const {
    check_base(x, v);
    check_injectivity(v);
    if (v.vec.norm() == 0.0) return {x.coords};
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(v.vec, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::ArrayXd s = svd.singularValues().array();
    const Eigen::MatrixXd& u = svd.matrixU();
    const Eigen::MatrixXd& w = svd.matrixV();
    Eigen::MatrixXd y = (x.coords * w) * s.cos().matrix().asDiagonal() * w.transpose() +
                        u * s.sin().matrix().asDiagonal() * w.transpose();
    const double drift =
        (y.transpose() * y - Eigen::MatrixXd::Identity(p_, p_)).cwiseAbs().maxCoeff();
    if (drift > kDriftTol) y = orthonormalize(y);
    return {y};
  }

  TangentVector log(const Point& x, const Point& y) const {
    check_point(x);
    check_point(y);
    if (x.coords == y.coords) return zero_tangent(x);
    const Eigen::MatrixXd m = x.coords.transpose() * y.coords;
    Eigen::JacobiSVD<Eigen::MatrixXd> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double min_cos = msvd.singularValues().minCoeff();
    if (min_cos <= std::sin(kCutAngleTol))
      throw Error(ErrorCode::CutLocus, "a principal angle reaches pi/2");
    // (I - X X^T) Y (X^T Y)^{-1}, with the inverse taken from the SVD of X^T Y
    const Eigen::MatrixXd minv = msvd.matrixV() *
                                 msvd.singularValues().cwiseInverse().asDiagonal() *
                                 msvd.matrixU().transpose();
    const Eigen::MatrixXd a = (y.coords - x.coords * m) * minv;
    Eigen::JacobiSVD<Eigen::MatrixXd> asvd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::ArrayXd theta = asvd.singularValues().array().atan();
    if (!(std::sqrt(theta.square().sum()) < injectivity_radius()))
      throw Error(ErrorCode::CutLocus, "distance reaches the injectivity radius");
    Eigen::MatrixXd h =
        asvd.matrixU() * theta.matrix().asDiagonal() * asvd.matrixV().transpose();
    h -= x.coords * (x.coords.transpose() * h);
    return {x.coords, h};
  }

  /// Principal angles theta_k = 2 asin(||X u_k - Y v_k|| / 2) from the SVD of
  /// X^T Y; accurate for small and large angles alike.
  Eigen::VectorXd principal_angles(const Point& x, const Point& y) const {
    check_point(x);
    check_point(y);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(x.coords.transpose() * y.coords,
                                          Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::MatrixXd diff = x.coords * svd.matrixU() - y.coords * svd.matrixV();
    Eigen::VectorXd theta(p_);
    for (int k = 0; k < p_; ++k)
      theta(k) = 2.0 * std::asin(std::min(1.0, 0.5 * diff.col(k).norm()));
    return theta;
  }

  double dist(const Point& x, const Point& y) const { return principal_angles(x, y).norm(); }

  TangentVector project_tangent(const Point& x, const Eigen::MatrixXd& w) const {
    check_point(x);
    detail::require_shape(w, rows(), cols(), "ambient matrix");
    return {x.coords, w - x.coords * (x.coords.transpose() * w)};
  }

  Point random_point(Rng& rng) const {
    return {orthonormalize(detail::gaussian(d_, p_, rng))};
  }

  bool contains(const Point& x, double tol = 1e-10) const {
    if (x.coords.rows() != d_ || x.coords.cols() != p_) return false;
    return (x.coords.transpose() * x.coords - Eigen::MatrixXd::Identity(p_, p_))
               .cwiseAbs()
               .maxCoeff() <= tol;
  }

  /// Thin QR with the sign of R's diagonal fixed positive, so a nearly
  /// orthonormal input is moved as little as possible.
  static Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& a) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
    const Eigen::MatrixXd r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index k = 0; k < a.cols(); ++k)
      if (r(k, k) < 0.0) q.col(k) *= -1.0;
    return q;
  }

 private:
  int d_;
  int p_;
};

/// Runtime choice among the concrete geometries.
using AnyManifold = std::variant<Euclidean, Sphere, Grassmann>;

inline AnyManifold make_manifold(ManifoldKind kind, int d, int p = 1) {
  switch (kind) {
    case ManifoldKind::Euclidean: return Euclidean(d);
    case ManifoldKind::Sphere: return Sphere(d);
    case ManifoldKind::Grassmann: return Grassmann(d, p);
  }
  throw Error(ErrorCode::ConfigError, "unknown manifold kind");
}

}  // namespace rdiff

namespace rdiff {

/// Point at geodesic distance at most `radius` from `center`, with the
/// distance drawn uniformly in [0, radius]. Samples from a ball of radius
/// D/2 are pairwise within D.
template <class M>
Point random_in_ball(const M& m, const Point& center, double radius, Rng& rng) {
  const double r = radius * rng.uniform();
  return m.exp(center, m.random_tangent(center, r, rng));
}

}  // namespace rdiff
