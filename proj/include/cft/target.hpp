#ifndef CFT_TARGET_HPP
#define CFT_TARGET_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cft {

using Vec = std::vector<double>;

class TargetGeometry;
using TargetPtr = std::shared_ptr<const TargetGeometry>;

/// Riemannian geometry of the typical fiber in a single chart: metric h,
/// Christoffel symbols, curvature and their y-derivatives, plus geodesics
/// and the exponential map. Coefficient layouts are row-major with the
/// leftmost index slowest:
///   metric      h[i*n+j]            =  h_ij
///   dmetric     dh[(k*n+i)*n+j]     =  d_k h_ij
///   d2metric    d2h[((l*n+k)*n+i)*n+j] = d_l d_k h_ij
///   christoffel G[(i*n+j)*n+k]      =  {h}^i_jk
///   dchristoffel dG[((l*n+i)*n+j)*n+k] = d_l {h}^i_jk
///   riemann     R[((k*n+i)*n+l)*n+j] =  R^k_ilj
class TargetGeometry {
 public:
  static std::shared_ptr<const TargetGeometry> flat(int n);
  static std::shared_ptr<const TargetGeometry> sphere2_stereographic();
  static std::shared_ptr<const TargetGeometry> builtin(const std::string& name);

  int dim() const { return dim_; }
  bool is_flat() const { return flat_; }
  const std::string& name() const { return name_; }

  bool in_chart(const Vec& y) const;

  void metric(const Vec& y, double* h) const { metric_(y, h); }
  void metric_inverse(const Vec& y, double* hinv) const;
  void dmetric(const Vec& y, double* dh) const { dmetric_(y, dh); }
  void d2metric(const Vec& y, double* d2h) const { d2metric_(y, d2h); }
  void d3metric(const Vec& y, double* d3h) const { d3metric_(y, d3h); }
  void christoffel(const Vec& y, double* G) const { christoffel_(y, G); }
  void dchristoffel(const Vec& y, double* dG) const { dchristoffel_(y, dG); }
  void riemann(const Vec& y, double* R) const { riemann_(y, R); }

  double h_norm(const Vec& y, const Vec& v) const;

  /// Geodesic distance a single damped-Newton shot handles reliably;
  /// interpolation step counts derive from it.
  double safe_step() const { return safe_step_; }
  int geodesic_steps() const { return geodesic_steps_; }

  /// Integrates the geodesic equation over unit parameter with fixed-step
  /// RK4. Throws "chart overflow" if the trajectory leaves the chart.
  Vec exp_map(const Vec& base, const Vec& v, int steps = 0) const;

  /// Directional derivative d/ds exp_map(base, v + s dir) at s=0.
  Vec exp_map_dv(const Vec& base, const Vec& v, const Vec& dir) const;

  /// Damped-Newton shooting inverse of exp_map. exp_inverse(y, y) is exactly
  /// zero; throws "outside injectivity radius" when Newton fails.
  Vec exp_inverse(const Vec& base, const Vec& target, double tol = 1e-12) const;

 private:
  TargetGeometry() = default;

  using MatFn = std::function<void(const Vec&, double*)>;

  int dim_ = 0;
  bool flat_ = false;
  std::string name_;
  double safe_step_ = 1e30;
  int geodesic_steps_ = 64;
  std::function<bool(const Vec&)> chart_domain_;
  MatFn metric_, dmetric_, d2metric_, d3metric_, christoffel_, dchristoffel_, riemann_;

  void geodesic_rhs(const double* y, const double* u, double* dy, double* du) const;
};

}  // namespace cft

#endif
