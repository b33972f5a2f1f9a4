#ifndef CFT_FIELD_HPP
#define CFT_FIELD_HPP

#include <memory>
#include <vector>

#include "cft/lattice.hpp"
#include "cft/target.hpp"

namespace cft {

/// A section of the configuration bundle M x N: one target-chart point per
/// lattice site. Values are stored site-major, component-minor.
class FieldConfig {
 public:
  FieldConfig(LatticePtr lat, TargetPtr target, std::vector<double> values);
  static FieldConfig constant(LatticePtr lat, TargetPtr target, const Vec& y0);

  const LorentzianLattice& lattice() const { return *lat_; }
  LatticePtr lattice_ptr() const { return lat_; }
  const TargetGeometry& target() const { return *tgt_; }
  TargetPtr target_ptr() const { return tgt_; }
  int dim() const { return tgt_->dim(); }

  const std::vector<double>& values() const { return values_; }
  const double* site(std::size_t idx) const { return values_.data() + idx * dim(); }
  Vec site_vec(std::size_t idx) const {
    return Vec(site(idx), site(idx) + dim());
  }

  bool same_shape(const FieldConfig& other) const {
    return lat_ == other.lat_ && tgt_ == other.tgt_;
  }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  std::vector<double> values_;
};

/// Compactly supported tangent vector along a section: per-site components
/// X^i(x). Support is the exact nonzero set.
class Variation {
 public:
  Variation(LatticePtr lat, TargetPtr target, std::vector<double> components);
  static Variation zero(LatticePtr lat, TargetPtr target);

  const LorentzianLattice& lattice() const { return *lat_; }
  LatticePtr lattice_ptr() const { return lat_; }
  const TargetGeometry& target() const { return *tgt_; }
  TargetPtr target_ptr() const { return tgt_; }
  int dim() const { return tgt_->dim(); }

  const std::vector<double>& components() const { return comp_; }
  const double* site(std::size_t idx) const { return comp_.data() + idx * dim(); }
  Vec site_vec(std::size_t idx) const { return Vec(site(idx), site(idx) + dim()); }

  SiteSet support() const;

  Variation scaled(double t) const;
  Variation plus(const Variation& other) const;
  double max_abs() const;

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  std::vector<double> comp_;
};

/// Pullback connection coefficients {h}^i_jk(phi(x)) along a section.
class PullbackConnection {
 public:
  explicit PullbackConnection(const FieldConfig& base);
  /// Gamma_phi(X, Y)^i(x) = {h}^i_jk(phi(x)) X^j(x) Y^k(x); zero where either
  /// argument vanishes, so disjoint supports give the zero field exactly.
  Variation apply(const Variation& X, const Variation& Y) const;
  const std::vector<double>& coefficients() const { return coeff_; }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  std::vector<double> coeff_;  // site-major, [(i*n+j)*n+k]
};

/// u_phi: X(x) = exp^-1_{phi0(x)}(psi(x)). Throws "sections not
/// chart-compatible" naming the first failing site.
Variation chart_forward(const FieldConfig& phi0, const FieldConfig& psi);

/// u_phi^-1: psi(x) = exp_{phi0(x)}(X(x)); equals phi0 off supp(X) exactly.
FieldConfig chart_backward(const FieldConfig& phi0, const Variation& X);

/// Exact set {x : phi(x) != psi(x)}.
SiteSet relative_support(const FieldConfig& phi, const FieldConfig& psi);

/// u_{phi1 phi2} = u_phi1 o u_phi2^-1 acting on variations at phi2.
Variation transition_map(const FieldConfig& phi1, const FieldConfig& phi2, const Variation& X);

struct InterpolationResult {
  FieldConfig glued;
  int n_steps = 1;
  /// family[k][l] interpolates with phi_(n,0) = phi1, phi_(0,n) = phi_m1,
  /// phi_(n,n) = glued; built by composing per-step exponential flows.
  std::vector<std::vector<FieldConfig>> family;
};

/// Gluing of Lemma-style interpolation: requires disjoint relative supports.
InterpolationResult interpolate_sections(const FieldConfig& phi0, const FieldConfig& phi1,
                                         const FieldConfig& phi_m1);

}  // namespace cft

#endif
