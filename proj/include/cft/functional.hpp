#ifndef CFT_FUNCTIONAL_HPP
#define CFT_FUNCTIONAL_HPP

#include <complex>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "cft/field.hpp"
#include "cft/variational.hpp"

namespace cft {

using CValue = std::complex<double>;
using CKernel = std::vector<CValue>;  // covector field, pairs through vol

enum class FunctionalClass { Generic, Regular, Local, Microlocal };

/// An observable over configuration space. Derivatives follow the geodesic
/// chart: kernel1 is the covector of d/dt F(exp_phi(t X)) and kernel2 the
/// bilinear chart Hessian (it includes the second-order Taylor of exp, so on
/// curved targets even coordinate-linear functionals have a nonzero kernel2
/// concentrated on the diagonal).
class Functional {
 public:
  virtual ~Functional() = default;

  virtual LatticePtr lattice_ptr() const = 0;
  virtual TargetPtr target_ptr() const = 0;

  virtual CValue evaluate(const FieldConfig& phi) const = 0;

  virtual bool has_kernel1() const { return false; }
  virtual CKernel kernel1(const FieldConfig& phi) const;

  virtual bool has_kernel2() const { return false; }
  virtual CValue kernel2_form(const FieldConfig& phi, const Variation& X,
                              const Variation& Y) const;
  /// Exact transpose of kernel2_form in the second slot:
  /// kernel2_form(X, Y) = sum vol kernel2_apply(X)_i Y^i.
  virtual CKernel kernel2_apply(const FieldConfig& phi, const Variation& X) const;

  virtual FunctionalClass declared_class() const { return FunctionalClass::Generic; }
  virtual std::optional<SiteSet> declared_support() const { return std::nullopt; }

  int dim() const { return target_ptr()->dim(); }

 protected:
  [[noreturn]] static void missing_kernels();
};

using FunctionalPtr = std::shared_ptr<const Functional>;

/// Pairing sum vol k_i X^i of a covector kernel with a variation.
CValue pair_kernel(const LorentzianLattice& lat, const CKernel& k, const Variation& X);

// -------------------------------------------------------------------------
// builtin library

FunctionalPtr make_constant_functional(LatticePtr lat, TargetPtr tgt, CValue c);
FunctionalPtr make_unit_functional(LatticePtr lat, TargetPtr tgt);

/// F(phi) = sum vol f_i(x) phi^i(x) for a fixed smearing covector f.
FunctionalPtr make_linear_smeared(LatticePtr lat, TargetPtr tgt, std::vector<double> smearing);

/// Point evaluation phi^comp(site), i.e. linear with a delta/vol smearing.
FunctionalPtr make_point_probe(LatticePtr lat, TargetPtr tgt, SitePoint site, int comp);

/// F(phi) = sum vol w(x) (phi^comp(x))^power, power in {1, 2, 3}.
FunctionalPtr make_monomial_smeared(LatticePtr lat, TargetPtr tgt, std::vector<double> weight,
                                    int comp, int power);

/// Windowed action F(phi) = integral window * lambda(j^1 phi) dmu.
/// smooth_window=false marks a characteristic-function cutoff, which is local
/// but carries boundary spikes in kernel1.
FunctionalPtr make_action_functional(LatticePtr lat, TargetPtr tgt, DensityPtr density,
                                     std::vector<double> window, bool smooth_window = true);

/// Evaluation-only functional 1/(1 + sup_M |phi|^2); not differentiable.
FunctionalPtr make_sup_functional(LatticePtr lat, TargetPtr tgt);

/// On-shell ideal element F(phi) = sum vol X^i_phi E(L)_phi_i with
/// X_phi = X_fixed + affine_weight * (phi - affine_center) when the affine
/// part is enabled.
FunctionalPtr make_onshell_element(DensityPtr density, LatticePtr lat, TargetPtr tgt,
                                   Variation x_fixed);
FunctionalPtr make_onshell_element_affine(DensityPtr density, LatticePtr lat, TargetPtr tgt,
                                          std::vector<double> affine_weight, Vec affine_center);

// algebra operations (support combines as the union)
FunctionalPtr operator_sum(FunctionalPtr F, FunctionalPtr G);
FunctionalPtr operator_scale(CValue z, FunctionalPtr F);
FunctionalPtr operator_product(FunctionalPtr F, FunctionalPtr G);
FunctionalPtr operator_conjugate(FunctionalPtr F);

/// Smooth outer function with supplied partial-derivative oracles.
struct SmoothMap {
  std::function<CValue(const std::vector<CValue>&)> value;
  std::function<CValue(int, const std::vector<CValue>&)> d1;
  std::function<CValue(int, int, const std::vector<CValue>&)> d2;
};
FunctionalPtr smooth_compose(SmoothMap psi, std::vector<FunctionalPtr> children);

/// exp(1 - chi(S^2)) over a windowed action S: regular but not local.
/// chi is the smooth step equal to 1 below `inner` and 0 above `outer`.
FunctionalPtr make_regfunc(LatticePtr lat, TargetPtr tgt, DensityPtr density,
                           std::vector<double> window, double inner = 0.5, double outer = 1.0);

/// chi bounds placed so that the four evaluation points of the additivity
/// test for the disjoint pair (X1, Xm1) straddle the transition of chi; the
/// resulting regfunc then fails additivity by an O(1) margin.
std::pair<double, double> regfunc_bounds_for_pair(const DensityPtr& density,
                                                  const FieldConfig& phi0, const Variation& X1,
                                                  const Variation& Xm1);

// -------------------------------------------------------------------------
// operations on functionals

/// Union over sample sections of the nonzero set of kernel1, or of
/// finite-difference probes when kernels are absent.
SiteSet probe_support(const Functional& F, const std::vector<FieldConfig>& samples,
                      double probe_amplitude = 1e-3);

/// nabla^2 F = kernel2 + kernel1(Gamma_phi(X, Y)).
CValue covariant_hessian(const Functional& F, const FieldConfig& phi,
                         const PullbackConnection& conn, const Variation& X, const Variation& Y);

struct AdditivityReport {
  CValue lhs{}, rhs{};
  double deviation = 0.0;
  double scale = 1.0;
  bool passed = false;
};

/// phi0-additivity F(X1 + Xm1) = F(X1) - F(0) + F(Xm1) through the chart at
/// phi0. Supports of X1 and Xm1 must be disjoint.
AdditivityReport additivity_test(const Functional& F, const FieldConfig& phi0, const Variation& X1,
                                 const Variation& Xm1, double tol = 1e-10);

/// Global additivity through the glued section of interpolate_sections:
/// F(glued) = F(phi1) - F(phi0) + F(phi_m1).
AdditivityReport global_additivity_test(const Functional& F, const FieldConfig& phi1,
                                        const FieldConfig& phi0, const FieldConfig& phi_m1,
                                        double tol = 1e-10);

struct ClassReport {
  bool regular = false;
  bool local = false;
  bool microlocal_surrogate = false;
  bool boundary_singular = false;
  FunctionalClass tag = FunctionalClass::Generic;
  double max_offdiagonal = 0.0;
  double max_kernel_jump = 0.0;
};

/// Discrete class tags: "local" means the probed Hessian vanishes beyond the
/// stencil-thickened diagonal (site distance > 2); the microlocal surrogate
/// additionally requires an everywhere-defined kernel1 with no adjacent-site
/// jumps above ratio 10.
ClassReport classify(const Functional& F, const std::vector<FieldConfig>& samples,
                     double tol = 1e-8);

/// Density reconstruction theta[phi](x) = integral_0^1 f^(1)_{phi0}[tX](X)(x) dt
/// by 16-point Gauss-Legendre, with X = chart_forward(phi0, phi). Satisfies
/// integrate(theta) = F(phi) - F(phi0) up to quadrature error.
std::vector<double> reconstruct_density(const Functional& F, const FieldConfig& phi0,
                                        const FieldConfig& phi);

}  // namespace cft

#endif
