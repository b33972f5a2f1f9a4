#ifndef CFT_VARIATIONAL_HPP
#define CFT_VARIATIONAL_HPP

#include <memory>
#include <utility>
#include <vector>

#include "cft/density.hpp"
#include "cft/field.hpp"

namespace cft {

/// Discrete derivative stencils on multi-component site-major arrays.
///
/// Two time modes coexist:
///   OneSided - centered on interior rows, one-sided at the two boundary
///              rows; used for jets of sections, actions and kernels.
///   ZeroExt  - centered with zero extension beyond the time window; its
///              plain transpose is its negation, which makes the assembled
///              operator an exactly symmetric matrix. Used by the solver.
/// Space is periodic centered in both modes.
enum class TimeMode { OneSided, ZeroExt };

std::vector<double> dt_apply(const LorentzianLattice& lat, int ncomp,
                             const std::vector<double>& u, TimeMode mode);
/// Exact plain-sum transpose of dt_apply: sum_p (dt u)_p w_p = sum_p u_p (dt^T w)_p.
std::vector<double> dt_transpose(const LorentzianLattice& lat, int ncomp,
                                 const std::vector<double>& w, TimeMode mode);
std::vector<double> dx_apply(const LorentzianLattice& lat, int ncomp,
                             const std::vector<double>& u);
std::vector<double> dx_transpose(const LorentzianLattice& lat, int ncomp,
                                 const std::vector<double>& w);

/// First jets of a section (values plus one-sided-in-time derivatives).
struct JetField {
  std::vector<double> y;   // site-major values
  std::vector<double> yt;  // d_t
  std::vector<double> yx;  // d_x
};
JetField jets_of(const FieldConfig& phi, TimeMode mode = TimeMode::OneSided);

/// Euler-Lagrange kernel E_i(x) = dL/dy^i - d_mu(dL/dy^i_mu) as the exact
/// transpose of the discrete action's first variation. The first and last
/// two rows are contaminated by one-sided time stencils.
struct ELKernel {
  LatticePtr lat;
  TargetPtr tgt;
  std::vector<double> comp;  // covector, pairs with variations through vol
  int interior_lo = 0;       // first clean row
  int interior_hi = 0;       // last clean row

  double max_interior_abs() const;
  bool row_is_interior(int it) const { return it >= interior_lo && it <= interior_hi; }
};

/// Coefficient blocks of a second-order bilinear form
///   B(X,Y) = sum_p vol [ a_ji X^j Y^i + b^mu_ji X^j (d_mu Y)^i
///                       + c^mu_ji (d_mu X)^j Y^i + m^munu_ji (d_mu X)^j (d_nu Y)^i ].
/// Strides: a[idx][j*n+i], b/c[idx][(mu*n+j)*n+i], m[idx][(mu*n+j)*2n+(nu*n+i)].
struct OperatorBlocks {
  int n = 0;
  std::vector<double> a, b, c, m;
};

enum class FiberMetric { TargetMetric, Euclidean };

class LinearizedOperator;

/// Generalized Lagrangian over a first-order density: evaluation against a
/// cutoff, Euler-Lagrange kernels, Hessian forms and the linearized operator.
class GeneralizedLagrangian {
 public:
  explicit GeneralizedLagrangian(DensityPtr density);

  const LagrangianDensity& density() const { return *density_; }
  DensityPtr density_ptr() const { return density_; }

  /// integral of f * lambda(j^1 phi) dmu_g.
  double evaluate_action(const std::vector<double>& cutoff, const FieldConfig& phi) const;

  ELKernel el_kernel(const FieldConfig& phi) const;

  /// Covector kernel of the first variation smeared with window w: the exact
  /// transpose of t -> evaluate_action(w, phi + t X) at t = 0.
  std::vector<double> first_variation_kernel(const FieldConfig& phi,
                                             const std::vector<double>& w) const;

  /// Coordinate Hessian apply with window w (one-sided stencils):
  /// sum_p vol X (hessian_apply(w, Y)) = windowed coordinate second variation.
  std::vector<double> hessian_apply(const FieldConfig& phi, const std::vector<double>& w,
                                    const Variation& Y) const;
  double hessian_form(const FieldConfig& phi, const std::vector<double>& w, const Variation& X,
                      const Variation& Y) const;

  /// Chart (geodesic) second variation at f == 1: coordinate Hessian minus
  /// the E . Gamma(X,Y) term from the second-order Taylor of exp.
  double chart_hessian_form(const FieldConfig& phi, const Variation& X, const Variation& Y) const;

  /// Third chart-variation kernel tau with a free first slot:
  /// d^3/ds dt1 dt2 action(exp_phi(s Z + t1 V + t2 W)) = sum_p vol tau_i Z^i.
  /// Requires third density partials.
  std::vector<double> third_variation_kernel(const FieldConfig& phi, const Variation& V,
                                             const Variation& W) const;

  /// Analytic coordinate derivative of the EL kernel along X (one-sided
  /// stencils), equal to hessian_apply with w == 1.
  std::vector<double> delta_el_apply(const FieldConfig& phi, const Variation& X) const;

  LinearizedOperator linearize(const FieldConfig& phi,
                               FiberMetric fiber = FiberMetric::TargetMetric) const;

  /// (analytic, numeric) pairing of the EL kernel with X versus a Richardson
  /// finite difference of the action along chart_backward(phi, t X). The
  /// cutoff must be identically 1 within stencil reach of supp(X).
  std::pair<double, double> directional_derivative_check(const std::vector<double>& cutoff,
                                                         const FieldConfig& phi,
                                                         const Variation& X) const;

 private:
  DensityPtr density_;
};

/// Second-order operator D_phi = -h# o delta E(L)_phi with the geodesic-chart
/// correction folded into the zeroth-order block. apply() uses the
/// solver-compatible stencils (zero extension, compact flux form for the
/// principal part) and is exactly self-adjoint for the vol x h pairing.
class LinearizedOperator {
 public:
  LinearizedOperator(const GeneralizedLagrangian& gl, const FieldConfig& phi, FiberMetric fiber);
  /// Assembly bypass for specialized block constructions (same contracts).
  LinearizedOperator(const GeneralizedLagrangian& gl, const FieldConfig& phi, FiberMetric fiber,
                     OperatorBlocks blocks);

  const LorentzianLattice& lattice() const { return *lat_; }
  LatticePtr lattice_ptr() const { return lat_; }
  TargetPtr target_ptr() const { return tgt_; }
  const FieldConfig& base() const { return base_; }
  int dim() const { return blocks_.n; }
  FiberMetric fiber_metric() const { return fiber_; }

  const OperatorBlocks& blocks() const { return blocks_; }
  const std::vector<double>& hinv() const { return hinv_; }  // per-site n x n
  const std::vector<double>& hmat() const { return hmat_; }

  Variation apply(const Variation& X) const;

  /// sigma2[idx][(mu*2+nu)*n*n + i*n + j] = h^{ik} m^{mu nu}_{kj}; exactly the
  /// stored principal coefficients, not re-derived from the stencil.
  std::vector<double> principal_symbol() const;

  struct NHReport {
    bool ok = false;
    double factor = 0.0;         // site-averaged scale c
    double max_deviation = 0.0;  // max |sigma2 - c(x) g^-1 x id| over sites
    std::vector<double> site_factor;
  };
  NHReport is_normally_hyperbolic(double tol = 1e-10) const;

  /// <X, Y>_h = sum vol h_ij X^i Y^j with the fiber metric of this operator.
  double pair_h(const Variation& X, const Variation& Y) const;

  /// Directional derivative of the assembled operator along X (analytic,
  /// needs third density partials): an operator-valued perturbation.
  struct Delta {
    LatticePtr lat;
    TargetPtr tgt;
    OperatorBlocks dblocks;
    std::vector<double> dhinv;
    const LinearizedOperator* parent = nullptr;
    Variation apply(const Variation& Y) const;
  };
  Delta directional_derivative(const Variation& X) const;

 private:
  friend struct GreenMarch;
  GeneralizedLagrangian gl_;
  LatticePtr lat_;
  TargetPtr tgt_;
  FieldConfig base_;
  FiberMetric fiber_;
  OperatorBlocks blocks_;
  std::vector<double> hinv_, hmat_;
  JetField jets_;
};

/// P-apply shared by operator and form code: mode selects the stencil family
/// (ZeroExt uses the compact flux form for the m-blocks).
std::vector<double> blocks_apply(const LorentzianLattice& lat, const OperatorBlocks& blocks,
                                 const std::vector<double>& Y, TimeMode mode);

}  // namespace cft

#endif
