#ifndef CFT_DENSITY_HPP
#define CFT_DENSITY_HPP

#include <memory>
#include <string>
#include <vector>

#include "cft/lattice.hpp"
#include "cft/target.hpp"

namespace cft {

/// First-order Lagrangian density lambda(x, y, y_mu) with partial-derivative
/// oracles. mu = 0 is time, mu = 1 is space. Output layouts (n = components,
/// M = 2n):
///   d_y          out[i]
///   d_ymu        out[mu*n+i]
///   d2_yy        out[i*n+j]
///   d2_ymu_y     out[(mu*n+i)*n+j]           = d2 / dy^i_mu dy^j
///   d2_ymu_ymu   out[(mu*n+i)*M+(nu*n+j)]    = d2 / dy^i_mu dy^j_nu
///   d3_yyy       out[(i*n+j)*n+k]
///   d3_ymu_yy    out[((mu*n+i)*n+j)*n+k]
///   d3_ymu_ymu_y out[((mu*n+i)*M+(nu*n+j))*n+k]
class LagrangianDensity {
 public:
  struct Jet {
    const double* y;    // n
    const double* ymu;  // 2n, ymu[mu*n+i]
  };

  virtual ~LagrangianDensity() = default;

  virtual int components() const = 0;
  virtual int order() const { return 1; }
  virtual std::string name() const = 0;
  virtual bool has_third_partials() const { return false; }

  virtual double eval(const LorentzianLattice& lat, std::size_t idx, const Jet& jet) const = 0;
  virtual void d_y(const LorentzianLattice&, std::size_t, const Jet&, double* out) const = 0;
  virtual void d_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* out) const = 0;
  virtual void d2_yy(const LorentzianLattice&, std::size_t, const Jet&, double* out) const = 0;
  virtual void d2_ymu_y(const LorentzianLattice&, std::size_t, const Jet&, double* out) const = 0;
  virtual void d2_ymu_ymu(const LorentzianLattice&, std::size_t, const Jet&,
                          double* out) const = 0;

  virtual void d3_yyy(const LorentzianLattice&, std::size_t, const Jet&, double* out) const;
  virtual void d3_ymu_yy(const LorentzianLattice&, std::size_t, const Jet&, double* out) const;
  virtual void d3_ymu_ymu_y(const LorentzianLattice&, std::size_t, const Jet&, double* out) const;
  virtual void d3_ymu_ymu_ymu(const LorentzianLattice&, std::size_t, const Jet&,
                              double* out) const;
};

using DensityPtr = std::shared_ptr<const LagrangianDensity>;

/// lambda = 1/2 g^{mu nu} delta_ij y^i_mu y^j_nu + 1/2 mass^2 |y|^2.
DensityPtr make_free_scalar_density(int n, double mass = 0.0);

/// lambda = 1/4 g^{mu nu} h_ij(y) y^i_mu y^j_nu. The 1/4 fixes the
/// linearized-operator normalization: principal symbol (1/2) g^{-1} x id.
DensityPtr make_wave_map_density(TargetPtr target);

/// lambda = c (order 0).
DensityPtr make_constant_density(int n, double c);

/// lambda = 1/2 (y^0_t)^2; not normally hyperbolic.
DensityPtr make_time_only_density();

/// lambda = coeff^mu_i y^i_mu with constant coefficients: a total divergence,
/// hence a trivial Lagrangian (its action over a constant cutoff sums to a
/// boundary term).
DensityPtr make_divergence_density(int n, std::vector<double> coeff);

/// lambda = 1/2 strength * window(x) * |y|^2, window given per site.
DensityPtr make_mass_window_density(int n, std::vector<double> window, double strength);

/// Pointwise sum of densities with equal component counts.
DensityPtr make_sum_density(std::vector<DensityPtr> terms);

/// Builtins by name: "free_scalar", "kg_mass" (uses mass), "wave_map".
DensityPtr make_density(const std::string& name, double mass, TargetPtr target);

}  // namespace cft

#endif
