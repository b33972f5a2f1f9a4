#ifndef CFT_WAVEMAPS_HPP
#define CFT_WAVEMAPS_HPP

#include <map>
#include <string>
#include <vector>

#include "cft/peierls.hpp"

namespace cft {

/// The sigma-model example wired end to end: target geometry, the wave-map
/// density and its specialized Euler-Lagrange / linearized assemblies built
/// from closed-form target data rather than the density's partial oracles.
struct WaveMapModel {
  LatticePtr lattice;
  TargetPtr target;
  GeneralizedLagrangian lagrangian;

  WaveMapModel(LatticePtr lat, TargetPtr tgt)
      : lattice(lat), target(tgt), lagrangian(make_wave_map_density(tgt)) {}
};

/// EL kernel from the displayed sigma-model formula, assembled directly from
/// h and its derivatives (independent implementation of the generic
/// el_kernel path; identical discrete calculus).
ELKernel wave_map_el(const WaveMapModel& model, const FieldConfig& phi);

/// Coefficient blocks of the linearized operator from h, dh, d2h and the
/// Christoffel data of the target.
OperatorBlocks wave_map_blocks(const WaveMapModel& model, const FieldConfig& phi);

/// Specialized linearized operator; agrees with the generic
/// lagrangian.linearize(phi) on random variations.
LinearizedOperator wave_map_linearized(const WaveMapModel& model, const FieldConfig& phi);

/// Residual of the vanishing of the symmetrized mixed (grad X . Y) block of
/// the second variation in covariant variables, after absorbing the
/// metric-compatibility divergence. Zero for wave maps up to roundoff.
double wave_map_mixed_block_residual(const WaveMapModel& model, const FieldConfig& phi);

/// phi(t, x) = exp_base(t dt v): a time geodesic of the target, constant in x.
FieldConfig time_geodesic_field(LatticePtr lat, TargetPtr tgt, const Vec& base, const Vec& v);

struct ScenarioRow {
  std::map<std::string, double> values;
};

struct WaveMapScenarioResult {
  std::string preset;
  bool passed = false;
  std::vector<BracketReport> reports;
  std::vector<ScenarioRow> convergence;
  std::string summary;
};

/// Presets: "flat-reduction", "geodesic-background-bracket", "curvature-on".
WaveMapScenarioResult run_wavemap_scenario(const std::string& preset, std::uint64_t seed);

}  // namespace cft

#endif
