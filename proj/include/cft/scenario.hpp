#ifndef CFT_SCENARIO_HPP
#define CFT_SCENARIO_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cft/peierls.hpp"
#include "cft/wavemaps.hpp"

namespace cft {

/// Specification of one functional in a scenario.
struct FunctionalSpec {
  std::string name;
  std::string kind;  // linear | monomial | point | action_window | regfunc
  int component = 0;
  int power = 1;
  int center_t = 0, center_x = 0;
  int radius_t = 3, radius_x = 3;
  double amplitude = 1.0;
  std::string smearing_file;  // optional JSON array, site-major
};

/// Parsed scenario configuration: a nested key-value text file ([section]
/// headers, key = value lines) or the same content as JSON.
struct ScenarioConfig {
  // lattice
  int n_t = 40, n_x = 32;
  double dt = 0.1, dx = 0.125;
  std::string metric = "minkowski";
  std::vector<double> gxx_profile;

  std::string target = "flat(1)";
  std::string lagrangian = "free_scalar";
  double mass = 0.0;

  std::string background = "constant";  // constant | plane_wave | geodesic | random_bump
  double background_amplitude = 0.0;

  std::vector<FunctionalSpec> functionals;

  std::uint64_t seed = 42;
  int threads = 0;
  std::string preset = "flat-reduction";
  std::vector<int> resolutions = {32, 64};
  std::string quantity = "retarded_kernel";  // converge: retarded_kernel | el_residual | jacobi
  bool dump_kernel = false;

  static ScenarioConfig parse_file(const std::string& path);
  static ScenarioConfig parse_ini_text(const std::string& text);
  static ScenarioConfig parse_json_text(const std::string& text);
  static ScenarioConfig default_free_scalar();

  void validate() const;  // throws with the offending key in the message
};

struct BuiltScenario {
  LatticePtr lattice;
  TargetPtr target;
  DensityPtr density;
  FieldConfig background;
  std::vector<FunctionalPtr> functionals;
  std::vector<std::string> functional_names;
};
BuiltScenario build_scenario(const ScenarioConfig& cfg);

/// Runs one subcommand; writes report.json (and CSV tables) under out_dir.
/// Returns 0 on success, 2 on verification failure, 1 on error.
int run_command(const std::string& command, const ScenarioConfig& cfg, const std::string& out_dir);

/// The verification battery behind `verify`: one named pass/fail line per
/// invariant. Deterministic for a fixed seed.
struct VerifyResult {
  struct Check {
    std::string name;
    bool passed = false;
    double residual = 0.0;
    double tolerance = 0.0;
  };
  std::vector<Check> checks;
  bool all_passed = true;
};
VerifyResult run_verify_suite(const ScenarioConfig& cfg);

/// Serialized verify report (byte-identical for identical config + seed).
std::string verify_report_json(const ScenarioConfig& cfg, const VerifyResult& res);

struct ConvergenceRow {
  int resolution = 0;
  double error = 0.0;
  std::string rate;  // number, "exact", or "-" for the first row
};
std::vector<ConvergenceRow> run_convergence(const ScenarioConfig& cfg);

}  // namespace cft

#endif
