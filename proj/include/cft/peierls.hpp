#ifndef CFT_PEIERLS_HPP
#define CFT_PEIERLS_HPP

#include <map>
#include <optional>
#include <string>

#include "cft/functional.hpp"
#include "cft/green.hpp"

namespace cft {

struct BracketReport {
  double value = 0.0;
  double retarded_product = 0.0;
  double advanced_product = 0.0;
  /// |(R - A) - (R(F,G) - R(G,F))| / scale, the equivalence of bracket forms.
  double form_equivalence_dev = 0.0;
  bool support_check = false;
  std::optional<bool> lagrangian_locality_check;
  double scale = 1.0;  // max(1, |R|, |A|)
  std::map<std::string, double> timings;
};

/// Green operators of the linearized Lagrangian at a background, shared by
/// the bracket operations.
struct BracketEngine {
  BracketEngine(const GeneralizedLagrangian& L, const FieldConfig& phi,
                FiberMetric fiber = FiberMetric::TargetMetric);
  LinearizedOperator op;
  GreenOperator retarded;
  GreenOperator advanced;

  /// script-G applied to a complex covector kernel.
  struct Solved {
    Variation re, im;
  };
  Solved apply(GreenKind kind, const CKernel& k) const;
  CValue pair(const CKernel& f, const Solved& w) const;
};

CValue retarded_product(const BracketEngine& eng, const Functional& F, const Functional& G,
                        const FieldConfig& phi);
CValue advanced_product(const BracketEngine& eng, const Functional& F, const Functional& G,
                        const FieldConfig& phi);

double retarded_product(const GeneralizedLagrangian& L, const Functional& F, const Functional& G,
                        const FieldConfig& phi);

/// Full bracket with the support-invariance verification (the bracket value
/// is unchanged by perturbing phi outside the causal hull of the supports)
/// and the R-A = R(F,G)-R(G,F) equivalence.
BracketReport peierls_bracket(const GeneralizedLagrangian& L, const Functional& F,
                              const Functional& G, const FieldConfig& phi,
                              bool do_support_check = true);

/// Analytic first-derivative kernel of phi -> {F,G}_L(phi); real functionals
/// only. Assembled from kernel2 of F, G and the propagator derivative.
std::vector<double> bracket_kernel1(const GeneralizedLagrangian& L, const Functional& F,
                                    const Functional& G, const FieldConfig& phi);

/// |{F,{G,H}} + {G,{H,F}} + {H,{F,G}}| with outer derivatives assembled
/// analytically.
double jacobi_residual(const GeneralizedLagrangian& L, const Functional& F, const Functional& G,
                       const Functional& H, const FieldConfig& phi);

/// |{F, G H} - G(phi) {F,H} - {F,G} H(phi)|.
double leibniz_check(const GeneralizedLagrangian& L, const Functional& F, const Functional& G,
                     const Functional& H, const FieldConfig& phi);

struct LocalityReport {
  double deviation = 0.0;
  double scale = 1.0;
  bool equal = false;
};

/// Brackets computed with two Lagrangians; throws when the declared
/// modification support meets the causal hull of supp(F), supp(G).
LocalityReport lagrangian_locality_check(const GeneralizedLagrangian& L1,
                                         const GeneralizedLagrangian& L2, const Functional& F,
                                         const Functional& G, const FieldConfig& phi,
                                         const SiteSet& modification_support, double tol = 1e-10);
LocalityReport locality_compare(const GeneralizedLagrangian& L1, const GeneralizedLagrangian& L2,
                                const Functional& F, const Functional& G, const FieldConfig& phi,
                                double tol = 1e-10);

/// The bracket as a functional of the background, exposing kernel1 through
/// the analytic assembly (and kernel2 when the propagator is
/// field-independent and the children have vanishing third derivatives).
FunctionalPtr make_bracket_functional(const GeneralizedLagrangian& L, FunctionalPtr F,
                                      FunctionalPtr G);

/// Causal hull O of the supports of F and G (declared supports preferred,
/// probe fallback).
SiteSet bracket_causal_hull(const Functional& F, const Functional& G, const FieldConfig& phi);

}  // namespace cft

#endif
