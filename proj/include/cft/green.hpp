#ifndef CFT_GREEN_HPP
#define CFT_GREEN_HPP

#include <vector>

#include "cft/variational.hpp"

namespace cft {

enum class GreenKind { Retarded, Advanced, Causal };

/// Retarded/advanced Green operators of a normally hyperbolic linearized
/// operator by explicit causal time stepping, plus their difference. The
/// march inverts exactly the discrete operator D = LinearizedOperator::apply:
/// the row-t equation determines the next row, with zero data before (after)
/// the first (last) source row. Retarded solutions vanish identically on the
/// first time row, advanced ones on the last; together with the exact
/// symmetry of D this makes G+ and G- exact adjoints for the h-pairing.
///
/// The operator must outlive the GreenOperator.
class GreenOperator {
 public:
  GreenOperator(const LinearizedOperator& op, GreenKind kind);

  GreenKind kind() const { return kind_; }
  const LinearizedOperator& op() const { return *op_; }

  /// Sign of the principal time coefficient of D; the free-scalar impulse
  /// response approaches sign * (1/2) inside the cone.
  double principal_time_sign() const { return time_sign_; }

  /// Plain Green operator on vector sources: D (apply_vector v) = v on the
  /// marched rows.
  Variation apply_vector(const Variation& v) const;

  /// Density-weighted variant ("script G"): source is a covector field s_i
  /// pairing through vol; applies G[h# s]. Independent of the fiber metric
  /// used to assemble D.
  Variation apply_covector(const std::vector<double>& s) const;

  /// Dense kernel K[(p,i),(q,j)] with
  /// apply_covector(s)^i(p) = sum_qj K[(p,i),(q,j)] vol_q s_j(q).
  /// Refused above max_sites (memory gate).
  std::vector<double> dense_kernel(std::size_t max_sites = 4096) const;

 private:
  const LinearizedOperator* op_;
  GreenKind kind_;
  double time_sign_ = -1.0;
  int nt_, nx_, n_;
  // per-site solve matrices for the next-row unknown, both directions
  std::vector<double> minv_fwd_, minv_bwd_;

  std::vector<double> march(const std::vector<double>& rhs, bool forward) const;
  std::vector<double> solve_vector(const std::vector<double>& v) const;
};

/// d G^{kind}(X) applied to a vector source, per the propagator derivative
/// formulas: retarded/advanced give -G D'(X) G, the causal propagator
/// -G D'(X) G+ - G- D'(X) G.
Variation propagator_derivative_apply(const GreenOperator& retarded, const GreenOperator& advanced,
                                      const LinearizedOperator::Delta& dop, GreenKind kind,
                                      const Variation& source);

}  // namespace cft

#endif
